"""
The command-line workflow
=========================

Everything the library does is also reachable from the ``samglm`` command.
This script drives it in-process on a small problem: simulate, fit two
chains, then predict, evaluate and diagnose. Run it from any directory;
outputs go to a temporary folder.
"""
import os
import tempfile

from samglm import io
from samglm.cli import main

work = tempfile.mkdtemp(prefix="samglm-demo-")
sim = os.path.join(work, "sim.toml")
fit = os.path.join(work, "fit.toml")
with open(sim, "w") as fh:
    fh.write("[simulate]\nrows = 16\ncols = 16\nseed = 4\n")
with open(fit, "w") as fh:
    fh.write("[run]\nseed = 1\nchains = 2\ncheckpoint_every = 100\n"
             "[mcmc]\niterations = 400\nwarmup = 200\n[samglm]\nK = 3\n")

data = os.path.join(work, "data")
out = os.path.join(work, "fit")
main(["simulate", sim, "--out", data])
main(["fit", fit, "--data", os.path.join(data, "train"), "--out", out])
traces = [os.path.join(out, f"chain{i}.jsonl") for i in range(2)]
main(["predict", *traces, "--data", os.path.join(data, "test"), "--out",
      os.path.join(work, "predict")])
main(["evaluate", *traces, "--train", os.path.join(data, "train"), "--test",
      os.path.join(data, "test"), "--out", os.path.join(work, "eval")])
main(["diagnose", *traces, "--out", os.path.join(work, "diag")])

header, rows = io.read_table(os.path.join(work, "eval", "hotspots.csv"))
print(header)
for r in rows:
    print(r)
print("outputs in", work)
