"""
The command-line workflow
=========================

The same steps as ``acs-spoof gen-data``, ``train``, ``eval`` and ``ablate``
from a shell, driven here through ``main`` in a scratch directory.
"""
import tempfile
from pathlib import Path

from acs_spoof.cli import main

work = Path(tempfile.mkdtemp(prefix="acs-demo-"))
(work / "tdcf.ini").write_text("[tdcf]\nprior_spoof = 0.05\nc_fa_spoof = 10\n")

main(["gen-data", "--seed", "0", "--out", str(work / "data")])
main(["train", "--data", str(work / "data"), "--out", str(work / "run"), "--centroid", "partial-acs"])
main(["eval", "--model", str(work / "run" / "model.npz"), "--data", str(work / "data"),
      "--scores", str(work / "scores.txt"), "--tdcf-params", str(work / "tdcf.ini")])
print((work / "scores.txt").read_text().splitlines()[:3])
print((work / "run" / "config.ini").read_text()[:200])

main(["ablate", "--axis", "loss", "--seeds", "2", "--data", str(work / "data"), "--out", str(work / "loss.csv")])
print((work / "loss.csv").read_text())
print("outputs under", work)
