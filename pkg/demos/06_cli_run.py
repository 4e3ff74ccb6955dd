"""
Configuration-driven runs
=========================

The same experiments can be described in TOML and run through
``python -m stochns --config FILE`` (or the ``stochns`` console script).
Each run writes CSV tables, a plotting script and a manifest with
SHA-256 checksums of every output.
"""

import json
import tempfile
from pathlib import Path

from stochns.cli import main

CONFIG = """
command = "constants"

[physics]
viscosity = 1.0
horizon = 1.0

[theory]
k0 = 1.0
c_bar = 1.0
c_tilde = 1.0
"""

with tempfile.TemporaryDirectory() as tmp:
    cfg = Path(tmp) / "constants.toml"
    cfg.write_text(CONFIG)
    code = main(["--config", str(cfg), "--output", str(Path(tmp) / "out")])
    print("exit code", code)
    print((Path(tmp) / "out" / "constants.csv").read_text())
    manifest = json.loads((Path(tmp) / "out" / "manifest.json").read_text())
    print([f["path"] for f in manifest["files"]])

    # invalid configurations are rejected with every problem listed, exit code 2
    bad = Path(tmp) / "bad.toml"
    bad.write_text('command = "convergence"\noutput_dir = "x"\n'
                   '[study]\nladder = [12]\nreference_n = 128\n[theory]\nbeta = 1.5\n')
    print("exit code", main(["--config", str(bad)]))
