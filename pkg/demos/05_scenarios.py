"""
Scenario files and sweeps
=========================

The same pipeline driven from TOML configs, as the command line does it.
Equivalent shell commands::

    dynmask zeros configs/worked_example.toml
    dynmask run configs/worked_example.toml --out-dir out/demo
    dynmask sweep configs/worked_example.toml --param delta_shift --values 0.1,0.2,0.5
"""

import csv
from pathlib import Path

from dynmask.scenario import load_config, run_scenario, sweep

configs = Path(__file__).resolve().parent.parent / "configs"

for name in ("worked_example", "unmasked", "stable_cipher"):
    cfg = load_config(configs / f"{name}.toml")
    report = run_scenario(cfg, Path("out") / "demo" / name)
    s = report.summary()
    print(f"{name:15s} zero {float(s['identified_zero']):.4f}  alarm {s['alarm_d1']}  "
          f"divergent {s['energy_divergent']}  private {s['private']}")

cfg = load_config(configs / "worked_example.toml")
sweep(cfg, "delta_shift", [0.1, 0.2, 0.5], out_dir="out/demo/sweep")
with open("out/demo/sweep/sweep_delta_shift.csv") as fh:
    for row in csv.DictReader(fh):
        print(f"shift {row['value']}: bias vs plant {float(row['bias_vs_plant']):.4f}")
