"""Train a small VSOP agent end to end and aggregate the result.

Uses a reduced batch size so the whole demo finishes in about a minute on
one CPU core. Artifacts land in ./demo_runs/.

Run: python3 demos/03_train_small.py
"""

import dataclasses
import json
import os

import numpy as np

from deskrl.agents import preset
from deskrl.report import build_report, render_svg
from deskrl.trainer import TrainConfig, train

out_root = "demo_runs"
hp = dataclasses.replace(preset("vsop"), batch_size=512)
print(f"hyperparameters: {hp.algo}, frames={hp.frames}, {hp.conv_kind}, "
      f"lr={hp.learning_rate}, gae_lambda={hp.gae_lambda}, "
      f"dropout={hp.dropout_rate} (Thompson-sampling action selection)")

for seed in (0, 1):
    out_dir = os.path.join(out_root, "vsop", "chase_dot", f"seed{seed}")
    summary = train(
        TrainConfig(env="chase_dot", seed=seed, total_steps=4096,
                    num_train_levels=20, eval_interval=1024, eval_episodes=6),
        hp, out_dir)
    print(f"seed {seed}: {summary['steps']} steps, {summary['updates']} updates "
          f"-> {out_dir}/metrics.csv")

report = build_report({"vsop": os.path.join(out_root, "vsop")},
                      window=50, num_resamples=500)
m = report["agents"]["vsop"]["metrics"]
print(f"\ntest-level aggregates over (2 seeds x 1 env):")
for name in ("median", "iqm", "mean", "optimality_gap"):
    print(f"  {name:15s} {m[name]:.3f} "
          f"[{m['ci_low'][name]:.3f}, {m['ci_high'][name]:.3f}]")

with open(os.path.join(out_root, "report.json"), "w") as f:
    json.dump(report, f, indent=1, sort_keys=True)
with open(os.path.join(out_root, "report.svg"), "w") as f:
    f.write(render_svg(report))
print(f"\nwrote {out_root}/report.json and {out_root}/report.svg")
print("the same pipeline is available as: deskrl train / deskrl aggregate")
