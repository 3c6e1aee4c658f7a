"""Walk through the composite loss piece by piece.

Plots the smooth-L1 kernel at both transition widths, the clamped
reciprocal-width perspective weighting, and the composite loss response of
a synthetic 64-anchor path as its prediction drifts away laterally or in
its y-limit.

Outputs land in demos/output/loss_behavior.png.
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from railpath.augmentation import TrajectoryTarget
from railpath.losses import LossConfig, composite_loss, perspective_weight, smooth_l1

OUT = Path(__file__).parent / "output"
OUT.mkdir(parents=True, exist_ok=True)

cfg = LossConfig()
fig, axes = plt.subplots(1, 3, figsize=(14, 4))

xs = np.linspace(-0.05, 0.05, 801)
for beta, label in ((cfg.beta1, "rails (beta=0.005)"), (cfg.beta2, "y-limit (beta=0.015)")):
    axes[0].plot(xs, [smooth_l1(float(x), beta) for x in xs], label=label)
axes[0].set_title("smooth-L1 kernel")
axes[0].set_xlabel("error (fraction of frame)")
axes[0].legend()

widths = np.linspace(0.01, 1.0, 400)
axes[1].plot(widths, [perspective_weight(0.0, float(w), cfg.w_max) for w in widths])
axes[1].axhline(cfg.w_max, ls="--", c="gray", lw=0.8)
axes[1].set_title("perspective weight vs rail width")
axes[1].set_xlabel("normalized rail width")

# A plausible 64-anchor target: rails converging toward the top.
H = cfg.anchor_count
t = np.linspace(0.0, 1.0, H)
width = 0.5 * (1 - t) + 0.04 * t
x = np.stack([0.5 - width / 2, 0.5 + width / 2])
target = TrajectoryTarget(x=x, y_lim=0.9, mask=np.arange(1, H + 1) <= 0.9 * H)

shifts = np.linspace(0, 0.1, 60)
lateral = []
for s in shifts:
    vec = torch.tensor(np.concatenate([x[0] + s, x[1] + s, [0.9]]))
    lateral.append(float(composite_loss(vec, target, cfg)))
ylim_err = []
for s in shifts:
    vec = torch.tensor(np.concatenate([x[0], x[1], [0.9 - s]]))
    ylim_err.append(float(composite_loss(vec, target, cfg)))
axes[2].plot(shifts, lateral, label="lateral drift of both rails")
axes[2].plot(shifts, ylim_err, label="y-limit shortfall")
axes[2].set_title("composite loss response")
axes[2].set_xlabel("perturbation")
axes[2].legend()

fig.tight_layout()
fig.savefig(OUT / "loss_behavior.png", dpi=110)
print("perfect prediction loss:",
      float(composite_loss(torch.tensor(np.concatenate([x[0], x[1], [0.9]])), target, cfg)))
print(f"wrote plot to {OUT / 'loss_behavior.png'}")
