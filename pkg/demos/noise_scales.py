"""
How much noise does each aggregation add?
=========================================

For a batch-level divergence, DP-SGD with micro-aggregation has to clip
the per-sample gradient *with* the shared divergence gradient folded in,
so one swapped record can move every summand. Term-wise DP-SGD clips the
two terms separately and scales each by its own batch size.
This script prints the per-coordinate noise std each scheme puts on the
averaged update, for the sparsity experiment's settings.
"""

from pathlib import Path

from privae.config import parse_config
from privae.dp import kappa
from privae.runner import Trainer

cfg = parse_config(Path(__file__).resolve().parents[1] / "configs" / "sparsity.ini")
trainer = Trainer(cfg)
sigma = trainer.noise.sigma
print(f"B={cfg.batch_size} b={cfg.partitions} C1={cfg.c1} C2={cfg.c2} eps={cfg.epsilon} delta={cfg.delta}")
print(f"sampling rate q={trainer.q:.4f}, noise multiplier sigma={sigma:.4f}, kappa={kappa(cfg.delta):.4f}")

# %%
# Micro-aggregation must calibrate to the shared-term bound B*C; dividing
# by B afterwards leaves C*sigma on every coordinate.
micro = cfg.c1 * sigma
termwise = (cfg.c1 / cfg.batch_size + cfg.c2 / cfg.partitions) * kappa(cfg.delta) * sigma
print(f"micro-aggregation (shared psi)  std = {micro:.6f}")
print(f"term-wise                       std = {termwise:.6f}")
print(f"ratio                                 1/{micro / termwise:.1f}")

# %%
# The trainer logs the same numbers in its header record.
print(trainer.header()["effective_noise_std"])
