"""
Sparse codes from a spike-and-slab prior
========================================

Train on small binary shape images with and without an MMD term against
a spike-and-slab prior, then compare Hoyer sparsity of the standardized
encoder means. The step size and length are the desk-scale settings the
acceptance suite uses; this runs one seed, about 90 seconds.
"""

from pathlib import Path

from privae.config import parse_config
from privae.runner import evaluate, train

base = parse_config(Path(__file__).resolve().parents[1] / "configs" / "sparsity.ini")
cfg = base.replace(lr=1.0, epochs=15)

params, _ = train(cfg)
with_mmd = evaluate(cfg, params)

cfg0 = cfg.replace(c2=0.0, divergence_type="none")
params0, _ = train(cfg0)
without = evaluate(cfg0, params0)

for key in ("sparsity", "reconstruction_error", "mmd"):
    print(f"{key:<22} with MMD {with_mmd[key]:9.4f}   without {without[key]:9.4f}")
