"""
Darcy flow pairs and their discrete residual
============================================

Each training field stacks a log-normal permeability k with the pressure p
that solves -div(k grad p) = f under no-flow walls.  The same conservative
stencil that defines the solver is the residual the diffusion model is
penalized with, so solver output has residual at round-off level.
"""

# %%
from pathlib import Path

import numpy as np

from physdiff.config import default_config
from physdiff.data import gen_darcy_dataset, solve_darcy
from physdiff.pgm import write_fields
from physdiff.physics import DarcyProblem, darcy_residual
from physdiff.tasks import build_setup
from physdiff.train import train

prob = DarcyProblem.default(16)
ds = gen_darcy_dataset(8, 16, 0.2, prob, seed=0)
k, p = ds.samples[:, 0], ds.samples[:, 1]
print("k range", k.min().round(3), k.max().round(3), " p range", p.min().round(4), p.max().round(4))
print("max |R| / max |f| on solver output:", np.abs(darcy_residual(k, p, prob).data).max() / np.abs(prob.f).max())

# %%
# A small perturbation of p is visible to the residual: the stencil scales
# pressure errors by 1 / h^2.
noisy = p + 1e-3 * np.random.default_rng(0).standard_normal(p.shape)
print("mean |R| after 1e-3 pressure noise:", np.abs(darcy_residual(k, noisy, prob).data).mean().round(3))

# %%
# Doubling k halves the pressure.
print("solve(2k) * 2 == solve(k):", np.allclose(2 * solve_darcy(2 * k[0], prob), p[0], atol=1e-9))

# %%
# A short training run with the physics term; the full comparison uses 5000
# iterations and lives in the acceptance suite.
cfg = default_config("darcy").with_overrides({"run.iterations": 200, "sample.n": 16})
res = train(cfg, build_setup(cfg))
print(res.metrics.to_json())

out = Path("demo-output/darcy")
paths = write_fields(out, res.samples, limit=2)
print("wrote", len(paths), "PGM images under", out)
