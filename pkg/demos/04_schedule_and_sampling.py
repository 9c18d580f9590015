"""
Noise schedule, loss weights and exact DDIM inversion
=====================================================

The clamped cosine schedule sets every time-indexed weight in the loss.
With an oracle noise predictor, the deterministic samplers return the clean
sample exactly, which is what makes them safe to differentiate through.
"""

# %%
import numpy as np

from physdiff.denoiser import OracleNoiseNet
from physdiff.sampler import ddim_timesteps, sample_ddim2, sample_ddimK
from physdiff.schedule import PhysicsWeightConfig, build_schedule, gate, min_snr_weight, physics_weight

sched = build_schedule("cosine", 100, 1e-4, 0.03)
t = np.array([1, 2, 5, 10, 25, 50, 75, 100])
print("t          ", t)
print("alpha_bar  ", sched.alpha_bar[t].round(4))
print("B_t        ", sched.B[t].round(5))
print("log gate   ", gate(t, 100, "log").round(3))
print("physics w  ", physics_weight(t, sched, PhysicsWeightConfig(0.005, 100.0)).round(3))
print("min-SNR    ", min_snr_weight(t, sched, 5.0).round(3))

# %%
x0 = np.random.default_rng(1).standard_normal((5, 3))
oracle = OracleNoiseNet(x0, sched.alpha_bar)
print("ddim2 error", np.abs(sample_ddim2(oracle, None, sched, np.random.default_rng(0), n=5, shape=(3,)) - x0).max())
for K in (4, 10):
    out = sample_ddimK(oracle, None, sched, K, np.random.default_rng(0), n=5, shape=(3,))
    print(f"ddimK K={K:<2d} steps {ddim_timesteps(100, K, sched)} error {np.abs(out - x0).max():.1e}")
