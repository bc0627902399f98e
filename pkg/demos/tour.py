"""A short tour of the package on one linear-Gaussian window.

    python3 demos/tour.py

Prints the correlated-noise structure, shows that the samplers invert the
forward process when handed the true noise, then trains a small model for
a few hundred steps and scores it against the eta = 0 baseline.
"""

import numpy as np

from dydiff import build_schedule, dynamics, inverse_dynamics
from dydiff.experiments import run
from dydiff.forward import corrupt
from dydiff.sampler import SamplerConfig, sample

sched = build_schedule(1000, "linear", eta=0.5)
rng = np.random.default_rng(0)

# correlated noise: lag-k correlation is sqrt(1 - gamma_bar)^k
t = 300
gb = sched.gamma_bar[t]
eps = dynamics(rng.standard_normal((4, 100_000)), gb)
print(f"t={t} gamma_bar={gb:.3f}")
print("empirical lag correlations:", np.round(np.corrcoef(eps)[0, 1:], 3))
print("predicted                 :", np.round(np.sqrt(1 - gb) ** np.arange(1, 4), 3))

# inverse dynamics undoes the mixture exactly
x = rng.standard_normal(8)
print("round-trip error:", np.abs(inverse_dynamics(dynamics(x, gb), gb) - x).max())

# an oracle denoiser recovers the window from any starting step
P, S = 2, 3
window = rng.standard_normal((1, P + 1 + S))
x_t, _ = corrupt(window, np.array([t]), sched, rng.standard_normal((1, S)), P)


def oracle(latent, _obs, step):
    ab, g = sched.alpha_bar[step], sched.gamma_bar[step]
    return (latent - np.sqrt(ab) * dynamics(window, g, axis=1)[:, P + 1:]) / np.sqrt(1 - ab)


out = sample(oracle, window[:, : P + 1], sched, SamplerConfig("dydiff-ddim", 10), rng, S, x_init=x_t, t_start=t)
print("oracle recovery error:", np.abs(out - window[:, P + 1:]).max())

# a quick training comparison (the acceptance suite uses 3000 steps and 3 seeds)
for eta in (0.0, 0.5):
    r = run("linear_gaussian", eta, seed=0, steps=400)
    print(f"eta={eta}: CRPS {r.crps:.4f}, final loss {r.final_loss:.4f}")
