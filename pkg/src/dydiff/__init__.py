"""Diffusion forecasting with temporally mixed latents (dydiff).

Standard diffusion corrupts each future state independently.  Here every
state is first blended with its predecessors through a recursive mixture
whose weight ``gamma_bar_t`` follows the noise schedule, and the noise gets
the same recursion.  Setting ``eta = 0`` gives back ordinary diffusion.
"""

from .dynamics import dynamics, dynamics_closed_form, inverse_dynamics
from .forward import (
    CorrelatedNoise,
    PosteriorGaussian,
    corrupt,
    decorrelate,
    forward_sample,
    markov_forward_step,
    markov_transition,
    posterior,
    recorrelate,
    sample_correlated_noise,
)
from .rng import make_rng
from .sampler import KINDS, SamplerConfig, sample, timestep_sequence
from .schedule import Schedule, build_schedule

__all__ = [
    "CorrelatedNoise",
    "KINDS",
    "PosteriorGaussian",
    "SamplerConfig",
    "Schedule",
    "build_schedule",
    "corrupt",
    "decorrelate",
    "dynamics",
    "dynamics_closed_form",
    "forward_sample",
    "inverse_dynamics",
    "make_rng",
    "markov_forward_step",
    "markov_transition",
    "posterior",
    "recorrelate",
    "sample",
    "sample_correlated_noise",
    "timestep_sequence",
]
