"""Action Matching: learn the dynamics of a distributional path from samples."""

import json

from ._core import (
    ActionField,
    InvalidArgument,
    MarginalPath,
    MlpField,
    NumericError,
    ald_sample,
    commands,
    field_error,
    integrate_ode,
    load_field,
    log_likelihood,
    median_bandwidth,
    mmd,
    run_command,
    wasserstein2,
)
from . import _core

__all__ = [
    "ActionField",
    "InvalidArgument",
    "MarginalPath",
    "MlpField",
    "NumericError",
    "ald_sample",
    "commands",
    "field_error",
    "integrate_ode",
    "integrate_sde",
    "load_field",
    "log_likelihood",
    "make_path",
    "median_bandwidth",
    "mmd",
    "objective",
    "run_command",
    "train",
    "wasserstein2",
]


def _dumps(spec):
    return None if spec is None else json.dumps(spec)


def make_path(spec):
    """Build a marginal path from a config-style dict, e.g. {"kind": "qho"}."""
    return _core._make_path(json.dumps(spec))


def objective(field, path, kind="am", n_boundary=256, n_interior=256, seed=0, sigma=None, growth=1.0,
              conjugate="quadratic", projections=1):
    """Monte-Carlo estimate of a training objective with its parameter gradient."""
    return _core._objective(field, path, kind, n_boundary, n_interior, seed, _dumps(sigma), growth, conjugate,
                            projections)


def train(field, path, objective="am", iterations=1000, lr=1e-3, n_boundary=256, n_interior=256, seed=0,
          eval_every=100, sigma=None, growth=1.0, conjugate="quadratic", adaptive_proposal=False):
    """Train `field` in place with Adam; returns the evaluation records."""
    return _core._train(field, path, objective, iterations, lr, n_boundary, n_interior, seed, eval_every,
                        _dumps(sigma), growth, conjugate, adaptive_proposal)


def integrate_sde(field, x, t0=0.0, t1=1.0, sigma=None, steps=500, seed=0):
    """Euler-Maruyama push of particles with drift grad s and diffusion sigma_t."""
    sigma = {"kind": "constant", "c": 1.0} if sigma is None else sigma
    return _core._integrate_sde(field, x, t0, t1, json.dumps(sigma), steps, seed)
