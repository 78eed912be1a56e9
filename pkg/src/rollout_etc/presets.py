"""Built-in plants and experiment settings.

The ``*_printed`` variants use matrices rounded to four (resp. three)
decimals as usually tabulated. The default presets discretize the
continuous-time models exactly with a zero-order hold, which is what the
reference cost values were computed from.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import expm

from .errors import ValidationError
from .ncs import Box, PlantModel, TokenBucketSpec

SAMPLE_TIME = 0.1


def zoh_discretize(Ac, Bc, h: float) -> tuple[np.ndarray, np.ndarray]:
    Ac = np.asarray(Ac, dtype=float)
    Bc = np.asarray(Bc, dtype=float)
    n, m = Bc.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = Ac
    aug[:n, n:] = Bc
    E = expm(aug * h)
    return E[:n, :n], E[:n, n:]


def _two_mass_spring_ct():
    kk = 2.0 * math.pi**2
    Ac = [[0, 0, 1, 0], [0, 0, 0, 1], [-kk, kk, 0, 0], [kk, -kk, 0, 0]]
    Bc = [[0], [0], [1], [0]]
    return Ac, Bc


def _batch_reactor_ct():
    Ac = [
        [1.38, -0.2077, 6.715, -5.676],
        [-0.5814, -4.29, 0.0, 0.675],
        [1.067, 4.273, -6.654, 5.893],
        [0.048, 4.273, 1.343, -2.104],
    ]
    Bc = [[0.0, 0.0], [5.679, 0.0], [1.136, -3.146], [1.136, 0.0]]
    return Ac, Bc


def two_mass_spring(constrained: bool = False) -> PlantModel:
    A, B = zoh_discretize(*_two_mass_spring_ct(), SAMPLE_TIME)
    return _tms(A, B, constrained, "two_mass_spring")


def two_mass_spring_printed(constrained: bool = False) -> PlantModel:
    A = [
        [0.9045, 0.0955, 0.0968, 0.0032],
        [0.0955, 0.9045, 0.0032, 0.0968],
        [-1.8466, 1.8466, 0.9045, 0.0955],
        [1.8466, -1.8466, 0.0955, 0.9045],
    ]
    B = [[0.0049], [0.0001], [0.0968], [0.0032]]
    return _tms(A, B, constrained, "two_mass_spring_printed")


def _tms(A, B, constrained, name):
    kw = {}
    if constrained:
        kw = dict(state_box=Box.symmetric([2, 2, 5, 5]), input_box=Box.symmetric([12]))
        name += "_constrained"
    return PlantModel(A, B, 10.0 * np.eye(4), np.eye(1), name=name, **kw)


def batch_reactor() -> PlantModel:
    A, B = zoh_discretize(*_batch_reactor_ct(), SAMPLE_TIME)
    return PlantModel(A, B, 10.0 * np.eye(4), np.eye(2), name="batch_reactor")


def batch_reactor_printed() -> PlantModel:
    A = [
        [1.178, 0.001, 0.512, -0.403],
        [-0.051, 0.662, -0.011, 0.061],
        [0.076, 0.335, 0.561, 0.382],
        [-0.001, 0.335, 0.089, 0.850],
    ]
    B = [[0.004, -0.0880], [0.467, 0.001], [0.213, -0.235], [0.213, -0.016]]
    return PlantModel(A, B, 10.0 * np.eye(4), np.eye(2), name="batch_reactor_printed")


TWO_MASS_SPRING_BUCKET = TokenBucketSpec(1, 6, 22)
BATCH_REACTOR_BUCKET = TokenBucketSpec(3, 8, 22)

# name -> (plant factory, bucket, x0, u0, beta0)
PRESETS = {
    "two_mass_spring": (lambda: two_mass_spring(), TWO_MASS_SPRING_BUCKET, [1, 0, 1, 0], [0], 5),
    "two_mass_spring_printed": (
        lambda: two_mass_spring_printed(),
        TWO_MASS_SPRING_BUCKET,
        [1, 0, 1, 0],
        [0],
        5,
    ),
    "two_mass_spring_constrained": (
        lambda: two_mass_spring(constrained=True),
        TWO_MASS_SPRING_BUCKET,
        [1, 0, 1, 0],
        [0],
        22,
    ),
    "batch_reactor": (batch_reactor, BATCH_REACTOR_BUCKET, [1, 0, 1, 0], [0, 0], 6),
    "batch_reactor_printed": (batch_reactor_printed, BATCH_REACTOR_BUCKET, [1, 0, 1, 0], [0, 0], 6),
}


def preset(name: str):
    """Return ``(plant, spec, x0, u0, beta0)`` for a named preset."""
    try:
        factory, spec, x0, u0, beta0 = PRESETS[name]
    except KeyError:
        raise ValidationError(
            f"unknown preset {name!r}; choose one of {', '.join(sorted(PRESETS))}"
        ) from None
    return factory(), spec, np.array(x0, dtype=float), np.array(u0, dtype=float), beta0
