"""Named problem presets.

Each preset is a plain ``[problem]`` table, so a config file may either spell
the problem out or write ``preset = "<name>"`` and override single keys.
"""
import copy

from .errors import UnknownKind

_LINEAR_DECAY = {"kind": "Linear", "matrix": -1.0}
_UNIT_SIGMA = {"kind": "ConstantMatrix", "matrix": 1.0}

PRESETS = {
    "ou_1d": {
        "name": "ou_1d",
        "description": "Ornstein-Uhlenbeck, b1 = 0, b2 = -x, sigma = 1; invariant law N(0, 1/2)",
        "dim": 1, "case": "Case1",
        "theta1": 1.0, "theta2": 0.0, "theta3": 1.0, "lambda_sigma": 0.9,
        "b1": {"kind": "Linear", "matrix": 0.0},
        "b2": _LINEAR_DECAY, "sigma": _UNIT_SIGMA,
    },
    "bump_1d": {
        "name": "bump_1d",
        "description": "discontinuous drift 1{|x|<=1/2} plus -x, sigma = 1",
        "dim": 1, "case": "Case1",
        "theta1": 1.0, "theta2": 0.0, "theta3": 1.0, "lambda_sigma": 0.9,
        "b1": {"kind": "Bump", "height": 1.0, "halfwidth": 0.5},
        "b2": _LINEAR_DECAY, "sigma": _UNIT_SIGMA,
    },
    "holder_sine_1d": {
        "name": "holder_sine_1d",
        "description": "Hoelder drift 0.5 |sin x|^0.25 plus -x, sigma = 1",
        "dim": 1, "case": "Case2", "alpha": 0.25,
        "theta1": 1.0, "theta2": 0.0, "theta3": 1.0, "lambda_sigma": 0.9,
        "b1": {"kind": "HolderSine", "amplitude": 0.5, "alpha": 0.25},
        "b2": _LINEAR_DECAY, "sigma": _UNIT_SIGMA,
    },
    "holder_sine_2d": {
        "name": "holder_sine_2d",
        "description": "2D Hoelder drift with state-dependent diagonal diffusion",
        "dim": 2, "case": "Case2", "alpha": 0.25,
        "theta1": 1.0, "theta2": 0.0, "theta3": 1.0, "lambda_sigma": 0.6,
        "b1": {"kind": "HolderSine", "amplitude": 0.5, "alpha": 0.25},
        "b2": _LINEAR_DECAY,
        "sigma": {"kind": "DiagonalSineMatrix", "base": 1.0, "amplitude": 0.2, "frequency": 1.0},
    },
}


def list_problems():
    return [(name, spec["description"]) for name, spec in PRESETS.items()]


def preset(name):
    """A fresh copy of a preset table."""
    try:
        spec = copy.deepcopy(PRESETS[name])
    except KeyError:
        raise UnknownKind(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None
    spec.pop("description")
    return spec


def resolve(table):
    """Expand ``preset = ...`` in a problem table; explicit keys win."""
    table = dict(table)
    name = table.pop("preset", None)
    if name is None:
        return table
    base = preset(name)
    base.update(table)
    return base
