"""Named built-in one-forms and smooth drivers used by the command line."""

from __future__ import annotations

import numpy as np

from . import oneform as of
from .errors import InputError

FIELDS = {
    "zero": lambda: of.zero(1, 1),
    "zero-2d": lambda: of.zero(2, 2),
    "scalar-linear": lambda: of.scalar_linear(1.0),
    "rotation": of.rotation,
    "sin-bounded": of.default_sin_field,
    "constant-identity": lambda: of.constant(np.eye(2)),
    "sphere-projector": lambda: _sphere(),
}

# t -> samples of shape (len(t), dim)
SMOOTH_DRIVERS = {
    "sin": lambda t: np.sin(t)[:, None],
    "t": lambda t: t[:, None],
    "circle": lambda t: np.column_stack([np.cos(2 * np.pi * t), np.sin(2 * np.pi * t)]),
    "lissajous": lambda t: np.column_stack([np.sin(2 * np.pi * t), np.sin(4 * np.pi * t) / 2]),
    "sphere-wiggle": lambda t: _wiggle(t),
}


def _sphere():
    from .manifold import sphere_projector_field
    return sphere_projector_field(3)


def _wiggle(t):
    th = 0.5 + 0.3 * np.sin(3 * np.pi * t)
    ph = 2 * t
    return np.column_stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])


def field(name: str):
    if name not in FIELDS:
        raise InputError(f"unknown field {name!r}; choose from {', '.join(sorted(FIELDS))}")
    return FIELDS[name]()


def smooth_driver(name: str, t: np.ndarray) -> np.ndarray:
    if name not in SMOOTH_DRIVERS:
        raise InputError(
            f"unknown smooth driver {name!r}; choose from {', '.join(sorted(SMOOTH_DRIVERS))}")
    return SMOOTH_DRIVERS[name](np.asarray(t, dtype=float))
