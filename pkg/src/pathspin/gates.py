"""Unitaries used by the protocol, each returned as a validated :class:`Gate`.

Single-qubit matrices act on (|0>, |1>). Two-qubit matrices act on
(|00>, |01>, |10>, |11>) with the first target as the high bit.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from math import sqrt

import numpy as np

from .statevec import Gate, StateVectorError

_SPLITTER_TOL = 1e-12


@dataclass(frozen=True)
class SplitterParams:
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (-_SPLITTER_TOL <= v <= 1 + _SPLITTER_TOL):
                raise StateVectorError(f"splitter {name}={v!r} outside [0, 1]")
        if abs(self.alpha**2 + self.beta**2 - 1) > _SPLITTER_TOL:
            raise StateVectorError(f"alpha^2 + beta^2 = {self.alpha**2 + self.beta**2!r}, expected 1")

    @classmethod
    def from_alpha(cls, alpha: float) -> "SplitterParams":
        return cls(alpha, sqrt(max(0.0, 1 - alpha * alpha)))


def bs_general(p: SplitterParams) -> Gate:
    """Beam splitter with U|1> = a|1> + ib|0> and U|0> = -b|1> + ia|0>."""
    a, b = p.alpha, p.beta
    return Gate(np.array([[1j * a, 1j * b], [-b, a]], dtype=complex), name=f"BS({a:.6g})")


@lru_cache(maxsize=None)
def bs_5050() -> Gate:
    # |0> -> (|a> + i|b>)/sqrt2, |1> -> (|b> + i|a>)/sqrt2 with a <-> 0, b <-> 1
    return Gate(np.array([[1, 1j], [1j, 1]], dtype=complex) / sqrt(2), name="BS50")


@lru_cache(maxsize=None)
def spin_flipper() -> Gate:
    """Flip the spin when the particle is in the reflected channel |0>_p. Targets are (path, spin)."""
    m = np.array(
        [
            [0, 1, 0, 0],
            [1, 0, 0, 0],
            [0, 0, 1, 0],
            [0, 0, 0, 1],
        ],
        dtype=complex,
    )
    return Gate(m, name="SF")


@lru_cache(maxsize=None)
def cnot() -> Gate:
    """Controlled-X; targets are (control, target)."""
    m = np.array(
        [
            [1, 0, 0, 0],
            [0, 1, 0, 0],
            [0, 0, 0, 1],
            [0, 0, 1, 0],
        ],
        dtype=complex,
    )
    return Gate(m, name="CNOT")


class Pauli(str, enum.Enum):
    I = "I"
    X = "X"
    Y = "Y"
    Z = "Z"


_PAULI = {
    Pauli.I: np.eye(2, dtype=complex),
    Pauli.X: np.array([[0, 1], [1, 0]], dtype=complex),
    Pauli.Y: np.array([[0, -1j], [1j, 0]], dtype=complex),
    Pauli.Z: np.array([[1, 0], [0, -1]], dtype=complex),
}


@lru_cache(maxsize=None)
def pauli(which: Pauli | str) -> Gate:
    which = Pauli(which)
    return Gate(_PAULI[which], name=which.value)
