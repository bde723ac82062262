"""Dense state-vector engine for the small labeled register used by the protocol.

Amplitude index ``i`` encodes a basis state by its binary expansion, with
``labels[0]`` as the most significant bit. The protocol register is fixed as
``REGISTER = (P1_PATH, P1_SPIN, P2_SPIN, AUX_SPIN, P3_SPIN)``; smaller
registers are allowed for unit work and analysis.

All values are immutable. Every operation returns a new object.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from math import sqrt
from typing import Iterable, Sequence

import numpy as np

NORM_TOL = 1e-10
GATE_DRIFT_TOL = 1e-12
UNITARY_TOL = 1e-12
ZERO_PROB_CUTOFF = 1e-14
STATE_EQ_TOL = 1e-8


class StateVectorError(ValueError):
    pass


class NormalizationError(StateVectorError):
    pass


class RegisterError(StateVectorError):
    """Unknown, duplicate, or mismatched qubit labels."""


class ZeroProbabilityBranch(Exception):
    """A projection hit an outcome whose Born probability is below the cutoff."""

    def __init__(self, probability: float, what: str = ""):
        self.probability = probability
        msg = f"branch has probability {probability:.3e}"
        super().__init__(f"{what}: {msg}" if what else msg)


class Particle(enum.Enum):
    P1 = "P1"
    P2 = "P2"
    AUX = "Aux"
    P3 = "P3"


class Dof(enum.Enum):
    PATH = "Path"
    SPIN = "Spin"


@dataclass(frozen=True)
class QubitLabel:
    particle: Particle
    dof: Dof

    def __post_init__(self):
        if self.dof is Dof.PATH and self.particle is not Particle.P1:
            raise RegisterError(f"only particle P1 carries a path qubit, got {self.particle.value}")

    def __str__(self) -> str:
        return f"{self.particle.value}.{self.dof.value}"


P1_PATH = QubitLabel(Particle.P1, Dof.PATH)
P1_SPIN = QubitLabel(Particle.P1, Dof.SPIN)
P2_SPIN = QubitLabel(Particle.P2, Dof.SPIN)
AUX_SPIN = QubitLabel(Particle.AUX, Dof.SPIN)
P3_SPIN = QubitLabel(Particle.P3, Dof.SPIN)

REGISTER: tuple[QubitLabel, ...] = (P1_PATH, P1_SPIN, P2_SPIN, AUX_SPIN, P3_SPIN)


class Basis(enum.Enum):
    """Measurement bases.

    ``PATH_AB`` is the computational basis of the path qubit read after the
    second beam splitter, with |a> <-> |0>_p and |b> <-> |1>_p.
    """

    Z = "Z"
    X = "X"
    PATH_AB = "PathAB"


_INV_SQRT2 = 1 / sqrt(2)
_BASIS_KETS = {
    Basis.Z: (np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex)),
    Basis.PATH_AB: (np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex)),
    Basis.X: (
        np.array([_INV_SQRT2, _INV_SQRT2], dtype=complex),
        np.array([_INV_SQRT2, -_INV_SQRT2], dtype=complex),
    ),
}


def basis_ket(basis: Basis, outcome: int) -> np.ndarray:
    """Eigenvector of ``basis`` for ``outcome`` (0 or 1)."""
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome!r}")
    return _BASIS_KETS[basis][outcome].copy()


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Gate:
    """A 2x2 or 4x4 unitary. Construction fails if U^dag U deviates from I by more than 1e-12."""

    matrix: np.ndarray
    name: str = ""

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape not in ((2, 2), (4, 4)):
            raise StateVectorError(f"gate must be 2x2 or 4x4, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise StateVectorError("gate has non-finite entries")
        err = np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0])))
        if err > UNITARY_TOL:
            raise StateVectorError(f"gate {self.name or '?'} not unitary (max |U^dag U - I| = {err:.3e})")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_qubits(self) -> int:
        return 1 if self.dim == 2 else 2


@dataclass(frozen=True, eq=False)
class StateVector:
    labels: tuple[QubitLabel, ...]
    amps: np.ndarray

    def __post_init__(self):
        labels = tuple(self.labels)
        _check_unique(labels)
        amps = _frozen(self.amps).reshape(-1)
        if amps.shape[0] != 2 ** len(labels):
            raise StateVectorError(f"{len(labels)} labels need {2 ** len(labels)} amplitudes, got {amps.shape[0]}")
        _check_amps(amps)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "amps", amps)

    def with_amps(self, amps: np.ndarray) -> "StateVector":
        """New state on the same (already validated) register."""
        amps = _frozen(amps).reshape(-1)
        if amps.shape != self.amps.shape:
            raise StateVectorError(f"expected {self.amps.shape[0]} amplitudes, got {amps.shape[0]}")
        _check_amps(amps)
        new = object.__new__(StateVector)
        object.__setattr__(new, "labels", self.labels)
        object.__setattr__(new, "amps", amps)
        return new

    @property
    def n_qubits(self) -> int:
        return len(self.labels)

    def index_of(self, label: QubitLabel) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise RegisterError(f"qubit {label} not in register {[str(l) for l in self.labels]}") from None

    def amplitude(self, bits: str) -> complex:
        """Amplitude of the basis state spelled as a bit string in register order."""
        if len(bits) != self.n_qubits:
            raise RegisterError(f"bit string {bits!r} does not match {self.n_qubits} qubits")
        return complex(self.amps[int(bits, 2)])

    def tensor(self) -> np.ndarray:
        return self.amps.reshape((2,) * self.n_qubits)

    def __repr__(self) -> str:
        names = ",".join(str(l) for l in self.labels)
        return f"StateVector([{names}], {np.array2string(self.amps, precision=4)})"


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    labels: tuple[QubitLabel, ...]
    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        dim = 2 ** len(self.labels)
        if m.shape != (dim, dim):
            raise StateVectorError(f"density matrix shape {m.shape} does not match {len(self.labels)} qubits")
        if np.max(np.abs(m - m.conj().T)) > 1e-12:
            raise StateVectorError("density matrix is not Hermitian")
        tr = np.trace(m).real
        if abs(tr - 1.0) > NORM_TOL:
            raise NormalizationError(f"density matrix trace {tr!r}")
        if np.min(np.linalg.eigvalsh(m)) < -1e-10:
            raise StateVectorError("density matrix has negative eigenvalues")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


def _check_amps(amps: np.ndarray) -> None:
    if not np.all(np.isfinite(amps)):
        raise StateVectorError("state has non-finite amplitudes")
    norm2 = float(np.vdot(amps, amps).real)
    if abs(norm2 - 1.0) > NORM_TOL:
        raise NormalizationError(f"state norm^2 = {norm2!r}, expected 1 within {NORM_TOL}")


def _check_unique(labels: Sequence[QubitLabel]) -> None:
    if len(set(labels)) != len(labels):
        raise RegisterError(f"duplicate labels in register {[str(l) for l in labels]}")


def _check_basis(label: QubitLabel, basis: Basis) -> None:
    if basis is Basis.PATH_AB and label.dof is not Dof.PATH:
        raise StateVectorError(f"PathAB basis applies only to the path qubit, not {label}")
    if basis is Basis.X and label.dof is not Dof.SPIN:
        raise StateVectorError(f"X basis applies only to spin qubits, not {label}")


def prepare_product(single_qubit_states: Iterable[tuple[QubitLabel, Sequence[complex]]]) -> StateVector:
    """Tensor product of single-qubit states, in the order given."""
    items = list(single_qubit_states)
    if not items:
        raise RegisterError("empty register")
    labels = tuple(label for label, _ in items)
    _check_unique(labels)
    amps = np.ones(1, dtype=complex)
    for label, vec in items:
        v = np.asarray(vec, dtype=complex).reshape(-1)
        if v.shape != (2,):
            raise StateVectorError(f"state for {label} must have 2 components")
        n2 = float(np.vdot(v, v).real)
        if abs(n2 - 1.0) > NORM_TOL:
            raise NormalizationError(f"state for {label} has norm^2 {n2!r}")
        amps = np.kron(amps, v)
    return StateVector(labels, amps)


def apply_gate(state: StateVector, targets: Sequence[QubitLabel], gate: Gate) -> StateVector:
    """Apply ``gate`` to ``targets`` (first target is the gate's most significant qubit)."""
    targets = tuple(targets)
    if len(targets) not in (1, 2):
        raise StateVectorError("a gate acts on 1 or 2 qubits")
    _check_unique(targets)
    if gate.dim != 2 ** len(targets):
        raise StateVectorError(f"{gate.dim}x{gate.dim} gate cannot act on {len(targets)} qubit(s)")
    axes = [state.index_of(t) for t in targets]
    k = len(axes)
    u = gate.matrix.reshape((2,) * (2 * k))
    out = np.tensordot(u, state.tensor(), axes=(list(range(k, 2 * k)), axes))
    out = np.moveaxis(out, list(range(k)), axes).reshape(-1)
    drift = abs(float(np.vdot(out, out).real) - float(np.vdot(state.amps, state.amps).real))
    if drift > GATE_DRIFT_TOL:
        raise NormalizationError(f"norm drift {drift:.3e} applying {gate.name or 'gate'}")
    return state.with_amps(out)


def _project_raw(state: StateVector, qubit: QubitLabel, basis: Basis, outcome: int) -> np.ndarray:
    _check_basis(qubit, basis)
    ax = state.index_of(qubit)
    ket = basis_ket(basis, outcome)
    rest = np.tensordot(ket.conj(), state.tensor(), axes=([0], [ax]))
    return np.moveaxis(np.multiply.outer(ket, rest), 0, ax).reshape(-1)


def outcome_probability(state: StateVector, qubit: QubitLabel, basis: Basis, outcome: int) -> float:
    v = _project_raw(state, qubit, basis, outcome)
    return float(np.vdot(v, v).real)


def project(state: StateVector, qubit: QubitLabel, basis: Basis, outcome: int) -> tuple[float, StateVector]:
    """Born probability of ``outcome`` and the renormalized post-measurement state."""
    v = _project_raw(state, qubit, basis, outcome)
    p = float(np.vdot(v, v).real)
    if p < ZERO_PROB_CUTOFF:
        raise ZeroProbabilityBranch(p, f"{qubit} in {basis.value} -> {outcome}")
    return p, state.with_amps(v / sqrt(p))


def _require_same_register(a: StateVector, b: StateVector) -> None:
    if a.labels != b.labels:
        raise RegisterError("states live on different registers")


def fidelity_pure(a: StateVector, b: StateVector) -> float:
    """|<a|b>|^2."""
    _require_same_register(a, b)
    return min(1.0, abs(np.vdot(a.amps, b.amps)) ** 2)


def reduced_density(state: StateVector, keep: Sequence[QubitLabel]) -> DensityMatrix:
    """Partial trace over every qubit not in ``keep``; rows follow the order of ``keep``."""
    keep = tuple(keep)
    if not keep:
        raise RegisterError("keep set is empty")
    _check_unique(keep)
    axes = [state.index_of(k) for k in keep]
    others = [i for i in range(state.n_qubits) if i not in axes]
    m = np.transpose(state.tensor(), axes + others).reshape(2 ** len(keep), -1)
    rho = m @ m.conj().T
    rho = (rho + rho.conj().T) / 2
    return DensityMatrix(keep, rho)


def phase_canonical(state: StateVector) -> StateVector:
    """Fix the global phase so the first non-negligible amplitude is real and positive."""
    return state.with_amps(canonical_vector(state.amps))


def canonical_vector(v: Sequence[complex]) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size == 0:
        raise StateVectorError("cannot fix the phase of a zero vector")
    a = v[nz[0]]
    return v * (abs(a) / a)


def same_ray(a: Sequence[complex], b: Sequence[complex], tol: float = STATE_EQ_TOL) -> bool:
    """Entrywise equality after phase canonicalization."""
    return bool(np.max(np.abs(canonical_vector(a) - canonical_vector(b))) <= tol)


def subsystem_state(state: StateVector, keep: Sequence[QubitLabel], purity_tol: float = NORM_TOL) -> StateVector:
    """Pure state of ``keep`` when it factors out of the rest of the register.

    Raises StateVectorError when ``keep`` is entangled with its complement.
    The returned vector is phase-canonical.
    """
    keep = tuple(keep)
    _check_unique(keep)
    axes = [state.index_of(k) for k in keep]
    others = [i for i in range(state.n_qubits) if i not in axes]
    m = np.transpose(state.tensor(), axes + others).reshape(2 ** len(keep), -1)
    rho = m @ m.conj().T
    purity = float(np.trace(rho @ rho).real)
    if abs(purity - 1.0) > purity_tol:
        raise StateVectorError(f"{[str(k) for k in keep]} is entangled with the rest (purity {purity:.6f})")
    col = m[:, np.argmax(np.linalg.norm(m, axis=0))]
    col = col / np.linalg.norm(col)
    return StateVector(keep, canonical_vector(col))
