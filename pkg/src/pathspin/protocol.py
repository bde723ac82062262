"""Two-party transfer protocol over the path-spin entangled particle.

Pure stage functions (``prepare``, ``alice_measure``, ``bob_receive_and_process``,
``bob_measure``, ``recover_after_loss``) carry the quantum state forward; each
measurement takes either a forced outcome or an RNG. :class:`ProtocolRun` wraps
them in the ordered phase machine with classical messages and a transcript.

Sampling uses NumPy's PCG64 generator, one stream per run, seeded with the
entropy pair ``(seed, run_index)`` through ``numpy.random.SeedSequence``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from . import gates
from .gates import Pauli, SplitterParams
from .statevec import (
    AUX_SPIN,
    P1_PATH,
    P1_SPIN,
    P2_SPIN,
    P3_SPIN,
    ZERO_PROB_CUTOFF,
    Basis,
    DensityMatrix,
    StateVector,
    ZeroProbabilityBranch,
    apply_gate,
    outcome_probability,
    prepare_product,
    project,
    reduced_density,
    subsystem_state,
)

KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)


class ProtocolOrderViolation(RuntimeError):
    pass


class Mode(enum.Enum):
    ENUMERATE = "Enumerate"
    SAMPLE = "Sample"


@dataclass(frozen=True)
class ProtocolConfig:
    """Protocol parameters. ``beta`` and ``delta`` follow from normalization."""

    alpha: float
    gamma: float
    input_phase: float = 0.0
    seed: int = 0
    mode: Mode = Mode.ENUMERATE

    def __post_init__(self):
        for name in ("alpha", "gamma"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and 0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be a real number in [0, 1], got {v!r}")
        if not math.isfinite(self.input_phase):
            raise ValueError(f"input_phase must be finite, got {self.input_phase!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {self.seed!r}")
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def beta(self) -> float:
        return math.sqrt(1.0 - self.alpha**2)

    @property
    def delta(self) -> float:
        """Magnitude of the |1> coefficient of the input qubit."""
        return math.sqrt(1.0 - self.gamma**2)

    @property
    def input_state(self) -> np.ndarray:
        return np.array([self.gamma, self.delta * np.exp(1j * self.input_phase)], dtype=complex)

    @property
    def splitter(self) -> SplitterParams:
        return SplitterParams(self.alpha, self.beta)


class ProtocolPhase(enum.Enum):
    INITIAL = "Initial"
    AFTER_BS1 = "AfterBS1"
    AFTER_SPIN_FLIP = "AfterSpinFlip"
    AFTER_AUX_CNOT = "AfterAuxCnot"
    AFTER_INPUT_CNOT = "AfterInputCnot"
    PARTICLE_IN_TRANSIT = "ParticleInTransit"
    BOB_CONFIRMED = "BobConfirmed"
    PARTICLE_LOST = "ParticleLost"
    ALICE_MEASURED = "AliceMeasured"
    BOB_BS2_DONE = "BobBS2Done"
    BOB_CNOT_DONE = "BobCnotDone"
    BOB_MEASURED = "BobMeasured"
    CORRECTED = "Corrected"
    RECOVERED = "Recovered"


_P = ProtocolPhase
TRANSITIONS: dict[ProtocolPhase, frozenset[ProtocolPhase]] = {
    _P.INITIAL: frozenset({_P.AFTER_BS1}),
    _P.AFTER_BS1: frozenset({_P.AFTER_SPIN_FLIP}),
    _P.AFTER_SPIN_FLIP: frozenset({_P.AFTER_AUX_CNOT}),
    _P.AFTER_AUX_CNOT: frozenset({_P.AFTER_INPUT_CNOT}),
    _P.AFTER_INPUT_CNOT: frozenset({_P.PARTICLE_IN_TRANSIT}),
    _P.PARTICLE_IN_TRANSIT: frozenset({_P.BOB_CONFIRMED, _P.PARTICLE_LOST}),
    _P.BOB_CONFIRMED: frozenset({_P.ALICE_MEASURED}),
    _P.PARTICLE_LOST: frozenset({_P.RECOVERED}),
    _P.ALICE_MEASURED: frozenset({_P.BOB_BS2_DONE}),
    _P.BOB_BS2_DONE: frozenset({_P.BOB_CNOT_DONE}),
    _P.BOB_CNOT_DONE: frozenset({_P.BOB_MEASURED}),
    _P.BOB_MEASURED: frozenset({_P.CORRECTED}),
    _P.CORRECTED: frozenset(),
    _P.RECOVERED: frozenset(),
}


class MessageKind(enum.Enum):
    RECEIPT_CONFIRM = "ReceiptConfirm"
    LOSS_REPORT = "LossReport"
    ALICE_OUTCOMES = "AliceOutcomes"


@dataclass(frozen=True)
class ClassicalMessage:
    kind: MessageKind
    m2: int | None = None
    ma: int | None = None

    def __post_init__(self):
        carries_bits = self.kind is MessageKind.ALICE_OUTCOMES
        for name in ("m2", "ma"):
            v = getattr(self, name)
            if carries_bits and v not in (0, 1):
                raise ValueError(f"{self.kind.value} needs {name} in {{0, 1}}, got {v!r}")
            if not carries_bits and v is not None:
                raise ValueError(f"{self.kind.value} carries no outcome bits")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.kind is MessageKind.ALICE_OUTCOMES:
            d.update(m2=self.m2, ma=self.ma)
        return d


class BobOutcome(NamedTuple):
    path_bit: int  # 0 = |a>, 1 = |b>
    spin_bit: int  # x basis on the particle-1 spin

    def __str__(self) -> str:
        return f"{'ab'[self.path_bit]},{self.spin_bit}"


BOB_OUTCOMES = tuple(BobOutcome(p, s) for p in (0, 1) for s in (0, 1))


@dataclass(frozen=True, eq=False)
class BranchRecord:
    m2: int
    ma: int
    bob: BobOutcome
    probability: float
    correction: Pauli
    output_state: np.ndarray | None  # particle 3, phase-canonical; None when the branch cannot occur
    fidelity: float | None

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.m2, self.ma, self.bob.path_bit, self.bob.spin_bit)

    @property
    def label(self) -> str:
        return f"({self.m2},{self.ma},{'ab'[self.bob.path_bit]},{self.bob.spin_bit})"

    @property
    def defined(self) -> bool:
        return self.fidelity is not None


@dataclass(frozen=True)
class RunRecord:
    run_index: int
    branch: BranchRecord


# Bob's corrections, keyed (m2, ma, path_bit, spin_bit), copied from the four correction tables.
CORRECTION_TABLE: Mapping[tuple[int, int, int, int], Pauli] = {
    (0, 0, 0, 0): Pauli.I, (0, 0, 0, 1): Pauli.Z, (0, 0, 1, 0): Pauli.Z, (0, 0, 1, 1): Pauli.I,
    (0, 1, 0, 0): Pauli.Z, (0, 1, 0, 1): Pauli.I, (0, 1, 1, 0): Pauli.I, (0, 1, 1, 1): Pauli.Z,
    (1, 0, 0, 0): Pauli.X, (1, 0, 0, 1): Pauli.Y, (1, 0, 1, 0): Pauli.Y, (1, 0, 1, 1): Pauli.X,
    (1, 1, 0, 0): Pauli.Y, (1, 1, 0, 1): Pauli.X, (1, 1, 1, 0): Pauli.X, (1, 1, 1, 1): Pauli.Y,
}  # fmt: skip


def correction_for(m2: int, ma: int, bob: BobOutcome | Sequence[int],
                   table: Mapping[tuple[int, int, int, int], Pauli] = CORRECTION_TABLE) -> Pauli:
    path_bit, spin_bit = bob
    return table[(m2, ma, path_bit, spin_bit)]


def correction_closed_form(m2: int, ma: int, bob: BobOutcome | Sequence[int]) -> Pauli:
    """Parity rule equivalent to the table: m2 picks {I,Z} or {X,Y}, path^spin^ma picks within."""
    path_bit, spin_bit = bob
    parity = path_bit ^ spin_bit ^ ma
    if m2 == 0:
        return Pauli.Z if parity else Pauli.I
    return Pauli.Y if parity else Pauli.X


# -- pure stages -------------------------------------------------------------


def preparation_stages(config: ProtocolConfig, input_state: Sequence[complex] | None = None
                       ) -> Iterator[tuple[ProtocolPhase, StateVector]]:
    """Yield the state after each of Alice's preparation steps, starting from the product state."""
    psi_in = config.input_state if input_state is None else np.asarray(input_state, dtype=complex)
    state = prepare_product([
        (P1_PATH, KET1),
        (P1_SPIN, KET0),
        (P2_SPIN, psi_in),
        (AUX_SPIN, KET0),
        (P3_SPIN, KET0),
    ])
    yield ProtocolPhase.INITIAL, state
    state = apply_gate(state, [P1_PATH], gates.bs_general(config.splitter))
    yield ProtocolPhase.AFTER_BS1, state
    state = apply_gate(state, [P1_PATH, P1_SPIN], gates.spin_flipper())
    yield ProtocolPhase.AFTER_SPIN_FLIP, state
    state = apply_gate(state, [P1_SPIN, AUX_SPIN], gates.cnot())
    yield ProtocolPhase.AFTER_AUX_CNOT, state
    state = apply_gate(state, [P1_SPIN, P2_SPIN], gates.cnot())
    yield ProtocolPhase.AFTER_INPUT_CNOT, state


def prepare(config: ProtocolConfig, input_state: Sequence[complex] | None = None
            ) -> tuple[ProtocolPhase, StateVector]:
    for phase, state in preparation_stages(config, input_state):
        pass
    return phase, state


def transmit(phase: ProtocolPhase, lose_particle: bool = False, intercept: bool = False) -> ProtocolPhase:
    """Phase reached once particle 1 leaves Alice. Interception looks like a loss to Alice and Bob."""
    if phase is not ProtocolPhase.AFTER_INPUT_CNOT:
        raise ProtocolOrderViolation(f"cannot send particle 1 from phase {phase.value}")
    if lose_particle or intercept:
        return ProtocolPhase.PARTICLE_LOST
    return ProtocolPhase.BOB_CONFIRMED


def _measure(state: StateVector, qubit, basis: Basis, rng: np.random.Generator | None,
             forced: int | None) -> tuple[int, float, StateVector]:
    if forced is None:
        if rng is None:
            raise ValueError("need an rng or a forced outcome")
        p1 = outcome_probability(state, qubit, basis, 1)
        if p1 < ZERO_PROB_CUTOFF:
            outcome = 0
        elif 1.0 - p1 < ZERO_PROB_CUTOFF:
            outcome = 1
        else:
            outcome = int(rng.random() < p1)
    else:
        outcome = int(forced)
    p, post = project(state, qubit, basis, outcome)
    return outcome, p, post


def alice_measure(state: StateVector, rng: np.random.Generator | None = None,
                  forced: tuple[int, int] | None = None) -> tuple[int, int, float, StateVector]:
    """Measure particle 2's spin along z, then the auxiliary spin along x."""
    f2, fa = forced if forced is not None else (None, None)
    m2, p2, state = _measure(state, P2_SPIN, Basis.Z, rng, f2)
    ma, pa, state = _measure(state, AUX_SPIN, Basis.X, rng, fa)
    return m2, ma, p2 * pa, state


def bob_receive_and_process(state: StateVector) -> StateVector:
    """50-50 splitter on the path, then CNOT from particle 1's spin onto particle 3."""
    state = apply_gate(state, [P1_PATH], gates.bs_5050())
    return apply_gate(state, [P1_SPIN, P3_SPIN], gates.cnot())


def bob_measure(state: StateVector, rng: np.random.Generator | None = None,
                forced: BobOutcome | tuple[int, int] | None = None) -> tuple[BobOutcome, float, StateVector]:
    fp, fs = forced if forced is not None else (None, None)
    path_bit, pp, state = _measure(state, P1_PATH, Basis.PATH_AB, rng, fp)
    spin_bit, ps, state = _measure(state, P1_SPIN, Basis.X, rng, fs)
    return BobOutcome(path_bit, spin_bit), pp * ps, state


def apply_correction(state: StateVector, correction: Pauli) -> StateVector:
    return apply_gate(state, [P3_SPIN], gates.pauli(correction))


def particle3_state(state: StateVector) -> np.ndarray:
    """Phase-canonical two-component state of particle 3 (must be unentangled)."""
    return subsystem_state(state, [P3_SPIN]).amps


class Recovery(NamedTuple):
    aux_outcome: int
    recovered_input: np.ndarray
    probability: float


def recover_after_loss(state: StateVector, rng: np.random.Generator | None = None,
                       forced: int | None = None) -> Recovery:
    """Alice restores the input on particle 2: measure the auxiliary along z, apply X on outcome 1."""
    outcome, p, state = _measure(state, AUX_SPIN, Basis.Z, rng, forced)
    if outcome == 1:
        state = apply_gate(state, [P2_SPIN], gates.pauli(Pauli.X))
    return Recovery(outcome, subsystem_state(state, [P2_SPIN]).amps, p)


def _fidelity(psi_in: np.ndarray, out: np.ndarray) -> float:
    return min(1.0, float(abs(np.vdot(psi_in, out)) ** 2))


# -- branch enumeration and sampling -------------------------------------------


def _finish_branch(config, m2, ma, bob, probability, state, table) -> BranchRecord:
    corr = correction_for(m2, ma, bob, table)
    out = particle3_state(apply_correction(state, corr))
    return BranchRecord(m2, ma, bob, probability, corr, out, _fidelity(config.input_state, out))


def enumerate_branches(config: ProtocolConfig,
                       table: Mapping[tuple[int, int, int, int], Pauli] = CORRECTION_TABLE) -> list[BranchRecord]:
    """All 16 (m2, ma, path, spin) branches by forced-outcome traversal.

    Branches whose Alice outcome cannot occur are kept with probability 0 and
    no output state or fidelity.
    """
    _, prepared = prepare(config)
    records = []
    for m2 in (0, 1):
        for ma in (0, 1):
            try:
                _, _, pa, alice_post = alice_measure(prepared, forced=(m2, ma))
            except ZeroProbabilityBranch:
                for bob in BOB_OUTCOMES:
                    records.append(BranchRecord(m2, ma, bob, 0.0, correction_for(m2, ma, bob, table), None, None))
                continue
            processed = bob_receive_and_process(alice_post)
            for bob in BOB_OUTCOMES:
                _, pb, bob_post = bob_measure(processed, forced=bob)
                records.append(_finish_branch(config, m2, ma, bob, pa * pb, bob_post, table))
    return records


class _BranchTree:
    """Lazily expanded measurement tree shared by all sampled runs of one config.

    Each node holds the conditional state after a prefix of outcomes
    (m2, ma, path, spin); children are computed once and reused.
    """

    _STEPS = ((P2_SPIN, Basis.Z), (AUX_SPIN, Basis.X), (P1_PATH, Basis.PATH_AB), (P1_SPIN, Basis.X))

    def __init__(self, config: ProtocolConfig, table):
        self.config = config
        self.table = table
        self._states: dict[tuple[int, ...], tuple[float, StateVector]] = {(): (1.0, prepare(config)[1])}
        self._p1: dict[tuple[int, ...], float] = {}
        self._leaves: dict[tuple[int, ...], BranchRecord] = {}

    def _node(self, prefix: tuple[int, ...]) -> tuple[float, StateVector]:
        if prefix not in self._states:
            p_parent, parent = self._node(prefix[:-1])
            qubit, basis = self._STEPS[len(prefix) - 1]
            p, post = project(parent, qubit, basis, prefix[-1])
            if len(prefix) == 2:
                post = bob_receive_and_process(post)
            self._states[prefix] = (p_parent * p, post)
        return self._states[prefix]

    def prob_one(self, prefix: tuple[int, ...]) -> float:
        if prefix not in self._p1:
            qubit, basis = self._STEPS[len(prefix)]
            self._p1[prefix] = outcome_probability(self._node(prefix)[1], qubit, basis, 1)
        return self._p1[prefix]

    def leaf(self, bits: tuple[int, int, int, int]) -> BranchRecord:
        if bits not in self._leaves:
            p, state = self._node(bits)
            m2, ma, path_bit, spin_bit = bits
            self._leaves[bits] = _finish_branch(self.config, m2, ma, BobOutcome(path_bit, spin_bit), p, state,
                                                self.table)
        return self._leaves[bits]

    def sample(self, rng: np.random.Generator) -> BranchRecord:
        bits: tuple[int, ...] = ()
        for _ in self._STEPS:
            p1 = self.prob_one(bits)
            if p1 < ZERO_PROB_CUTOFF:
                b = 0
            elif 1.0 - p1 < ZERO_PROB_CUTOFF:
                b = 1
            else:
                b = int(rng.random() < p1)
            bits += (b,)
        return self.leaf(bits)  # type: ignore[arg-type]


def run_rng(seed: int, run_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, run_index])))


def run_sampled(config: ProtocolConfig, n_runs: int,
                table: Mapping[tuple[int, int, int, int], Pauli] = CORRECTION_TABLE) -> list[RunRecord]:
    """Independent Born-rule samples of complete protocol runs, reproducible per seed."""
    if isinstance(n_runs, bool) or not isinstance(n_runs, int) or n_runs < 1:
        raise ValueError(f"n_runs must be a positive integer, got {n_runs!r}")
    tree = _BranchTree(config, table)
    return [RunRecord(i, tree.sample(run_rng(config.seed, i))) for i in range(n_runs)]


# -- phase machine -------------------------------------------------------------


@dataclass
class TranscriptEvent:
    phase: ProtocolPhase
    actor: str
    message: ClassicalMessage | None = None
    outcome: dict | None = None

    def to_dict(self) -> dict:
        d: dict = {"phase": self.phase.value, "actor": self.actor}
        if self.message is not None:
            d["message"] = self.message.to_dict()
        if self.outcome is not None:
            d["outcome"] = self.outcome
        return d


@dataclass
class ProtocolRun:
    """One run of the protocol as an ordered sequence of phases.

    Every step checks the current phase and raises ProtocolOrderViolation
    when called out of order. Measurements draw from ``rng`` unless a forced
    outcome is given.
    """

    config: ProtocolConfig
    rng: np.random.Generator | None = None
    table: Mapping[tuple[int, int, int, int], Pauli] = field(default_factory=lambda: CORRECTION_TABLE)

    def __post_init__(self):
        if self.rng is None:
            self.rng = run_rng(self.config.seed, 0)
        self.phase = ProtocolPhase.INITIAL
        self.state: StateVector | None = None
        self.transcript: list[TranscriptEvent] = [TranscriptEvent(ProtocolPhase.INITIAL, "alice")]
        self.messages: list[ClassicalMessage] = []
        self.intercepted: DensityMatrix | None = None
        self.alice_outcome: tuple[int, int] | None = None
        self.alice_probability: float | None = None
        self.bob_outcome: BobOutcome | None = None
        self.bob_probability: float | None = None
        self.correction: Pauli | None = None
        self.output_state: np.ndarray | None = None
        self.recovery: Recovery | None = None

    def _advance(self, target: ProtocolPhase, actor: str, **event) -> None:
        if target not in TRANSITIONS[self.phase]:
            raise ProtocolOrderViolation(f"{actor} cannot move from {self.phase.value} to {target.value}")
        self.phase = target
        self.transcript.append(TranscriptEvent(target, actor, **event))

    def _require(self, *allowed: ProtocolPhase, action: str) -> None:
        if self.phase not in allowed:
            raise ProtocolOrderViolation(f"{action} not allowed in phase {self.phase.value}")

    def _send(self, msg: ClassicalMessage) -> ClassicalMessage:
        self.messages.append(msg)
        return msg

    def prepare(self) -> StateVector:
        self._require(ProtocolPhase.INITIAL, action="prepare")
        for phase, state in preparation_stages(self.config):
            if phase is not ProtocolPhase.INITIAL:
                self._advance(phase, "alice")
            self.state = state
        return self.state

    def transmit(self, lose_particle: bool = False, intercept: bool = False) -> ProtocolPhase:
        self._require(ProtocolPhase.AFTER_INPUT_CNOT, action="transmit")
        target = transmit(self.phase, lose_particle, intercept)
        self._advance(ProtocolPhase.PARTICLE_IN_TRANSIT, "alice")
        if intercept:
            self.intercepted = reduced_density(self.state, [P1_PATH, P1_SPIN])
        if target is ProtocolPhase.BOB_CONFIRMED:
            msg = self._send(ClassicalMessage(MessageKind.RECEIPT_CONFIRM))
        else:
            msg = self._send(ClassicalMessage(MessageKind.LOSS_REPORT))
        self._advance(target, "bob", message=msg)
        return self.phase

    def alice_measure(self, forced: tuple[int, int] | None = None) -> ClassicalMessage:
        self._require(ProtocolPhase.BOB_CONFIRMED, action="alice_measure")
        m2, ma, p, self.state = alice_measure(self.state, self.rng, forced)
        self.alice_outcome, self.alice_probability = (m2, ma), p
        msg = self._send(ClassicalMessage(MessageKind.ALICE_OUTCOMES, m2, ma))
        self._advance(ProtocolPhase.ALICE_MEASURED, "alice", message=msg,
                      outcome={"m2": m2, "ma": ma, "probability": p})
        return msg

    def bob_receive_and_process(self) -> StateVector:
        self._require(ProtocolPhase.ALICE_MEASURED, action="bob_receive_and_process")
        self.state = apply_gate(self.state, [P1_PATH], gates.bs_5050())
        self._advance(ProtocolPhase.BOB_BS2_DONE, "bob")
        self.state = apply_gate(self.state, [P1_SPIN, P3_SPIN], gates.cnot())
        self._advance(ProtocolPhase.BOB_CNOT_DONE, "bob")
        return self.state

    def bob_measure(self, forced: BobOutcome | tuple[int, int] | None = None) -> BobOutcome:
        self._require(ProtocolPhase.BOB_CNOT_DONE, action="bob_measure")
        bob, p, self.state = bob_measure(self.state, self.rng, forced)
        self.bob_outcome, self.bob_probability = bob, p
        self._advance(ProtocolPhase.BOB_MEASURED, "bob",
                      outcome={"path": bob.path_bit, "spin": bob.spin_bit, "probability": p})
        return bob

    def correct(self) -> BranchRecord:
        self._require(ProtocolPhase.BOB_MEASURED, action="correct")
        m2, ma = self.alice_outcome
        self.correction = correction_for(m2, ma, self.bob_outcome, self.table)
        self.state = apply_correction(self.state, self.correction)
        self.output_state = particle3_state(self.state)
        fid = _fidelity(self.config.input_state, self.output_state)
        self._advance(ProtocolPhase.CORRECTED, "bob", outcome={"correction": self.correction.value, "fidelity": fid})
        return BranchRecord(m2, ma, self.bob_outcome, self.alice_probability * self.bob_probability,
                            self.correction, self.output_state, fid)

    def recover_after_loss(self, forced: int | None = None) -> Recovery:
        self._require(ProtocolPhase.PARTICLE_LOST, action="recover_after_loss")
        self.recovery = recover_after_loss(self.state, self.rng, forced)
        self._advance(ProtocolPhase.RECOVERED, "alice",
                      outcome={"aux": self.recovery.aux_outcome, "probability": self.recovery.probability})
        return self.recovery

    def run_to_completion(self) -> BranchRecord:
        self.prepare()
        self.transmit()
        self.alice_measure()
        self.bob_receive_and_process()
        self.bob_measure()
        return self.correct()

    def transcript_dict(self) -> list[dict]:
        return [e.to_dict() for e in self.transcript]
