"""Closed-form fidelities, formula-vs-simulation checks, sweeps and the interception analysis."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .gates import Pauli
from .protocol import (
    BOB_OUTCOMES,
    CORRECTION_TABLE,
    ProtocolConfig,
    alice_measure,
    bob_measure,
    bob_receive_and_process,
    correction_closed_form,
    enumerate_branches,
    prepare,
)
from .statevec import (
    AUX_SPIN,
    P1_PATH,
    P1_SPIN,
    P2_SPIN,
    ZERO_PROB_CUTOFF,
    DensityMatrix,
    StateVectorError,
    ZeroProbabilityBranch,
    basis_ket,
    Basis,
    reduced_density,
    same_ray,
    subsystem_state,
)

EVE_PROBE_SEED = 20090817


class DegenerateBranch(ValueError):
    """The fidelity of a branch that occurs with zero probability is 0/0."""


def fidelity_case(m2: int, config: ProtocolConfig) -> float:
    a, b, g, d = config.alpha, config.beta, config.gamma, config.delta
    if m2 == 0:
        num, den = (a * g * g + b * d * d) ** 2, a * a * g * g + b * b * d * d
    elif m2 == 1:
        num, den = (b * g * g + a * d * d) ** 2, b * b * g * g + a * a * d * d
    else:
        raise ValueError(f"m2 must be 0 or 1, got {m2!r}")
    if den < ZERO_PROB_CUTOFF:
        raise DegenerateBranch(f"m2={m2} cannot occur for alpha={config.alpha}, gamma={config.gamma}")
    return num / den


def average_fidelity_formula(config: ProtocolConfig) -> float:
    """gamma^4 + delta^4 + 4 alpha beta gamma^2 delta^2, for real inputs only."""
    if config.input_phase != 0.0:
        raise ValueError("closed-form average fidelity is stated for real input amplitudes (phase 0)")
    g2, d2 = config.gamma**2, config.delta**2
    return g2 * g2 + d2 * d2 + 4 * config.alpha * config.beta * g2 * d2


def alice_branch_expected(m2: int, ma: int, config: ProtocolConfig) -> tuple[float, np.ndarray]:
    """Probability of Alice's outcome and the (unnormalized-then-normalized) particle-1 state.

    The state is returned on (path, spin) in the order |00>, |01>, |10>, |11>.
    """
    a, b = config.alpha, config.beta
    g, d = config.input_state
    c_pass, c_flip = (g, d) if m2 == 0 else (d, g)
    sign = 1 if ma == 0 else -1
    vec = np.zeros(4, dtype=complex)
    vec[0b10] = a * c_pass
    vec[0b01] = sign * 1j * b * c_flip
    p = float(np.vdot(vec, vec).real) / 2
    n = math.sqrt(2 * p)
    return p, (vec / n if n > 0 else vec)


def expected_output(m2: int, config: ProtocolConfig) -> np.ndarray:
    """Particle-3 state after Bob's correction, as given by the correction tables."""
    a, b = config.alpha, config.beta
    g, d = config.input_state
    v = np.array([a * g, b * d] if m2 == 0 else [b * g, a * d], dtype=complex)
    return v / np.linalg.norm(v)


def bob_joint_state_expected(config: ProtocolConfig) -> np.ndarray:
    """Particle-1 path, particle-1 spin, particle-3 spin after Bob's CNOT, for Alice outcome (0, 0)."""
    a, b = config.alpha, config.beta
    g, d = config.input_state
    v = np.zeros(8, dtype=complex)
    # index bits: path (a=0, b=1), spin1, spin3
    v[0b100] = a * g
    v[0b111] = -b * d
    v[0b000] = 1j * a * g
    v[0b011] = 1j * b * d
    return v / math.sqrt(2 * (a * a * abs(g) ** 2 + b * b * abs(d) ** 2))


def bob_joint_state_simulated(config: ProtocolConfig) -> np.ndarray:
    """Same amplitudes as :func:`bob_joint_state_expected`, from the simulator, global phase kept."""
    _, prepared = prepare(config)
    _, _, _, post = alice_measure(prepared, forced=(0, 0))
    state = bob_receive_and_process(post)
    t = np.tensordot(basis_ket(Basis.Z, 0).conj(), state.tensor(), axes=([0], [state.index_of(P2_SPIN)]))
    aux_axis = state.index_of(AUX_SPIN) - 1
    t = np.tensordot(basis_ket(Basis.X, 0).conj(), t, axes=([0], [aux_axis]))
    return t.reshape(-1)


@dataclass
class FidelityReport:
    per_branch: list[tuple[str, float, float | None]]
    case_fidelity_m2_0: float | None
    case_fidelity_m2_1: float | None
    average_formula: float
    average_enumerated: float
    max_abs_disagreement: float
    max_branch_disagreement: float = 0.0


def cross_validate(config: ProtocolConfig) -> FidelityReport:
    records = enumerate_branches(config)
    cases = {}
    for m2 in (0, 1):
        try:
            cases[m2] = fidelity_case(m2, config)
        except DegenerateBranch:
            cases[m2] = None
    branch_err = 0.0
    for r in records:
        if r.defined and cases[r.m2] is not None:
            branch_err = max(branch_err, abs(r.fidelity - cases[r.m2]))
    avg_enum = math.fsum(r.probability * r.fidelity for r in records if r.defined)
    avg_formula = average_fidelity_formula(config)
    return FidelityReport(
        per_branch=[(r.label, r.probability, r.fidelity) for r in records],
        case_fidelity_m2_0=cases[0],
        case_fidelity_m2_1=cases[1],
        average_formula=avg_formula,
        average_enumerated=avg_enum,
        max_abs_disagreement=abs(avg_formula - avg_enum),
        max_branch_disagreement=branch_err,
    )


# -- interception -------------------------------------------------------------


def _axis_states() -> list[np.ndarray]:
    s = 1 / math.sqrt(2)
    return [np.array(v, dtype=complex) for v in
            ([1, 0], [0, 1], [s, s], [s, -s], [s, 1j * s], [s, -1j * s])]


def probe_states(n_random: int = 50, seed: int = EVE_PROBE_SEED) -> list[np.ndarray]:
    """Haar-random single-qubit states followed by the six axis states."""
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n_random, 2)) + 1j * rng.normal(size=(n_random, 2))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return list(z) + _axis_states()


def eve_state(config: ProtocolConfig, input_state: Sequence[complex] | None = None) -> DensityMatrix:
    """Reduced (path, spin) state of particle 1 as it leaves Alice."""
    _, state = prepare(config, input_state)
    return reduced_density(state, [P1_PATH, P1_SPIN])


def eve_information(config: ProtocolConfig, probes: Sequence[Sequence[complex]] | None = None
                    ) -> tuple[DensityMatrix, float]:
    """Eve's state and the largest entrywise change of it over a set of input states."""
    rho = eve_state(config)
    probes = probe_states() if probes is None else probes
    spread = 0.0
    for psi in probes:
        other = eve_state(config, psi)
        spread = max(spread, float(np.max(np.abs(other.matrix - rho.matrix))))
    return rho, spread


def _premeasured_eve_states(config: ProtocolConfig, psi: Sequence[complex]) -> dict[tuple[int, int], np.ndarray]:
    _, state = prepare(config, psi)
    out = {}
    for m2 in (0, 1):
        for ma in (0, 1):
            try:
                _, _, _, post = alice_measure(state, forced=(m2, ma))
            except ZeroProbabilityBranch:
                continue
            out[(m2, ma)] = reduced_density(post, [P1_PATH, P1_SPIN]).matrix
    return out


def premature_measurement_leak(config: ProtocolConfig,
                               probe_a: Sequence[complex] = (1.0, 0.0),
                               probe_b: Sequence[complex] = (1 / math.sqrt(2), 1 / math.sqrt(2))) -> float:
    """Distance between Eve's states for two inputs when Alice measures before sending.

    For each of Alice's outcomes possible under both inputs, compare Eve's
    conditional (path, spin) state; return the largest entrywise difference.
    """
    sa = _premeasured_eve_states(config, probe_a)
    sb = _premeasured_eve_states(config, probe_b)
    shared = sa.keys() & sb.keys()
    return max((float(np.max(np.abs(sa[k] - sb[k]))) for k in shared), default=0.0)


# -- sweeps and verification -----------------------------------------------------


@dataclass
class SweepGrid:
    alphas: list[float]
    gammas: list[float]
    values: np.ndarray
    max_validation_error: float | None = None

    def rows(self):
        for i, a in enumerate(self.alphas):
            for j, g in enumerate(self.gammas):
                yield a, g, float(self.values[i, j])


def sweep(alphas: Sequence[float], gammas: Sequence[float], validate: bool = False) -> SweepGrid:
    alphas, gammas = [float(a) for a in alphas], [float(g) for g in gammas]
    if not alphas or not gammas:
        raise ValueError("sweep axes must be non-empty")
    values = np.empty((len(alphas), len(gammas)))
    worst = 0.0
    for i, a in enumerate(alphas):
        for j, g in enumerate(gammas):
            cfg = ProtocolConfig(a, g)
            values[i, j] = average_fidelity_formula(cfg)
            if validate:
                worst = max(worst, cross_validate(cfg).max_abs_disagreement)
    return SweepGrid(alphas, gammas, values, worst if validate else None)


def uniform_grid(steps: int) -> list[float]:
    return [float(x) for x in np.linspace(0.0, 1.0, steps)]


@dataclass
class VerificationReport:
    points: int = 0
    branches: int = 16
    checks: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def first_failure(self) -> str | None:
        return self.failures[0] if self.failures else None


def verify_point(config: ProtocolConfig, tolerance: float = 1e-10,
                 table: Mapping[tuple[int, int, int, int], Pauli] = CORRECTION_TABLE,
                 report: VerificationReport | None = None) -> VerificationReport:
    """Check one parameter point against the closed forms.

    Probabilities and fidelities are compared at ``tolerance``; states are
    compared phase-canonically at 1e-8 (or ``tolerance`` if larger).
    """
    report = report or VerificationReport()
    state_tol = max(1e-8, tolerance)
    where = f"alpha={config.alpha:.6g} gamma={config.gamma:.6g}"

    def check(ok: bool, item) -> None:
        report.checks += 1
        if not ok:
            report.failures.append(f"{where}: {item() if callable(item) else item}")

    _, prepared = prepare(config)
    for m2 in (0, 1):
        for ma in (0, 1):
            p_exp, s_exp = alice_branch_expected(m2, ma, config)
            try:
                _, _, p, post = alice_measure(prepared, forced=(m2, ma))
            except ZeroProbabilityBranch as exc:
                check(p_exp < ZERO_PROB_CUTOFF, f"alice ({m2},{ma}) probability {exc.probability} vs {p_exp}")
                continue
            check(abs(p - p_exp) <= tolerance, f"alice ({m2},{ma}) probability {p!r} vs {p_exp!r}")
            try:
                p1 = subsystem_state(post, [P1_PATH, P1_SPIN]).amps
                check(same_ray(p1, s_exp, state_tol), f"alice ({m2},{ma}) particle-1 state")
            except StateVectorError as exc:
                check(False, f"alice ({m2},{ma}) particle-1 state: {exc}")
            processed = bob_receive_and_process(post)
            for bob in BOB_OUTCOMES:
                _, pb, _ = bob_measure(processed, forced=bob)
                check(abs(pb - 0.25) <= tolerance, f"bob ({m2},{ma},{bob}) probability {pb!r} vs 0.25")

    records = enumerate_branches(config, table)
    check(abs(math.fsum(r.probability for r in records) - 1.0) <= tolerance, "branch probabilities sum")
    for r in records:
        name = f"branch (m2={r.m2}, ma={r.ma}, path={'ab'[r.bob.path_bit]}, spin={r.bob.spin_bit})"
        check(r.correction is correction_closed_form(r.m2, r.ma, r.bob), f"{name} correction {r.correction.value}")
        if not r.defined:
            continue
        check(same_ray(r.output_state, expected_output(r.m2, config), state_tol),
              lambda: f"{name} corrected output {np.round(r.output_state, 6)}")
        f_case = fidelity_case(r.m2, config)
        check(abs(r.fidelity - f_case) <= tolerance, f"{name} fidelity {r.fidelity!r} vs {f_case!r}")
    if config.input_phase == 0.0:
        f_enum = math.fsum(r.probability * r.fidelity for r in records if r.defined)
        f_formula = average_fidelity_formula(config)
        check(abs(f_enum - f_formula) <= tolerance, f"average fidelity {f_enum!r} vs {f_formula!r}")
    report.points += 1
    return report


def verify_grid(alphas: Sequence[float], gammas: Sequence[float], tolerance: float = 1e-10,
                table: Mapping[tuple[int, int, int, int], Pauli] = CORRECTION_TABLE) -> VerificationReport:
    report = VerificationReport()
    for a in alphas:
        for g in gammas:
            verify_point(ProtocolConfig(float(a), float(g)), tolerance, table, report)
    return report
