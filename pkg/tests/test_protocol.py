import json
import math

import numpy as np
import pytest

from pathspin.gates import Pauli
from pathspin.protocol import (
    BOB_OUTCOMES,
    CORRECTION_TABLE,
    BobOutcome,
    ClassicalMessage,
    MessageKind,
    ProtocolConfig,
    ProtocolOrderViolation,
    ProtocolPhase,
    ProtocolRun,
    alice_measure,
    bob_measure,
    bob_receive_and_process,
    correction_closed_form,
    correction_for,
    enumerate_branches,
    prepare,
    recover_after_loss,
    run_sampled,
    transmit,
)
from pathspin.statevec import (
    P1_PATH,
    P1_SPIN,
    P2_SPIN,
    ZeroProbabilityBranch,
    reduced_density,
    same_ray,
    subsystem_state,
)

from . import oracle

S = 2**-0.5
P1 = [P1_PATH, P1_SPIN]


class TestConfig:
    def test_derived_amplitudes(self):
        c = ProtocolConfig(0.6, 0.8)
        assert c.beta == pytest.approx(0.8, abs=1e-15)
        assert c.delta == pytest.approx(0.6, abs=1e-15)

    @pytest.mark.parametrize("kw", [dict(alpha=1.5, gamma=0.5), dict(alpha=0.5, gamma=-0.1),
                                    dict(alpha=float("nan"), gamma=0.5), dict(alpha=0.5, gamma=0.5, seed=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ProtocolConfig(**kw)


class TestPrepare:
    def test_balanced_basis_input(self):
        phase, s = prepare(ProtocolConfig(S, 1.0))
        assert phase is ProtocolPhase.AFTER_INPUT_CNOT
        expected = np.zeros(32, dtype=complex)
        expected[0b10000] = S
        expected[0b01110] = 1j * S
        np.testing.assert_allclose(s.amps, expected, atol=1e-15)

    def test_transmission_only_is_product(self):
        c = ProtocolConfig(1.0, 0.8)
        _, s = prepare(c)
        expected = oracle.kron_all([0, 1], [1, 0], [0.8, 0.6], [1, 0], [1, 0])
        np.testing.assert_allclose(s.amps, expected, atol=1e-15)

    def test_four_term_state(self):
        c = ProtocolConfig(0.6, 0.8)
        a, b, g, d = 0.6, 0.8, 0.8, 0.6
        _, s = prepare(c)
        expected = np.zeros(32, dtype=complex)
        expected[0b10000] = a * g
        expected[0b01110] = 1j * b * g
        expected[0b10100] = a * d
        expected[0b01010] = 1j * b * d
        np.testing.assert_allclose(s.amps, expected, atol=1e-15)
        np.testing.assert_allclose(s.amps, oracle.protocol_state(a, g), atol=1e-14)


class TestTransmit:
    def test_confirmed(self):
        assert transmit(ProtocolPhase.AFTER_INPUT_CNOT) is ProtocolPhase.BOB_CONFIRMED

    def test_lost_and_intercepted(self):
        assert transmit(ProtocolPhase.AFTER_INPUT_CNOT, lose_particle=True) is ProtocolPhase.PARTICLE_LOST
        assert transmit(ProtocolPhase.AFTER_INPUT_CNOT, intercept=True) is ProtocolPhase.PARTICLE_LOST

    def test_out_of_order(self):
        with pytest.raises(ProtocolOrderViolation):
            transmit(ProtocolPhase.AFTER_AUX_CNOT)

    def test_alice_cannot_measure_before_transmit(self):
        run = ProtocolRun(ProtocolConfig(0.6, 0.8))
        run.prepare()
        with pytest.raises(ProtocolOrderViolation):
            run.alice_measure()


class TestAliceMeasure:
    def setup_method(self):
        self.c = ProtocolConfig(0.6, 0.8)
        self.state = prepare(self.c)[1]

    def test_row_one(self):
        a, b, g, d = 0.6, 0.8, 0.8, 0.6
        m2, ma, p, post = alice_measure(self.state, forced=(0, 0))
        assert (m2, ma) == (0, 0)
        assert p == pytest.approx((a * a * g * g + b * b * d * d) / 2, abs=1e-14)
        expected = np.array([0, 1j * b * d, a * g, 0])
        assert same_ray(subsystem_state(post, P1).amps, expected / np.linalg.norm(expected))

    def test_row_four(self):
        a, b, g, d = 0.6, 0.8, 0.8, 0.6
        _, _, p, post = alice_measure(self.state, forced=(1, 1))
        assert p == pytest.approx((a * a * d * d + b * b * g * g) / 2, abs=1e-14)
        expected = np.array([0, -1j * b * g, a * d, 0])
        assert same_ray(subsystem_state(post, P1).amps, expected / np.linalg.norm(expected))

    def test_probabilities_sum_to_one(self):
        total = sum(alice_measure(self.state, forced=(m2, ma))[2] for m2 in (0, 1) for ma in (0, 1))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_impossible_forced_outcome(self):
        state = prepare(ProtocolConfig(1.0, 1.0))[1]
        with pytest.raises(ZeroProbabilityBranch):
            alice_measure(state, forced=(1, 0))

    def test_input_destroyed(self):
        # particle 2 ends in a z eigenstate whatever the input was
        for m2 in (0, 1):
            _, _, _, post = alice_measure(self.state, forced=(m2, 0))
            rho = reduced_density(post, [P2_SPIN]).matrix
            np.testing.assert_allclose(rho, np.diag([1 - m2, m2]), atol=1e-12)


class TestBob:
    def test_joint_state_after_cnot(self):
        a, b, g, d = 0.6, 0.8, 0.8, 0.6
        _, _, _, post = alice_measure(prepare(ProtocolConfig(a, g))[1], forced=(0, 0))
        s = bob_receive_and_process(post)
        # contract particle 2 with <0| and the auxiliary with <0_x|, keep the global phase
        full = s.amps.reshape(2, 2, 2, 2, 2)
        part = np.einsum("pqrst,r,s->pqt", full, [1, 0], oracle.PLUS).reshape(-1)
        n = math.sqrt(2 * (a * a * g * g + b * b * d * d))
        expected = np.zeros(8, dtype=complex)
        expected[0b100] = a * g / n
        expected[0b111] = -b * d / n
        expected[0b000] = 1j * a * g / n
        expected[0b011] = 1j * b * d / n
        np.testing.assert_allclose(part, expected, atol=1e-14)

    def test_balanced_branch_equal_magnitudes(self):
        _, _, _, post = alice_measure(prepare(ProtocolConfig(S, 1.0))[1], forced=(0, 0))
        s = bob_receive_and_process(post)
        mags = np.abs(s.amps[np.abs(s.amps) > 1e-12])
        np.testing.assert_allclose(mags, 0.5, atol=1e-14)
        assert len(mags) == 4

    def test_cnot_copies_spin_onto_particle3(self):
        _, _, _, post = alice_measure(prepare(ProtocolConfig(0.6, 0.8))[1], forced=(0, 1))
        t = bob_receive_and_process(post).tensor()
        for idx in zip(*np.nonzero(np.abs(t) > 1e-14)):
            # P1.Spin is register position 1, P3.Spin position 4
            assert idx[1] == idx[4]

    @pytest.mark.parametrize("alpha,gamma", [(0.6, 0.8), (0.1, 0.3), (S, 0.5), (0.95, 0.05)])
    def test_outcomes_uniform(self, alpha, gamma):
        state = prepare(ProtocolConfig(alpha, gamma))[1]
        for m2 in (0, 1):
            for ma in (0, 1):
                processed = bob_receive_and_process(alice_measure(state, forced=(m2, ma))[3])
                probs = [bob_measure(processed, forced=o)[1] for o in BOB_OUTCOMES]
                np.testing.assert_allclose(probs, 0.25, atol=1e-12)
                assert sum(probs) == pytest.approx(1.0, abs=1e-12)


class TestCorrections:
    def test_table_examples(self):
        assert correction_for(0, 0, BobOutcome(0, 0)) is Pauli.I
        assert correction_for(0, 1, BobOutcome(0, 0)) is Pauli.Z
        assert correction_for(1, 0, BobOutcome(0, 1)) is Pauli.Y

    def test_closed_form_agrees_with_table(self):
        for (m2, ma, p, s), pauli in CORRECTION_TABLE.items():
            assert correction_closed_form(m2, ma, (p, s)) is pauli
        assert len(CORRECTION_TABLE) == 16

    @pytest.mark.parametrize("alpha,gamma,phase", [(0.6, 0.8, 0.0), (0.3, 0.45, 0.0), (S, 0.2, 0.0),
                                                   (0.6, 0.8, 1.3), (0.2, 0.7, -2.0)])
    def test_enumeration_matches_kron_oracle(self, alpha, gamma, phase):
        c = ProtocolConfig(alpha, gamma, input_phase=phase)
        for r in enumerate_branches(c):
            p, out = oracle.run_branch(alpha, gamma, r.m2, r.ma, *r.bob, r.correction.value,
                                       delta_c=c.input_state[1])
            assert r.probability == pytest.approx(p, abs=1e-13)
            assert same_ray(r.output_state, out)
            assert r.fidelity == pytest.approx(abs(np.vdot(c.input_state, out)) ** 2, abs=1e-12)

    def test_output_independent_of_bob_and_aux(self):
        recs = enumerate_branches(ProtocolConfig(0.35, 0.6, input_phase=0.4))
        for m2 in (0, 1):
            outs = [r.output_state for r in recs if r.m2 == m2]
            assert len(outs) == 8
            assert all(same_ray(o, outs[0]) for o in outs)


class TestEnumerate:
    def test_balanced_all_perfect(self):
        recs = enumerate_branches(ProtocolConfig(S, 0.37))
        assert all(r.fidelity == pytest.approx(1.0, abs=1e-12) for r in recs)

    def test_branch_probability_example(self):
        recs = enumerate_branches(ProtocolConfig(0.6, 0.8))
        r = recs[0]
        assert r.key == (0, 0, 0, 0)
        # (0.36*0.64 + 0.64*0.36) / 2 / 4
        assert r.probability == pytest.approx(0.0576, abs=1e-14)

    def test_weighted_fidelity(self):
        a, g = 0.3, 0.55
        b, d = math.sqrt(1 - a * a), math.sqrt(1 - g * g)
        recs = enumerate_branches(ProtocolConfig(a, g))
        f = math.fsum(r.probability * r.fidelity for r in recs)
        assert f == pytest.approx(g**4 + d**4 + 4 * a * b * g * g * d * d, abs=1e-12)

    def test_degenerate_branches_recorded(self):
        recs = enumerate_branches(ProtocolConfig(1.0, 1.0))
        dead = [r for r in recs if r.m2 == 1]
        assert all(r.probability == 0.0 and r.fidelity is None and r.output_state is None for r in dead)
        assert math.fsum(r.probability for r in recs) == pytest.approx(1.0, abs=1e-12)


class TestSampling:
    def test_deterministic(self):
        c = ProtocolConfig(0.6, 0.8, seed=42)
        a = [(r.run_index, r.branch.key) for r in run_sampled(c, 500)]
        b = [(r.run_index, r.branch.key) for r in run_sampled(c, 500)]
        assert a == b

    def test_seed_changes_sequence(self):
        a = [r.branch.key for r in run_sampled(ProtocolConfig(0.6, 0.8, seed=1), 200)]
        b = [r.branch.key for r in run_sampled(ProtocolConfig(0.6, 0.8, seed=2), 200)]
        assert a != b

    def test_prefix_stable(self):
        # per-run streams: the first runs do not depend on how many runs are requested
        c = ProtocolConfig(0.6, 0.8, seed=9)
        short = [r.branch.key for r in run_sampled(c, 10)]
        long = [r.branch.key for r in run_sampled(c, 100)][:10]
        assert short == long

    def test_rejects_zero_runs(self):
        with pytest.raises(ValueError):
            run_sampled(ProtocolConfig(0.6, 0.8), 0)

    def test_sampled_records_match_enumeration(self):
        c = ProtocolConfig(0.6, 0.8, seed=3)
        table = {r.key: r for r in enumerate_branches(c)}
        for run in run_sampled(c, 300):
            ref = table[run.branch.key]
            assert run.branch.probability == pytest.approx(ref.probability, abs=1e-14)
            assert run.branch.fidelity == pytest.approx(ref.fidelity, abs=1e-14)


class TestRecovery:
    @pytest.mark.parametrize("alpha,gamma,phase", [(0.6, 0.8, 0.0), (0.3, 0.1, 0.9), (S, 0.5, -1.0)])
    def test_both_paths(self, alpha, gamma, phase):
        c = ProtocolConfig(alpha, gamma, input_phase=phase)
        state = prepare(c)[1]
        for aux, p_expected in ((0, alpha**2), (1, 1 - alpha**2)):
            if p_expected < 1e-14:
                continue
            rec = recover_after_loss(state, forced=aux)
            assert rec.aux_outcome == aux
            assert rec.probability == pytest.approx(p_expected, abs=1e-12)
            assert abs(np.vdot(c.input_state, rec.recovered_input)) ** 2 == pytest.approx(1.0, abs=1e-12)

    def test_aux_probabilities_brute_force(self):
        c = ProtocolConfig(0.6, 0.8)
        psi = oracle.protocol_state(0.6, 0.8)
        assert oracle.probability(psi, [1, 0], 3, 5) == pytest.approx(0.36, abs=1e-14)
        assert recover_after_loss(prepare(c)[1], forced=0).probability == pytest.approx(0.36, abs=1e-14)

    def test_no_operation_on_outcome_zero(self):
        rec = recover_after_loss(prepare(ProtocolConfig(0.6, 0.8))[1], forced=0)
        np.testing.assert_allclose(rec.recovered_input, [0.8, 0.6], atol=1e-14)


class TestProtocolRun:
    def test_full_run(self):
        run = ProtocolRun(ProtocolConfig(0.6, 0.8, seed=5))
        rec = run.run_to_completion()
        assert run.phase is ProtocolPhase.CORRECTED
        phases = [e.phase for e in run.transcript]
        assert phases == [
            ProtocolPhase.INITIAL, ProtocolPhase.AFTER_BS1, ProtocolPhase.AFTER_SPIN_FLIP,
            ProtocolPhase.AFTER_AUX_CNOT, ProtocolPhase.AFTER_INPUT_CNOT, ProtocolPhase.PARTICLE_IN_TRANSIT,
            ProtocolPhase.BOB_CONFIRMED, ProtocolPhase.ALICE_MEASURED, ProtocolPhase.BOB_BS2_DONE,
            ProtocolPhase.BOB_CNOT_DONE, ProtocolPhase.BOB_MEASURED, ProtocolPhase.CORRECTED,
        ]
        kinds = [m.kind for m in run.messages]
        assert kinds == [MessageKind.RECEIPT_CONFIRM, MessageKind.ALICE_OUTCOMES]
        assert rec.correction is correction_for(rec.m2, rec.ma, rec.bob)
        json.dumps(run.transcript_dict())

    def test_forced_run_matches_enumeration(self):
        c = ProtocolConfig(0.6, 0.8)
        ref = {r.key: r for r in enumerate_branches(c)}
        run = ProtocolRun(c)
        run.prepare()
        run.transmit()
        run.alice_measure(forced=(1, 0))
        run.bob_receive_and_process()
        run.bob_measure(forced=(1, 1))
        rec = run.correct()
        assert rec.probability == pytest.approx(ref[(1, 0, 1, 1)].probability, abs=1e-14)
        assert same_ray(rec.output_state, ref[(1, 0, 1, 1)].output_state)

    def test_loss_then_recovery(self):
        run = ProtocolRun(ProtocolConfig(0.6, 0.8, seed=1))
        run.prepare()
        assert run.transmit(lose_particle=True) is ProtocolPhase.PARTICLE_LOST
        assert run.messages[-1].kind is MessageKind.LOSS_REPORT
        with pytest.raises(ProtocolOrderViolation):
            run.alice_measure()
        rec = run.recover_after_loss()
        assert abs(np.vdot([0.8, 0.6], rec.recovered_input)) ** 2 == pytest.approx(1.0, abs=1e-12)
        assert run.phase is ProtocolPhase.RECOVERED

    def test_recovery_refused_after_alice_measured(self):
        run = ProtocolRun(ProtocolConfig(0.6, 0.8))
        run.prepare()
        run.transmit()
        run.alice_measure()
        with pytest.raises(ProtocolOrderViolation):
            run.recover_after_loss()

    def test_intercept(self):
        run = ProtocolRun(ProtocolConfig(0.6, 0.8))
        run.prepare()
        run.transmit(intercept=True)
        assert run.phase is ProtocolPhase.PARTICLE_LOST
        np.testing.assert_allclose(run.intercepted.matrix, np.diag([0, 0.64, 0.36, 0]), atol=1e-14)

    def test_bob_cannot_skip_ahead(self):
        run = ProtocolRun(ProtocolConfig(0.6, 0.8))
        run.prepare()
        run.transmit()
        with pytest.raises(ProtocolOrderViolation):
            run.bob_receive_and_process()
        with pytest.raises(ProtocolOrderViolation):
            run.correct()


class TestMessages:
    def test_outcome_bits_only_on_alice_outcomes(self):
        ClassicalMessage(MessageKind.ALICE_OUTCOMES, 0, 1)
        with pytest.raises(ValueError):
            ClassicalMessage(MessageKind.RECEIPT_CONFIRM, 0, 1)
        with pytest.raises(ValueError):
            ClassicalMessage(MessageKind.ALICE_OUTCOMES, 2, 0)
