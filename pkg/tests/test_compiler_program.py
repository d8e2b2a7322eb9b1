"""Whole-program tests: compilation shape, determinism, static closure, and
one full round checked phase by phase against the reference."""

import numpy as np
import pytest

from chemnn import analysis, oracle
from chemnn.compiler import (
    GATED_PHASES,
    NetSpec,
    TrainSpec,
    WeightSet,
    compile_feedforward,
    compile_program,
)
from chemnn.crn import CrnError, crn_from_text, crn_to_text
from chemnn.integrate import IntegratorConfig, PhaseSchedule, run_phased
from chemnn.training import PhasedRunner

from conftest import JUDGE_RATES, XOR_MINUS, XOR_PLUS, XOR_SAMPLES

EXPECTED_PHASE_SIZES = {
    "O1": 30, "O3": 8, "O5": 8, "O7": 68, "O9": 4, "O11": 16, "O13": 36,
    "O15": 16, "O17": 2, "O19": 8, "O21": 18, "O23": 44, "O25": 11,
    "O27": 266, "O29": 72, "O31": 38,
}


class TestCompile:
    def test_program_dimensions_golden(self, net221, xor_trainspec):
        program, x0 = compile_program(net221, xor_trainspec)
        assert program.crn.n_species == 268
        assert program.crn.n_reactions == 645
        assert {p: len(ix) for p, ix in program.phase_index.items()} == EXPECTED_PHASE_SIZES
        assert len(x0.values) == 268

    def test_deterministic(self, net221, xor_trainspec):
        a, xa = compile_program(net221, xor_trainspec)
        b, xb = compile_program(net221, xor_trainspec)
        assert crn_to_text(a.crn) == crn_to_text(b.crn)
        np.testing.assert_array_equal(xa.values, xb.values)

    def test_round_trip_serialization(self, net221, xor_trainspec):
        program, _ = compile_program(net221, xor_trainspec)
        text = crn_to_text(program.crn)
        assert crn_to_text(crn_from_text(text)) == text

    def test_every_reaction_has_one_phase(self, net221, xor_trainspec):
        program, _ = compile_program(net221, xor_trainspec)
        assert all(r.phase in program.phases for r in program.crn.reactions)
        assert all(program.phase_index[p] for p in program.phases)  # no empty phase

    def test_roles_cover_registry(self, net221, xor_trainspec):
        program, _ = compile_program(net221, xor_trainspec)
        roles = program.crn.registry.roles
        missing = [n for n in program.crn.registry.names if n not in roles]
        assert missing == []

    def test_learning_phases_gated(self, net221, xor_trainspec):
        program, _ = compile_program(net221, xor_trainspec)
        for phase in GATED_PHASES:
            for j in program.phase_index[phase]:
                rxn = program.crn.reactions[j]
                assert rxn.reactant.coeff("gate") == 1
                assert rxn.product.coeff("gate") == 1

    def test_initial_state_contents(self, net221, xor_trainspec):
        program, x0 = compile_program(net221, xor_trainspec)
        assert x0.get("half") == 0.5
        assert x0.get("one") == 1.0
        assert x0.get("lr") == 0.9
        assert x0.get("c1_1") == 1.0 and x0.get("c2_2") == 1.0
        assert x0.get("c1_2") == pytest.approx(1e-6)
        assert x0.get("x1_1") == 1.0 and x0.get("d_3") == 0.0
        assert x0.get("w1_1_1p") == 3.0 and x0.get("b2_1m") == 4.0
        assert x0.get("gate") == pytest.approx(1e-6)

    def test_non_bistable_rates_rejected(self, net221, xor_weights):
        with pytest.raises(CrnError, match="bistab"):
            TrainSpec(
                samples=XOR_SAMPLES, batch_size=2, eta=0.9, threshold=0.5,
                judge_rates=(1.0, 1.0, 1.0, 1.0), init_weights=xor_weights,
            )

    def test_threshold_must_match_unstable_point(self, net221, xor_weights):
        with pytest.raises(CrnError, match="threshold"):
            TrainSpec(
                samples=XOR_SAMPLES, batch_size=2, eta=0.9, threshold=0.4,
                judge_rates=JUDGE_RATES, init_weights=xor_weights,
            )

    def test_negative_samples_rejected(self, xor_weights):
        bad = XOR_SAMPLES.copy()
        bad[0, 0] = -0.5
        with pytest.raises(CrnError, match="nonneg"):
            TrainSpec(samples=bad, batch_size=2, eta=0.9, threshold=0.5,
                      init_weights=xor_weights)

    def test_batch_must_divide_samples(self, xor_weights):
        with pytest.raises(CrnError):
            TrainSpec(samples=XOR_SAMPLES, batch_size=3, eta=0.9, threshold=0.5,
                      init_weights=xor_weights)


class TestWeightSet:
    def test_split_recombine_round_trip(self):
        rng = np.random.default_rng(11)
        w1 = rng.normal(0, 2, (2, 3))
        w2 = rng.normal(0, 2, (1, 3))
        ws = WeightSet.from_real(w1, w2)
        d1, d2 = ws.decoded()
        np.testing.assert_array_equal(d1, w1)
        np.testing.assert_array_equal(d2, w2)
        assert np.all(ws.w1_plus >= 0) and np.all(ws.w1_minus >= 0)

    def test_stacked_round_trip(self):
        ws = WeightSet.from_stacked(XOR_PLUS, XOR_MINUS)
        plus, minus = ws.stacked()
        np.testing.assert_array_equal(plus, XOR_PLUS)
        np.testing.assert_array_equal(minus, XOR_MINUS)

    def test_negative_rail_rejected(self):
        with pytest.raises(CrnError):
            WeightSet.from_stacked(XOR_PLUS, -XOR_MINUS)


def _is_pure_decay(rxn, name):
    return rxn.reactant.terms == {name: 1} and not rxn.product


class TestPhaseClosure:
    def test_no_intermediate_phase_destroys_pending_values(self, net221, xor_trainspec):
        """A species produced in one phase and read later must not have a
        pure-decay reaction in any phase between producer and reader."""
        program, _ = compile_program(net221, xor_trainspec)
        order = {p: i for i, p in enumerate(program.phases)}
        producers = {}
        readers = {}
        decayers = {}
        for rxn in program.crn.reactions:
            k = order[rxn.phase]
            for name, delta in rxn.net().items():
                if delta > 0:
                    producers.setdefault(name, set()).add(k)
            for name in rxn.reactant.species():
                if name != "gate":
                    readers.setdefault(name, set()).add(k)
                if _is_pure_decay(rxn, name):
                    decayers.setdefault(name, set()).add(k)
        violations = []
        n = len(program.phases)
        for name, reads in readers.items():
            produced = producers.get(name)
            if not produced:
                continue  # loaded by the initial state, never rewritten
            for read_at in reads:
                # nearest producer at or before the read, cyclically
                gap = min((read_at - p) % n for p in produced)
                start = (read_at - gap) % n
                between = {(start + offset) % n for offset in range(1, gap)}
                bad = between & decayers.get(name, set())
                if bad:
                    violations.append((name, program.phases[start], program.phases[read_at],
                                       [program.phases[b] for b in sorted(bad)]))
        assert violations == []


class TestFullRound:
    def test_phase_boundaries_match_reference(self, net221, xor_trainspec):
        program, x0 = compile_program(net221, xor_trainspec)
        schedule = PhaseSchedule.uniform(program.phases, 50.0, cycles=1)
        traj = run_phased(program, x0, schedule, IntegratorConfig(), record="boundaries")
        w1, w2 = xor_trainspec.init_weights.decoded()
        batch = oracle.Batch.from_samples(XOR_SAMPLES[:2])
        reports = analysis.verify_against_oracle(traj, program, batch, w1, w2)
        assert {r.phase for r in reports} == {"O9", "O13", "O17", "O21", "O23", "O27", "O29"}
        for report in reports:
            assert report.max_abs_dev < 1e-4, f"{report.phase}: {report.max_abs_dev}"

    def test_sign_resolution_leaves_single_rail(self, net221, xor_trainspec):
        program, x0 = compile_program(net221, xor_trainspec)
        schedule = PhaseSchedule.uniform(program.phases, 50.0, cycles=1)
        traj = run_phased(program, x0, schedule, IntegratorConfig(), record="boundaries")
        after = dict(traj.boundary_states())["O9"]
        for pair in program.probes.net1.values():
            assert min(after.get(pair[0]), after.get(pair[1])) < 1e-8

    def test_second_round_feedforward_still_clean(self, net221, xor_trainspec):
        """Clear-out and unit replenishment leave the next round's presets valid."""
        program, x0 = compile_program(net221, xor_trainspec)
        runner = PhasedRunner(program, 50.0)
        state, first = runner.run_cycle(x0)
        w1, w2 = first["O29"], None
        dec_w1, dec_w2 = (
            np.array([[analysis.decode_dual_rail(first["O29"], program.probes.weights1[(i, j)])
                       for j in (1, 2, 3)] for i in (1, 2)]),
            np.array([[analysis.decode_dual_rail(first["O29"], program.probes.weights2[(1, a)])
                       for a in (1, 2, 3)]]),
        )
        state, second = runner.run_cycle(state)
        batch = oracle.Batch.from_samples(XOR_SAMPLES[2:4])
        trace = oracle.forward(dec_w1, dec_w2, batch)
        after = second["O21"]
        # window residue scales like exp(-|net| T); the second round's
        # output nets sit near 0.2, leaving a few 1e-4 of rail leakage
        for (o, l), name in sorted(program.probes.outputs.items()):
            assert after.get(name) == pytest.approx(float(trace.outputs[l - 1]), abs=1e-3)


class TestFeedforwardGeneralization:
    def test_wider_network_matches_direct_computation(self):
        net = NetSpec(input_width=3, hidden_width=4, output_width=2)

        def direct(w1, w2, x):
            h = 1.0 / (1.0 + np.exp(-(w1[:, :3] @ x + w1[:, 3])))
            return 1.0 / (1.0 + np.exp(-(w2[:, :4] @ h + w2[:, 4])))

        # draw a configuration whose net inputs stay away from zero so the
        # finite windows resolve every rail pair cleanly
        for seed in range(100):
            rng = np.random.default_rng(seed)
            w1 = rng.normal(0, 1.5, (4, 4))
            w2 = rng.normal(0, 1.5, (2, 5))
            inputs = rng.uniform(0.2, 1.0, (2, 3))
            nets_hidden = np.stack([w1[:, :3] @ row + w1[:, 3] for row in inputs])
            nets_out = np.stack(
                [w2[:, :4] @ (1 / (1 + np.exp(-(w1[:, :3] @ row + w1[:, 3])))) + w2[:, 4]
                 for row in inputs]
            )
            if min(np.abs(nets_hidden).min(), np.abs(nets_out).min()) > 0.25:
                break
        else:
            pytest.fail("no well-separated draw found")
        expected = np.stack([direct(w1, w2, row) for row in inputs], axis=1)

        program, x0 = compile_feedforward(net, WeightSet.from_real(w1, w2), inputs,
                                          default_conc=0.0)
        runner = PhasedRunner(program, 60.0)
        _, boundaries = runner.run_cycle(x0)
        final = boundaries["O21"]
        for o in (1, 2):
            for l in (1, 2):
                assert final.get(f"y{o}_{l}") == pytest.approx(
                    expected[o - 1, l - 1], abs=1e-6
                )

    def test_input_shape_validated(self):
        net = NetSpec()
        ws = WeightSet.from_stacked(XOR_PLUS, XOR_MINUS)
        with pytest.raises(CrnError):
            compile_feedforward(net, ws, np.ones((2, 3)))
