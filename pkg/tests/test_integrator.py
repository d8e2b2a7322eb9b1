"""Stepper accuracy, clamping, equilibrium detection and phased execution."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chemnn.compiler import build_addition_gadget, build_judgment, build_sigmoid, assemble, NetSpec
from chemnn.crn import Complex, Crn, CrnError, Reaction, SpeciesRegistry, State
from chemnn.integrate import (
    IntegrationError,
    IntegratorConfig,
    Kinetics,
    PhaseSchedule,
    Trajectory,
    integrate,
    integrate_to_equilibrium,
    run_phased,
)
from chemnn.crn import rhs as reference_rhs

from conftest import JUDGE_RATES, MiniProgram, fragment_program, run_windows


def _decay_crn():
    return Crn(
        SpeciesRegistry(("c",)),
        [Reaction(Complex({"c": 1}), Complex({}), 1.0)],
    )


class TestIntegrate:
    def test_pure_decay_closed_form(self):
        traj = integrate(_decay_crn(), State(_decay_crn().registry, np.array([1.0])), 1.0)
        assert traj.times[-1] == pytest.approx(1.0)
        assert traj.final_state().get("c") == pytest.approx(math.exp(-1.0), abs=1e-8)

    def test_addition_gadget_settles_at_sum(self):
        crn = build_addition_gadget()
        x0 = State.from_dict(crn.registry, {"a": 1.0, "b": 2.0, "c": 0.0})
        traj = integrate(crn, x0, 20.0)
        assert traj.final_state().get("c") == pytest.approx(3.0, abs=1e-6)

    def test_sigmoid_rail_limit(self):
        # with the rail preset at one half, the surviving rail settles at 1/(1+e^-n)
        frag = build_sigmoid("hidden", NetSpec(), p_tilde=1)
        program = fragment_program(frag, ("O13",))
        traj = run_windows(program, {"n1_1_1p": 1.0, "h1_1p": 0.5}, [("O13", 30.0)])
        assert traj.final_state().get("h1_1p") == pytest.approx(0.7310585786300049, abs=1e-6)
        assert traj.final_state().get("h1_1") == pytest.approx(0.7310585786300049, abs=1e-6)

    def test_nonpositive_duration_rejected(self):
        with pytest.raises(IntegrationError):
            integrate(_decay_crn(), State(_decay_crn().registry, np.array([1.0])), 0.0)

    def test_rk4_fourth_order_scaling(self):
        crn = _decay_crn()
        x0 = State(crn.registry, np.array([1.0]))
        errors = []
        for step in (0.1, 0.05):
            cfg = IntegratorConfig(method="rk4", step=step, clamp_negative=False)
            end = integrate(crn, x0, 1.0, cfg).final_state().get("c")
            errors.append(abs(end - math.exp(-1.0)))
        ratio = errors[0] / errors[1]
        assert 13.0 < ratio < 19.0

    def test_fast_kinetics_matches_reference_rhs(self, net221, xor_trainspec):
        from chemnn.compiler import compile_program

        program, x0 = compile_program(net221, xor_trainspec)
        kin = Kinetics(program.crn)
        rng = np.random.default_rng(7)
        for _ in range(3):
            values = rng.uniform(0.0, 2.0, size=program.crn.n_species)
            state = State(program.crn.registry, values)
            np.testing.assert_allclose(
                kin(values), reference_rhs(program.crn, state), rtol=1e-12, atol=1e-12
            )

    def test_stiffness_diagnostic_names_species(self):
        # second-order self-amplification blows up in finite time
        crn = Crn(
            SpeciesRegistry(("a",)),
            [Reaction(Complex({"a": 2}), Complex({"a": 3}), 1.0)],
        )
        with pytest.raises(IntegrationError, match="'a'"):
            integrate(crn, State(crn.registry, np.array([2.0])), 1.0)


class TestConservationAlongTrajectories:
    def test_annihilation_difference_constant(self):
        crn = Crn(
            SpeciesRegistry(("np", "nm")),
            [Reaction(Complex({"np": 1, "nm": 1}), Complex({}), 1.0)],
        )
        cfg = IntegratorConfig()
        traj = integrate(crn, State.from_dict(crn.registry, {"np": 3.0, "nm": 1.0}), 10.0, cfg)
        diff = traj.series("np") - traj.series("nm")
        assert np.max(np.abs(diff - 2.0)) <= 10 * cfg.abs_tol

    def test_clock_mass_constant(self):
        from chemnn.oscillator import OscillatorSpec, build_oscillator, initial_concentrations

        spec = OscillatorSpec(4, 1.0)
        crn = build_oscillator(spec)
        x0 = State(crn.registry, initial_concentrations(spec))
        cfg = IntegratorConfig()
        traj = integrate(crn, x0, 60.0, cfg)
        mass = traj.states.sum(axis=1)
        assert np.max(np.abs(mass - mass[0])) <= 10 * cfg.abs_tol


class TestEquilibrium:
    def test_annihilation_boundary_point(self):
        crn = Crn(
            SpeciesRegistry(("np", "nm")),
            [Reaction(Complex({"np": 1, "nm": 1}), Complex({}), 1.0)],
        )
        x0 = State.from_dict(crn.registry, {"np": 3.0, "nm": 1.0})
        state, converged, elapsed = integrate_to_equilibrium(crn, x0, 1e-8, 100.0)
        assert converged and elapsed < 100.0
        assert state.get("np") == pytest.approx(2.0, abs=1e-5)
        assert state.get("nm") == pytest.approx(0.0, abs=1e-5)

    def test_idempotent_restart(self):
        # residual tolerances at or above 1e-6 stay inside the integrator's
        # own noise floor (per-step error ~ rel_tol * |y|), so the read is
        # reliable and a restart at the returned point is a no-op.
        crn = build_addition_gadget()
        x0 = State.from_dict(crn.registry, {"a": 1.0, "b": 2.0, "c": 0.0})
        state, converged, _ = integrate_to_equilibrium(crn, x0, 1e-6, 100.0)
        again, converged2, elapsed2 = integrate_to_equilibrium(crn, state, 1e-6, 100.0)
        assert converged and converged2
        assert elapsed2 == 0.0
        np.testing.assert_allclose(again.values, state.values)

    def test_judgment_basins(self):
        frag = build_judgment(JUDGE_RATES, p_tilde=1)
        crn = assemble(frag, ("O23", "O25"))
        k1, k2 = JUDGE_RATES[0], JUDGE_RATES[1]
        program = MiniProgram(crn)
        for e0, target in ((0.6, 3.5), (0.4, 0.0)):
            init = {"e_1": e0, "ja_1": (k2 / k1) * e0 * e0}
            traj = run_windows(program, init, [("O25", 400.0)])
            assert traj.final_state().get("e_1") == pytest.approx(target, abs=1e-4)


class TestClamping:
    def test_trajectories_stay_nonnegative(self):
        crn = Crn(
            SpeciesRegistry(("a", "b")),
            [
                Reaction(Complex({"a": 1}), Complex({"b": 1}), 5.0),
                Reaction(Complex({"b": 1}), Complex({}), 1.0),
            ],
        )
        cfg = IntegratorConfig(method="rk4", step=0.5)
        traj = integrate(crn, State.from_dict(crn.registry, {"a": 1.0}), 5.0, cfg)
        assert traj.states.min() >= 0.0

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.1, 5.0), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
    def test_nonnegativity_random_inits(self, k, a0, b0):
        crn = Crn(
            SpeciesRegistry(("a", "b")),
            [
                Reaction(Complex({"a": 1, "b": 1}), Complex({}), k),
                Reaction(Complex({"a": 1}), Complex({}), 1.0),
            ],
        )
        traj = integrate(crn, State.from_dict(crn.registry, {"a": a0, "b": b0}), 5.0)
        assert traj.states.min() >= 0.0


class TestPhasedExecution:
    def test_empty_schedule_returns_start(self, net221, xor_trainspec):
        from chemnn.compiler import compile_program

        program, x0 = compile_program(net221, xor_trainspec)
        traj = run_phased(program, x0, PhaseSchedule((), cycle_count=1))
        assert len(traj) == 1
        np.testing.assert_allclose(traj.states[0], x0.values)

    def test_unknown_phase_rejected(self, net221, xor_trainspec):
        from chemnn.compiler import compile_program

        program, x0 = compile_program(net221, xor_trainspec)
        with pytest.raises(CrnError):
            run_phased(program, x0, PhaseSchedule.uniform(("O99",), 1.0))

    def test_only_active_phase_reacts(self):
        frag = build_sigmoid("hidden", NetSpec(), p_tilde=1)
        program = fragment_program(frag, ("O13",))
        # schedule a window for O13 only after holding: state untouched by other phases
        init = {"n1_1_1p": 1.0, "h1_1p": 0.5}
        traj = run_windows(program, init, [("O13", 1e-3)])
        assert traj.final_state().get("h1_1p") != pytest.approx(0.5, abs=1e-9)

    def test_phase_marks_and_boundaries(self, net221, xor_trainspec):
        from chemnn.compiler import compile_program

        program, x0 = compile_program(net221, xor_trainspec)
        schedule = PhaseSchedule.uniform(program.phases[:3], 2.0, cycles=2)
        traj = run_phased(program, x0, schedule, record="boundaries")
        assert [p for _, p in traj.phase_marks] == list(program.phases[:3]) * 2
        boundaries = traj.boundary_states()
        assert len(boundaries) == 6
        assert traj.phase_at(1.0) == program.phases[0]


class TestTrajectoryExport:
    def test_csv_round_trip(self, tmp_path):
        crn = build_addition_gadget()
        x0 = State.from_dict(crn.registry, {"a": 1.0, "b": 2.0, "c": 0.0})
        traj = integrate(crn, x0, 5.0)
        path = tmp_path / "traj.csv"
        traj.to_csv(path, stride=3)
        lines = path.read_text().splitlines()
        assert lines[0] == "time,phase," + ",".join(crn.registry.names)
        last = lines[-1].split(",")
        assert float(last[0]) == pytest.approx(traj.times[-1])
        assert float(last[-1]) == pytest.approx(traj.final_state().get("c"))
