"""Numerical integration of mass-action kinetics, plain and phased.

Two steppers are provided: a fixed-step classical RK4 and an adaptive
Dormand-Prince 4(5) embedded pair (the default).  Mass-action solutions are
provably nonnegative, so tiny negative overshoots (below ``abs_tol``) are
clamped to zero; larger ones force a step rejection.

Phased execution integrates only the reaction subset tagged with the active
phase inside each scheduled window; oscillator execution instead simulates
the full network with every program reaction gated by its phase's clock
species.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix

from .crn import Crn, CrnError, Reaction, SpeciesRegistry, State, add_catalyst

__all__ = [
    "IntegrationError",
    "IntegratorConfig",
    "Trajectory",
    "PhaseSchedule",
    "Kinetics",
    "integrate",
    "integrate_to_equilibrium",
    "run_phased",
    "run_oscillator",
]

_MIN_STEP_FRACTION = 1e-14


class IntegrationError(RuntimeError):
    """Numerical failure (step-size underflow, invalid configuration)."""


@dataclass(frozen=True)
class IntegratorConfig:
    """Stepper selection and tolerances.

    ``method`` is ``"rk45"`` (adaptive embedded pair) or ``"rk4"``
    (fixed step of size ``step``).  ``clamp_negative`` applies the
    overshoot policy described in the module docstring.
    """

    method: str = "rk45"
    step: float = 0.01
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    clamp_negative: bool = True

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise IntegrationError(f"unknown method {self.method!r}")
        if self.step <= 0 or self.rel_tol <= 0 or self.abs_tol <= 0:
            raise IntegrationError("step and tolerances must be positive")


class Kinetics:
    """Vectorized mass-action right-hand side for a reaction subset.

    Each reaction's rate is a product of at most a few concentration
    factors; factors are stored as index columns into the state vector
    (a trailing virtual entry holds the constant 1.0 used for padding),
    and net stoichiometry as a sparse matrix.
    """

    def __init__(self, crn: Crn, reaction_indices: Optional[Sequence[int]] = None):
        registry = crn.registry
        if reaction_indices is None:
            reaction_indices = range(crn.n_reactions)
        reactions = [crn.reactions[j] for j in reaction_indices]
        n = len(registry)
        r = len(reactions)
        width = max((rxn.reactant.size() for rxn in reactions), default=1)
        width = max(width, 1)
        factors = np.full((r, width), n, dtype=np.intp)  # n = the constant-1 slot
        k = np.empty(r)
        rows: List[int] = []
        cols: List[int] = []
        data: List[float] = []
        for jj, rxn in enumerate(reactions):
            k[jj] = rxn.rate
            pos = 0
            for name, coeff in rxn.reactant.items():
                idx = registry.index(name)
                for _ in range(coeff):
                    factors[jj, pos] = idx
                    pos += 1
            for name, delta in rxn.net().items():
                rows.append(registry.index(name))
                cols.append(jj)
                data.append(float(delta))
        self.registry = registry
        self.n = n
        self.n_reactions = r
        self.k = k
        self._factors = factors
        self._net = csr_matrix((data, (rows, cols)), shape=(n, r))
        self._buffer = np.ones(n + 1)

    def rates(self, x: np.ndarray) -> np.ndarray:
        buf = self._buffer
        buf[: self.n] = x
        out = self.k.copy()
        for col in range(self._factors.shape[1]):
            out *= buf[self._factors[:, col]]
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.n_reactions == 0:
            return np.zeros(self.n)
        return self._net @ self.rates(x)


@dataclass
class Trajectory:
    """Time-stamped states with optional phase-window boundary markers."""

    registry: SpeciesRegistry
    times: np.ndarray
    states: np.ndarray
    phase_marks: List[Tuple[float, str]] = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if np.any(np.diff(self.times) < 0):
            raise IntegrationError("trajectory times must be nondecreasing")

    def __len__(self) -> int:
        return len(self.times)

    def series(self, name: str) -> np.ndarray:
        return self.states[:, self.registry.index(name)]

    def state_at(self, i: int) -> State:
        return State(self.registry, self.states[i].copy())

    def final_state(self) -> State:
        return self.state_at(-1)

    def phase_at(self, t: float) -> str:
        label = ""
        for start, phase in self.phase_marks:
            if start <= t:
                label = phase
            else:
                break
        return label

    def boundary_states(self) -> List[Tuple[str, State]]:
        """State at the end of each marked phase window, in order."""
        if not self.phase_marks:
            return []
        out: List[Tuple[str, State]] = []
        starts = [t for t, _ in self.phase_marks]
        ends = starts[1:] + [float(self.times[-1])]
        for (start, phase), end in zip(self.phase_marks, ends):
            idx = int(np.searchsorted(self.times, end, side="right")) - 1
            out.append((phase, self.state_at(idx)))
        return out

    def to_csv(self, path, stride: int = 1) -> None:
        """Write ``time,phase,<species...>`` rows, one per recorded step (or per stride)."""
        if stride < 1:
            raise ValueError("stride must be >= 1")
        keep = list(range(0, len(self.times), stride))
        if keep and keep[-1] != len(self.times) - 1:
            keep.append(len(self.times) - 1)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("time,phase," + ",".join(self.registry.names) + "\n")
            for i in keep:
                t = float(self.times[i])
                row = ",".join(repr(float(v)) for v in self.states[i])
                fh.write(f"{t!r},{self.phase_at(t)},{row}\n")

    def append(self, other: "Trajectory") -> None:
        if other.registry != self.registry:
            raise IntegrationError("cannot append trajectory over a different registry")
        self.times = np.concatenate([self.times, other.times])
        self.states = np.vstack([self.states, other.states])
        self.phase_marks.extend(other.phase_marks)


@dataclass(frozen=True)
class PhaseSchedule:
    """Ordered phase windows, repeated ``cycle_count`` times."""

    phases: Tuple[Tuple[str, float], ...]
    cycle_count: int = 1

    def __post_init__(self):
        for tag, duration in self.phases:
            if duration <= 0:
                raise IntegrationError(f"phase {tag!r} has nonpositive duration {duration}")
        if self.cycle_count < 0:
            raise IntegrationError("cycle_count must be nonnegative")

    @classmethod
    def uniform(cls, tags: Sequence[str], duration: float, cycles: int = 1) -> "PhaseSchedule":
        return cls(tuple((tag, float(duration)) for tag in tags), cycles)


# Dormand-Prince 5(4) tableau; the fifth-order solution is propagated and the
# first stage of the next step reuses the last evaluation (FSAL).
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_DP_ERR = _DP_B5 - _DP_B4


def _underflow(kin: Kinetics, t: float, f: np.ndarray) -> IntegrationError:
    fastest = kin.registry.names[int(np.argmax(np.abs(f)))]
    return IntegrationError(
        f"step size underflow at t={t:.6g} (stiffness); fastest-changing species {fastest!r}"
    )


def _advance(
    kin: Kinetics,
    y: np.ndarray,
    t0: float,
    duration: float,
    cfg: IntegratorConfig,
    record_times: Optional[List[float]] = None,
    record_states: Optional[List[np.ndarray]] = None,
    stop: Optional[Callable[[float, np.ndarray, np.ndarray], bool]] = None,
) -> Tuple[np.ndarray, float, bool]:
    """Integrate in place from ``t0`` to ``t0 + duration``.

    Returns ``(y, t_reached, stopped_early)``.  Recording lists, when given,
    receive every accepted step.  ``stop(t, y, f)`` may end the run early.
    """
    if duration <= 0:
        return y, t0, False
    if cfg.method == "rk4":
        return _advance_rk4(kin, y, t0, duration, cfg, record_times, record_states, stop)

    t_end = t0 + duration
    t = t0
    f = kin(y)
    h = _initial_step(y, f, duration, cfg)
    h_min = max(duration * _MIN_STEP_FRACTION, 1e-300)
    stages = np.empty((7, y.size))
    stages[0] = f
    while t < t_end:
        h = min(h, t_end - t)
        if h < h_min:
            raise _underflow(kin, t, stages[0])
        for i in range(1, 7):
            yi = y + h * (_DP_A[i] @ stages[:i])
            stages[i] = kin(yi)
        y_new = y + h * (_DP_B5 @ stages)
        err_vec = h * (_DP_ERR @ stages)
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        lowest = float(y_new.min(initial=0.0))
        if err > 1.0 or (cfg.clamp_negative and lowest < -cfg.abs_tol):
            factor = 0.5 if err <= 1.0 else max(0.2, 0.9 * err ** -0.2)
            h *= factor
            continue
        if cfg.clamp_negative and lowest < 0:
            np.clip(y_new, 0.0, None, out=y_new)
            stages[6] = kin(y_new)
        t += h
        y = y_new
        stages[0] = stages[6]  # FSAL
        if record_times is not None:
            record_times.append(t)
            record_states.append(y.copy())
        if stop is not None and stop(t, y, stages[0]):
            return y, t, True
        h *= min(5.0, max(0.2, 0.9 * err ** -0.2 if err > 0 else 5.0))
    return y, t, False


def _advance_rk4(kin, y, t0, duration, cfg, record_times, record_states, stop):
    n_steps = max(1, round(duration / cfg.step))
    h = duration / n_steps
    t = t0
    for _ in range(n_steps):
        k1 = kin(y)
        k2 = kin(y + 0.5 * h * k1)
        k3 = kin(y + 0.5 * h * k2)
        k4 = kin(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if cfg.clamp_negative:
            np.clip(y, 0.0, None, out=y)
        t += h
        if record_times is not None:
            record_times.append(t)
            record_states.append(y.copy())
        if stop is not None and stop(t, y, k1):
            return y, t, True
    return y, t, False


def _initial_step(y: np.ndarray, f: np.ndarray, duration: float, cfg: IntegratorConfig) -> float:
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(y)
    d0 = float(np.sqrt(np.mean((y / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f / scale) ** 2)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    return min(h0, duration)


def integrate(
    crn: Crn,
    x0: State,
    duration: float,
    cfg: Optional[IntegratorConfig] = None,
) -> Trajectory:
    """Integrate the full network for ``duration`` time units from ``x0``."""
    if duration <= 0:
        raise IntegrationError(f"duration must be positive, got {duration}")
    cfg = cfg or IntegratorConfig()
    kin = Kinetics(crn)
    times = [0.0]
    states = [x0.values.copy()]
    y, _, _ = _advance(kin, x0.values.copy(), 0.0, duration, cfg, times, states)
    return Trajectory(crn.registry, np.array(times), np.array(states))


def integrate_to_equilibrium(
    crn: Crn,
    x0: State,
    residual_tol: float,
    max_time: float,
    cfg: Optional[IntegratorConfig] = None,
) -> Tuple[State, bool, float]:
    """Run until the sup-norm of the derivative falls below ``residual_tol``.

    Returns ``(state, converged, elapsed)``.  The residual criterion (rather
    than a state delta) avoids false triggers on slowly drifting manifolds.
    """
    if residual_tol <= 0:
        raise IntegrationError("residual_tol must be positive")
    cfg = cfg or IntegratorConfig()
    kin = Kinetics(crn)
    y = x0.values.copy()
    if float(np.max(np.abs(kin(y)), initial=0.0)) < residual_tol:
        return State(crn.registry, y), True, 0.0

    def settled(t, y_now, f):
        return float(np.max(np.abs(f), initial=0.0)) < residual_tol

    y, t, stopped = _advance(kin, y, 0.0, max_time, cfg, stop=settled)
    return State(crn.registry, y), stopped, t


def run_phased(
    program,
    x0: State,
    schedule: PhaseSchedule,
    cfg: Optional[IntegratorConfig] = None,
    record: str = "all",
) -> Trajectory:
    """Execute a phased program: each window integrates only its phase's reactions.

    ``program`` needs a ``crn`` attribute and a ``phase_index`` mapping of
    phase tag to reaction indices.  State carries over across windows and a
    phase mark is recorded at each window start.  ``record`` is ``"all"``
    (every accepted step) or ``"boundaries"`` (window endpoints only).
    """
    cfg = cfg or IntegratorConfig()
    if record not in ("all", "boundaries"):
        raise ValueError(f"unknown record mode {record!r}")
    crn = program.crn
    kinetics: Dict[str, Kinetics] = {}
    for tag, _ in schedule.phases:
        if tag not in program.phase_index:
            raise CrnError(f"schedule names unknown phase {tag!r}")
        kinetics[tag] = Kinetics(crn, program.phase_index[tag])
    times = [0.0]
    states = [x0.values.copy()]
    marks: List[Tuple[float, str]] = []
    y = x0.values.copy()
    t = 0.0
    for _ in range(schedule.cycle_count):
        for tag, duration in schedule.phases:
            marks.append((t, tag))
            if record == "all":
                rec_t: List[float] = []
                rec_s: List[np.ndarray] = []
                y, t_new, _ = _advance(kinetics[tag], y, t, duration, cfg, rec_t, rec_s)
                times.extend(rec_t)
                states.extend(rec_s)
            else:
                y, t_new, _ = _advance(kinetics[tag], y, t, duration, cfg)
                times.append(t_new)
                states.append(y.copy())
            t = t_new
    return Trajectory(crn.registry, np.array(times), np.array(states), marks)


def _combine_with_clock(program, osc):
    """Union of a program and its gating clock ring.

    Returns ``(combined_crn, clock_map)``: every program reaction is gated
    by the clock species assigned to its phase, and the ring reactions are
    appended untagged.
    """
    from . import oscillator as osc_mod

    clock_map = osc_mod.assign_phases(program, osc)
    ring = osc_mod.build_oscillator(osc)
    base = program.crn
    names = tuple(base.registry.names) + tuple(ring.registry.names)
    roles = base.registry.roles
    roles.update(ring.registry.roles)
    registry = SpeciesRegistry(names, roles)
    reactions = [add_catalyst(r, clock_map[r.phase]) for r in base.reactions]
    reactions.extend(ring.reactions)
    return Crn(registry, reactions), clock_map


def _cycle_budget(osc, cycles: int) -> float:
    # Each handoff takes about ln(mass/floor) / (k_o * mass) time units;
    # floors deepen over revolutions, so leave generous slack.
    from . import oscillator as osc_mod

    mass = float(np.sum(osc_mod.initial_concentrations(osc)))
    return cycles * osc.count * 60.0 / max(osc.rate * mass, 1e-9) + 100.0


def run_oscillator(
    program,
    x0: State,
    osc,
    cycles: int,
    cfg: Optional[IntegratorConfig] = None,
    record: str = "all",
):
    """Execute a program with clock-species gating instead of idealized windows.

    The clock ring and all program reactions run together; every program
    reaction is gated (catalyzed) by the clock species assigned to its
    phase.  Integration stops when the first phase's clock species has risen
    through the on-threshold ``cycles`` times, i.e. after ``cycles`` complete
    revolutions.  Phase marks are recovered from clock dominance windows.
    """
    from . import oscillator as osc_mod

    cfg = cfg or IntegratorConfig()
    if cycles < 1:
        raise IntegrationError("cycles must be >= 1")
    combined, clock_map = _combine_with_clock(program, osc)
    registry = combined.registry
    init = np.concatenate([x0.values, osc_mod.initial_concentrations(osc)])
    kin = Kinetics(combined)
    first_clock = registry.index(clock_map[program.phases[0]])
    threshold = osc_mod.threshold_value(osc)

    state = {"prev": init[first_clock], "risen": 0}

    def crossed(t, y, f):
        now = y[first_clock]
        if state["prev"] < threshold <= now:
            state["risen"] += 1
        state["prev"] = now
        return state["risen"] >= cycles

    budget = _cycle_budget(osc, cycles)
    times = [0.0]
    states = [init.copy()]
    if record == "all":
        y, t, stopped = _advance(kin, init.copy(), 0.0, budget, cfg, times, states, stop=crossed)
    else:
        y, t, stopped = _advance(kin, init.copy(), 0.0, budget, cfg, stop=crossed)
        times.append(t)
        states.append(y.copy())
    if not stopped:
        raise IntegrationError(
            f"oscillator did not complete {cycles} cycles within time budget {budget:.0f}"
        )
    traj = Trajectory(registry, np.array(times), np.array(states))
    if record == "all":
        windows = osc_mod.phase_windows(traj, osc)
        phase_of = {clock: phase for phase, clock in clock_map.items()}
        traj.phase_marks = [
            (start, phase_of[clock])
            for clock, start, _ in windows
            if clock in phase_of
        ]
    return traj


class OscillatorRunner:
    """Cycle-by-cycle oscillator execution with online phase-edge detection.

    Avoids dense trajectory recording: the end state of each phase window is
    snapshotted when its clock species falls back through the on-threshold,
    and a cycle ends when the first phase's clock rises again.
    """

    def __init__(self, program, osc, cfg: Optional[IntegratorConfig] = None):
        from . import oscillator as osc_mod

        self.program = program
        self.osc = osc
        self.cfg = cfg or IntegratorConfig()
        self.crn, self.clock_map = _combine_with_clock(program, osc)
        self.registry = self.crn.registry
        self.kinetics = Kinetics(self.crn)
        self.threshold = osc_mod.threshold_value(osc)
        self._clock_idx = {
            phase: self.registry.index(clock) for phase, clock in self.clock_map.items()
        }
        self._clock_init = osc_mod.initial_concentrations(osc)

    def initial_values(self, x0: State) -> np.ndarray:
        return np.concatenate([x0.values, self._clock_init])

    def run_cycle(self, y: np.ndarray, t0: float = 0.0):
        """Advance until the first phase's clock rises again.

        Returns ``(values, t_end, boundaries)`` where ``boundaries`` maps
        each phase to the combined-network state captured as its clock pulse
        ended.
        """
        first = self._clock_idx[self.program.phases[0]]
        prev = {phase: y[idx] for phase, idx in self._clock_idx.items()}
        boundaries: Dict[str, State] = {}

        def watch(t, y_now, f):
            stop = False
            for phase, idx in self._clock_idx.items():
                now = y_now[idx]
                if prev[phase] >= self.threshold > now:
                    boundaries[phase] = State(self.registry, y_now.copy())
                if idx == first and prev[phase] < self.threshold <= now:
                    stop = True
                prev[phase] = now
            return stop

        budget = _cycle_budget(self.osc, 1)
        y, t, stopped = _advance(self.kinetics, y.copy(), t0, budget, self.cfg, stop=watch)
        if not stopped:
            raise IntegrationError(
                f"clock pulse did not return within time budget {budget:.0f}"
            )
        missing = [p for p in self.program.phases if p not in boundaries]
        if missing:
            raise IntegrationError(f"no clock window observed for phases {missing}")
        return y, t, boundaries
