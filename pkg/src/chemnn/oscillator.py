"""Clock-signal reaction ring and phase-to-clock bookkeeping.

The clock is a cyclic chain of autocatalytic handoffs
``O_i + O_{i+1} -> 2 O_{i+1}``; with a single concentration pulse as the
initial condition, each species spikes in turn and the total clock mass is
conserved.  Gating a reaction with a clock species as catalyst switches it
on only while that species' pulse is present.  Compiled phases are mapped
onto every second clock species so that consecutive phases are separated by
a silent buffer species and never overlap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .crn import Complex, Crn, CrnError, Reaction, SpeciesRegistry

__all__ = [
    "OscillatorSpec",
    "clock_species",
    "initial_concentrations",
    "threshold_value",
    "build_oscillator",
    "assign_phases",
    "phase_windows",
]

_FLOOR = 1e-6


@dataclass(frozen=True)
class OscillatorSpec:
    """Ring size, handoff rate and pulse-detection threshold.

    ``on_threshold`` is a fraction of the total clock mass.  ``init``
    defaults to a unit pulse on the first species with every other species
    at a 1e-6 floor.
    """

    count: int
    rate: float = 1.0
    init: Optional[Tuple[float, ...]] = None
    on_threshold: float = 0.1

    def __post_init__(self):
        if self.count < 2:
            raise CrnError(f"oscillator needs at least 2 species, got {self.count}")
        if self.rate <= 0:
            raise CrnError("oscillator rate constant must be positive")
        if not 0 < self.on_threshold < 1:
            raise CrnError("on_threshold must be a fraction in (0, 1)")
        if self.init is not None:
            init = tuple(float(v) for v in self.init)
            if len(init) != self.count:
                raise CrnError(f"init has {len(init)} entries for {self.count} clock species")
            if any(v < 0 for v in init):
                raise CrnError("clock initial concentrations must be nonnegative")
            object.__setattr__(self, "init", init)


def clock_species(spec: OscillatorSpec) -> Tuple[str, ...]:
    return tuple(f"o{i}" for i in range(1, spec.count + 1))


def initial_concentrations(spec: OscillatorSpec) -> np.ndarray:
    """Default: a traveling pulse seeded on the first species, others at the floor."""
    if spec.init is not None:
        values = np.array(spec.init, dtype=float)
    else:
        values = np.full(spec.count, _FLOOR)
        values[0] = 1.0 - (spec.count - 1) * _FLOOR
    if values.max() <= threshold_value(spec, values):
        raise CrnError("clock initialization has no species above the on-threshold")
    return values


def threshold_value(spec: OscillatorSpec, init: Optional[np.ndarray] = None) -> float:
    """Absolute concentration threshold: ``on_threshold`` of the total clock mass."""
    if init is None:
        if spec.init is not None:
            init = np.array(spec.init, dtype=float)
        else:
            init = np.full(spec.count, _FLOOR)
            init[0] = 1.0 - (spec.count - 1) * _FLOOR
    return spec.on_threshold * float(np.sum(init))


def build_oscillator(spec: OscillatorSpec) -> Crn:
    """The r-reaction handoff ring over clock species ``o1..oR`` (mass conserving)."""
    names = clock_species(spec)
    registry = SpeciesRegistry(names, {name: "clock" for name in names})
    reactions = []
    for i in range(spec.count):
        a = names[i]
        b = names[(i + 1) % spec.count]
        reactions.append(Reaction(Complex({a: 1, b: 1}), Complex({b: 2}), spec.rate))
    return Crn(registry, reactions)


def assign_phases(program, spec: OscillatorSpec) -> Dict[str, str]:
    """Map program phases, in execution order, onto odd-indexed clock species.

    Even-indexed species are buffers carrying no gated reactions, so
    consecutive phases never share a handoff.  Requires
    ``2 * len(phases) <= count``.
    """
    phases = tuple(program.phases)
    if 2 * len(phases) > spec.count:
        raise CrnError(
            f"{len(phases)} phases need at least {2 * len(phases)} clock species "
            f"(one buffer each), got {spec.count}"
        )
    if spec.count % 2 != 0:
        raise CrnError("buffered phase layout needs an even clock species count")
    return {phase: f"o{2 * i + 1}" for i, phase in enumerate(phases)}


def phase_windows(traj, spec: OscillatorSpec) -> List[Tuple[str, float, float]]:
    """Maximal dominance windows per clock species.

    A species' window is the time span where it exceeds the on-threshold
    *and* is the largest clock concentration; adjacent pulses overlap near
    each handoff, and dominance resolves the boundary at their crossing.
    Raises if the clock state is pathological (three species above threshold
    at once, or two non-adjacent ones), which indicates an initialization
    that does not produce a traveling pulse.
    """
    names = clock_species(spec)
    for name in names:
        if name not in traj.registry:
            raise CrnError(f"trajectory lacks clock species {name!r}")
    concs = np.stack([traj.series(name) for name in names])
    thr = threshold_value(spec)
    above = concs > thr
    n_above = above.sum(axis=0)
    if np.any(n_above >= 3):
        t_bad = traj.times[int(np.argmax(n_above >= 3))]
        raise CrnError(f"three clock species above threshold at t={t_bad:.4g}")
    for idx in np.nonzero(n_above == 2)[0]:
        i, j = np.nonzero(above[:, idx])[0]
        if (j - i) % spec.count != 1 and (i - j) % spec.count != 1:
            raise CrnError(
                f"non-adjacent clock species {names[i]} and {names[j]} overlap "
                f"at t={traj.times[idx]:.4g}; oscillator initialization unsuitable"
            )
    dominant = np.where(n_above > 0, np.argmax(concs, axis=0), -1)
    windows: List[Tuple[str, float, float]] = []
    start = 0
    for i in range(1, len(dominant) + 1):
        if i == len(dominant) or dominant[i] != dominant[start]:
            if dominant[start] >= 0:
                windows.append(
                    (names[dominant[start]], float(traj.times[start]), float(traj.times[i - 1]))
                )
            start = i
    return windows
