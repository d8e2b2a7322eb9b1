"""Drive a compiled program through training rounds and decode the results.

One round is one pass through all sixteen phases.  The judgment gate is
read after its phase each round; training has genuinely halted only once
the gate stays closed for a full block rotation (``p / batch_size``
consecutive rounds), because a gate closed on one block reopens if the
next block still fails under the frozen weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .analysis import decode_dual_rail
from .crn import State
from .integrate import IntegratorConfig, Kinetics, PhaseSchedule, Trajectory, _advance
from .oracle import Batch

__all__ = ["RoundRecord", "TrainingRun", "PhasedRunner", "run_training", "decode_weights", "evaluate_outputs"]


@dataclass
class RoundRecord:
    """Decoded observables of one training round."""

    round_index: int
    block: int
    outputs: np.ndarray
    errors: np.ndarray
    gate: float
    w1: np.ndarray
    w2: np.ndarray
    gate_open: bool = True


@dataclass
class TrainingRun:
    """Full decoded log of a chemical training run.

    ``termination_round`` is the first round of the gate's final closed
    streak (the judgment that shut the gate for good);
    ``confirmed_round`` is the round that completed the full-rotation
    confirmation and stopped the loop.
    """

    rounds: List[RoundRecord] = field(default_factory=list)
    terminated: bool = False
    termination_round: Optional[int] = None
    confirmed_round: Optional[int] = None
    final_state: Optional[State] = None

    @property
    def final_weights(self) -> Tuple[np.ndarray, np.ndarray]:
        last = self.rounds[-1]
        return last.w1, last.w2

    @property
    def update_decisions(self) -> List[bool]:
        """Per round: did the judgment leave the gate open (update applied)?"""
        return [rec.gate_open for rec in self.rounds]


class PhasedRunner:
    """Reusable phased executor: kinetics are compiled once per phase."""

    def __init__(self, program, window: float, cfg: Optional[IntegratorConfig] = None):
        if window <= 0:
            raise ValueError("window must be positive")
        self.program = program
        self.window = float(window)
        self.cfg = cfg or IntegratorConfig()
        self._kinetics = {
            tag: Kinetics(program.crn, program.phase_index[tag]) for tag in program.phases
        }

    def run_cycle(self, state: State, t0: float = 0.0) -> Tuple[State, Dict[str, State]]:
        """Advance one full phase cycle; returns the final state and per-phase end states."""
        y = state.values.copy()
        t = t0
        boundaries: Dict[str, State] = {}
        for tag in self.program.phases:
            y, t, _ = _advance(self._kinetics[tag], y, t, self.window, self.cfg)
            boundaries[tag] = State(state.registry, y.copy())
        return State(state.registry, y), boundaries


def decode_weights(state: State, probes) -> Tuple[np.ndarray, np.ndarray]:
    """Dual-rail decode of the layer-1 and layer-2 weight matrices."""
    rows1 = max(i for i, _ in probes.weights1)
    cols1 = max(j for _, j in probes.weights1)
    rows2 = max(o for o, _ in probes.weights2)
    cols2 = max(a for _, a in probes.weights2)
    w1 = np.array(
        [[decode_dual_rail(state, probes.weights1[(i, j)]) for j in range(1, cols1 + 1)]
         for i in range(1, rows1 + 1)]
    )
    w2 = np.array(
        [[decode_dual_rail(state, probes.weights2[(o, a)]) for a in range(1, cols2 + 1)]
         for o in range(1, rows2 + 1)]
    )
    return w1, w2


def run_training(
    program,
    x0: State,
    window: float = 50.0,
    cfg: Optional[IntegratorConfig] = None,
    max_rounds: int = 60,
    gate_eps: float = 1e-3,
    confirm_rotation: bool = True,
) -> TrainingRun:
    """Run training rounds until the gate halts the loop or ``max_rounds`` pass.

    With ``confirm_rotation`` (the default) termination requires the gate to
    read below ``gate_eps`` for a full block rotation; otherwise the first
    closed gate terminates.  The reported termination round is the first
    round of the closing streak, i.e. the round whose judgment first shut
    the gate for good.
    """
    train = program.train
    if train is None:
        raise ValueError("program was compiled without a training specification")
    runner = PhasedRunner(program, window, cfg)
    blocks = train.block_count
    needed = blocks if confirm_rotation else 1
    run = TrainingRun()
    state = x0
    streak = 0
    t = 0.0
    for m in range(1, max_rounds + 1):
        state, boundaries = runner.run_cycle(state, t)
        t += window * len(program.phases)
        after_error = boundaries["O23"]
        after_judge = boundaries["O25"]
        after_update = boundaries["O29"]
        sample_slots = sorted(program.probes.error)
        outputs = np.array([after_error.get(f"ystore_{l}") for l in sample_slots])
        errors = np.array([after_error.get(program.probes.error[l]) for l in sample_slots])
        gate = after_judge.get(program.probes.gate)
        w1, w2 = decode_weights(after_update, program.probes)
        closed = gate < gate_eps
        run.rounds.append(
            RoundRecord(m, (m - 1) % blocks + 1, outputs, errors, gate, w1, w2,
                        gate_open=not closed)
        )
        streak = streak + 1 if closed else 0
        if streak >= needed:
            run.terminated = True
            run.termination_round = m - needed + 1
            run.confirmed_round = m
            break
    run.final_state = state
    return run


def evaluate_outputs(
    net,
    weights,
    inputs: np.ndarray,
    window: float = 50.0,
    cfg: Optional[IntegratorConfig] = None,
    chunk: int = 10,
) -> np.ndarray:
    """Chemical feedforward evaluation of ``inputs`` (m, input_width) rows.

    Compiles a feedforward-only program per chunk of rows, runs its phases
    once, and reads the combined output carriers.  Used for the final
    output vector and for decision-surface grids.
    """
    from .compiler import compile_feedforward

    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    outputs = []
    for start in range(0, inputs.shape[0], chunk):
        rows = inputs[start : start + chunk]
        program, x0 = compile_feedforward(net, weights, rows)
        runner = PhasedRunner(program, window, cfg)
        _, boundaries = runner.run_cycle(x0)
        final = boundaries[program.phases[-1]]
        for l in range(1, rows.shape[0] + 1):
            outputs.append(final.get(program.probes.outputs[(1, l)]))
    return np.array(outputs)
