"""Neural networks compiled to mass-action reaction networks, end to end.

The pipeline: :mod:`chemnn.compiler` turns a network plus training setup
into a phased reaction program, :mod:`chemnn.integrate` executes it (with
idealized phase windows or a gating clock ring from
:mod:`chemnn.oscillator`), :mod:`chemnn.oracle` provides the exact
floating-point reference, and :mod:`chemnn.analysis` decodes and verifies
the chemistry against it.  :mod:`chemnn.cli` wires everything into
reproducible file-based experiments.
"""

from .crn import (
    Complex,
    Crn,
    CrnError,
    Reaction,
    SpeciesRegistry,
    State,
    add_catalyst,
    conservation_laws,
    crn_from_text,
    crn_to_text,
    reaction_rate,
    rhs,
    stoichiometric_matrix,
)
from .integrate import (
    IntegrationError,
    IntegratorConfig,
    Kinetics,
    PhaseSchedule,
    Trajectory,
    integrate_to_equilibrium,
    run_oscillator,
    run_phased,
)
from .oscillator import OscillatorSpec, assign_phases, build_oscillator, phase_windows
from .compiler import (
    NetSpec,
    Program,
    TrainSpec,
    WeightSet,
    build_addition_gadget,
    compile_feedforward,
    compile_program,
)
from .analysis import (
    BistablePoint,
    PhaseReport,
    RateFit,
    bistable_equilibria,
    decode_dual_rail,
    equilibrium_residual,
    fit_exponential_rate,
    verify_against_oracle,
)
from . import oracle

__version__ = "0.1.0"
