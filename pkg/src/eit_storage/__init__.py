"""Light storage in a warm-vapour Lambda system: optical Bloch dynamics,
sliced-cell propagation, homodyne phase readout and storage analysis."""

from .analysis import (
    EfficiencyPoint,
    fit_exponential_decay,
    leak_level,
    phase_vs_detuning_curve,
    retrieved_phase,
    storage_efficiency,
)
from .bloch_core import (
    DensityMatrix3,
    LambdaParams,
    RamanCoherence,
    eit_phase_shift,
    evolve_density_matrix,
    retrieval_first_order,
    steady_state_raman_coherence,
)
from .doppler import VelocityGrid, make_grid, single_class
from .protocol import CellConfig, FieldTimeline, SimulationResult, run_storage

__all__ = [
    "CellConfig",
    "DensityMatrix3",
    "EfficiencyPoint",
    "FieldTimeline",
    "LambdaParams",
    "RamanCoherence",
    "SimulationResult",
    "VelocityGrid",
    "eit_phase_shift",
    "evolve_density_matrix",
    "fit_exponential_decay",
    "leak_level",
    "make_grid",
    "phase_vs_detuning_curve",
    "retrieval_first_order",
    "retrieved_phase",
    "run_storage",
    "single_class",
    "steady_state_raman_coherence",
    "storage_efficiency",
]
