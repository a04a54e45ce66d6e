"""Deterministic simulation of measurement-based feedback control for
small open quantum systems.

The core object is the memory-resolved state: one unnormalized system
operator per value of a causal record of measurement outcomes.  Engines
propagate it exactly (no sampling), solvers return feedback steady
states, stats extracts hybrid classical/quantum information measures and
full counting statistics, and a stochastic-trajectory oracle cross-checks
everything.
"""

__version__ = "0.1.0"

from .superop import (
    vec, unvec, spre, spost, sandwich, conjugation, dissipator,
    hamiltonian_superop, liouvillian, steady_density,
    fixed_point_eigenvector, choi_matrix, is_completely_positive,
    is_trace_preserving, expm, SingularSuperoperatorError,
    NoFixedPointError, DegenerateFixedPointError,
)
from .models import (
    SIGMA_X, SIGMA_Y, SIGMA_Z, PAULI, GROUND, EXCITED,
    ThermalQubit, Instrument, nbar_from_temperature,
    projective_instrument, gaussian_kraus, composed_instrument,
    rotation_feedback, kick_feedback, rotation_superop,
)
from .memory import (
    CausalMemory, MemoryResolvedState, DiscreteDomain, GridDomain,
    ProductDomain, delta_state, last_outcome, running_average,
    full_record, jump_memory, counting_memory, product_memory,
)
from .engine import (
    step, step_no_feedback, step_two_memory, marginalize, iterate,
    iterate_to_convergence, transfer_matrix, current_resolved_steady,
    Segment, JumpProcess, jump_steady_state, discrete_jump_instrument,
    monitoring_memory, jump_chain_init, jump_chain_step,
    wgm_generator, wgm_propagate, GridExtensionError,
)
from .stats import (
    HybridState, hybrid_state, mutual_information, covariance,
    mean_memory, characteristic_function, moments,
    moments_by_differentiation, cumulants_from_moments,
    memory_statistics, two_point_correlation, von_neumann_entropy,
    shannon_entropy,
)
from .oracle import (
    Trajectory, simulate, simulate_batch, simulate_batch_monitoring,
    empirical_distribution, agreement, scalar_agreement,
)
from .scenarios import (
    InversionScenario, StroboscopicScenario, optimal_drive_time,
    weak_monitoring_instrument, weak_monitoring_generator,
    equal_superposition,
)
from .config import ConfigError, load, loads, resolve

__all__ = [n for n in dir() if not n.startswith("_")]
