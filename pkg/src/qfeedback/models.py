"""Thermal qubit, measurement instruments and feedback maps.

Basis ordering is (|g>, |e>), so SIGMA_Z = diag(+1, -1) assigns the ground
state the +1 eigenvalue and the bare Hamiltonian -(delta/2) SIGMA_Z gives it
energy -delta/2.  All rates and frequencies are angular (hbar = kB = 1).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import superop

logger = logging.getLogger(__name__)

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
PAULI = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}

GROUND = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)   # |g><g|
EXCITED = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)  # |e><e|

# default grid for Gaussian-measurement outcomes; tail mass beyond the grid
# is ~exp(-SIGMAS^2/2) per step and accumulates over 1/dt steps, so 6 sigma
# is not enough for convergence studies
GAUSSIAN_GRID_POINTS = 257
GAUSSIAN_GRID_SIGMAS = 8.5


def nbar_from_temperature(omega, temperature):
    """Bose occupation 1/(exp(omega/T) - 1) in natural units."""
    if omega <= 0.0 or temperature <= 0.0:
        raise ValueError("omega and temperature must be positive")
    return 1.0 / np.expm1(omega / temperature)


@dataclass(frozen=True)
class ThermalQubit:
    """Qubit coupled to a thermal bath, optionally driven along x.

    gamma: bath coupling rate; nbar: bath occupation; detuning: splitting
    in the rotating frame; drive: transverse drive amplitude (applied only
    when a Liouvillian is requested with the drive on).
    """

    gamma: float
    nbar: float
    drive: float = 1.0
    detuning: float = 0.0

    def __post_init__(self):
        if self.gamma < 0.0:
            raise ValueError("gamma must be non-negative")
        if self.nbar < 0.0:
            raise ValueError("nbar must be non-negative")
        if self.drive < 0.0:
            raise ValueError("drive amplitude must be non-negative")

    def hamiltonian(self, drive_on):
        h = -0.5 * self.detuning * SIGMA_Z
        if drive_on:
            h = h + self.drive * SIGMA_X
        return h

    def collapse_ops(self):
        """(emission, absorption) jump operators."""
        down = np.sqrt(self.gamma * (self.nbar + 1.0)) * np.array(
            [[0.0, 1.0], [0.0, 0.0]], dtype=complex)   # |g><e|
        up = np.sqrt(self.gamma * self.nbar) * np.array(
            [[0.0, 0.0], [1.0, 0.0]], dtype=complex)   # |e><g|
        return down, up

    def liouvillian(self, drive_on=False):
        return superop.liouvillian(self.hamiltonian(drive_on), self.collapse_ops())

    def jump_superops(self):
        """{-1: emission, +1: absorption} sandwich maps rho -> L rho L^dag."""
        down, up = self.collapse_ops()
        return {-1: superop.conjugation(down), +1: superop.conjugation(up)}

    def nojump_liouvillian(self, drive_on=False):
        """Liouvillian minus both jump sandwiches (smooth part of the evolution)."""
        m = self.liouvillian(drive_on)
        for j in self.jump_superops().values():
            m = m - j
        return m

    def gibbs_state(self):
        z = 2.0 * self.nbar + 1.0
        return np.diag([(self.nbar + 1.0) / z, self.nbar / z]).astype(complex)


@dataclass(eq=False)
class Instrument:
    """Finite or gridded family of outcome maps {M_x}.

    outcomes are sorted ascending.  maps is a tuple of superoperator
    matrices aligned with outcomes; for memory-dependent instruments
    maps_fn(y) returns that tuple for previous-memory value y, and
    signature_fn(y) returns a small hashable key identifying which map
    family y selects (used to group blocks in the engine fast paths).
    weights are quadrature weights for gridded outcome sets and None for
    discrete ones.
    """

    outcomes: np.ndarray
    maps: tuple = None
    maps_fn: object = None
    signature_fn: object = None
    weights: np.ndarray = None
    label: str = ""
    completeness_residual: float = field(default=0.0, compare=False)

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes)
        if np.any(np.diff(self.outcomes) <= 0):
            raise ValueError("outcomes must be strictly ascending")
        if (self.maps is None) == (self.maps_fn is None):
            raise ValueError("provide exactly one of maps or maps_fn")
        if self.maps is not None:
            self.maps = tuple(np.asarray(m, dtype=complex) for m in self.maps)
            if len(self.maps) != self.outcomes.size:
                raise ValueError("one map per outcome required")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != self.outcomes.shape:
                raise ValueError("one quadrature weight per outcome required")

    @property
    def memory_dependent(self):
        return self.maps_fn is not None

    def maps_for(self, y=None):
        if self.maps is not None:
            return self.maps
        return self.maps_fn(y)

    def signature(self, y=None):
        if not self.memory_dependent:
            return None
        if self.signature_fn is not None:
            return self.signature_fn(y)
        return y

    def weighted_maps(self, y=None):
        """Maps with quadrature weights folded in (identity for discrete sets)."""
        maps = self.maps_for(y)
        if self.weights is None:
            return maps
        return tuple(w * m for w, m in zip(self.weights, maps))

    def total_map(self, y=None):
        """sum_x w_x M_x(y): the unconditional single-step channel."""
        total = None
        for m in self.weighted_maps(y):
            total = m if total is None else total + m
        return total

    def dim(self, y=None):
        return superop.superop_dim(self.maps_for(y)[0])

    def check_normalization(self, y=None, tol=1e-10):
        """Assert sum_x w_x M_x is trace preserving."""
        if not superop.is_trace_preserving(self.total_map(y), tol=tol):
            raise ValueError(f"instrument {self.label or '<unnamed>'} is not "
                             f"trace preserving within {tol:g}")


def projective_instrument():
    """Projective SIGMA_Z measurement: outcome -1 -> |g>, +1 -> |e>."""
    m_minus = superop.conjugation(GROUND)
    m_plus = superop.conjugation(EXCITED)
    return Instrument(outcomes=np.array([-1.0, 1.0]), maps=(m_minus, m_plus),
                      label="projective-z")


def rotation_superop(angle, axis="x"):
    """Unitary conjugation by exp(-i angle sigma_axis / 2)."""
    if axis not in PAULI:
        raise ValueError(f"axis must be one of {sorted(PAULI)}, got {axis!r}")
    u = (np.cos(0.5 * angle) * np.eye(2) - 1j * np.sin(0.5 * angle) * PAULI[axis])
    return superop.conjugation(u)


def identity_feedback(_outcome):
    return np.eye(4, dtype=complex)


def rotation_feedback(angle, axis="x", on_outcome=1.0):
    """Rotate by angle when the outcome matches on_outcome, else do nothing."""
    rot = rotation_superop(angle, axis)
    ident = np.eye(4, dtype=complex)

    def fb(outcome):
        return rot if outcome == on_outcome else ident
    return fb


def kick_feedback(f_op, lam, dt):
    """Outcome-proportional Hamiltonian kick exp(2 sqrt(lam) x dt K), K = -i[f_op, .]."""
    k = superop.hamiltonian_superop(f_op)

    def fb(outcome):
        return superop.expm(k, 2.0 * np.sqrt(lam) * outcome * dt)
    return fb


def gaussian_kraus(a_op, lam, dt, grid=None, renormalize=True):
    """Gaussian weak-measurement instrument of operator a_op.

    Kraus operators V_x = (2 lam dt / pi)^(1/4) exp(-lam dt (x - a_op)^2) on a
    uniform outcome grid with trapezoid weights.  The default grid spans
    +/- (max |eig a_op| + 8.5 sigma), sigma = 1/sqrt(4 lam dt), 257 points.
    With renormalize=True the family is rescaled by W^(-1/2),
    W = sum_x w_x V_x^dag V_x, making it exactly trace preserving on the
    grid; the raw completeness residual is kept on the instrument.
    """
    a_op = np.asarray(a_op, dtype=complex)
    if np.max(np.abs(a_op - a_op.conj().T)) > 1e-12:
        raise ValueError("measured operator must be Hermitian")
    if lam <= 0.0 or dt <= 0.0:
        raise ValueError("lam and dt must be positive")
    evals, evecs = np.linalg.eigh(a_op)
    sigma = 1.0 / np.sqrt(4.0 * lam * dt)
    if grid is None:
        half = np.max(np.abs(evals)) + GAUSSIAN_GRID_SIGMAS * sigma
        grid = np.linspace(-half, half, GAUSSIAN_GRID_POINTS)
    grid = np.asarray(grid, dtype=float)
    h = np.diff(grid)
    if grid.size < 3 or np.max(np.abs(h - h[0])) > 1e-9 * abs(h[0]):
        raise ValueError("outcome grid must be uniform")
    weights = np.full(grid.size, h[0])
    weights[0] *= 0.5
    weights[-1] *= 0.5

    norm = (2.0 * lam * dt / np.pi) ** 0.25
    # V_x diagonal in the eigenbasis of a_op
    kraus = []
    for x in grid:
        dvals = norm * np.exp(-lam * dt * (x - evals) ** 2)
        kraus.append((evecs * dvals) @ evecs.conj().T)

    w_total = sum(w * (v.conj().T @ v) for w, v in zip(weights, kraus))
    residual = float(np.max(np.abs(w_total - np.eye(a_op.shape[0]))))
    if residual > 1e-6:
        raise ValueError(
            f"outcome grid too narrow or too coarse: completeness residual "
            f"{residual:.3e} > 1e-6; widen the grid")
    if renormalize:
        wvals, wvecs = np.linalg.eigh(0.5 * (w_total + w_total.conj().T))
        w_inv_sqrt = (wvecs / np.sqrt(wvals)) @ wvecs.conj().T
        kraus = [v @ w_inv_sqrt for v in kraus]

    maps = tuple(superop.conjugation(v) for v in kraus)
    inst = Instrument(outcomes=grid, maps=maps, weights=weights,
                      label="gaussian-weak")
    inst.completeness_residual = residual
    return inst


def composed_instrument(measurement, liouvillian_matrix, dt, feedback=None,
                        label="composed"):
    """One full step M_x = F(x) . M_x . exp(dt L) as a new instrument.

    feedback maps an outcome to a superoperator matrix; None means no
    feedback.  Gridded weights are inherited from the measurement.
    """
    propagator = superop.expm(np.asarray(liouvillian_matrix), dt)
    maps = []
    for x, m in zip(measurement.outcomes, measurement.maps_for()):
        step = m @ propagator
        if feedback is not None:
            step = feedback(x) @ step
        maps.append(step)
    return Instrument(outcomes=measurement.outcomes, maps=tuple(maps),
                      weights=measurement.weights, label=label,
                      completeness_residual=measurement.completeness_residual)
