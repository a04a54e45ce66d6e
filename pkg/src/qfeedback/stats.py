"""Statistics of the memory register and its correlations with the system.

The memory-resolved state is the unnormalized decomposition of a hybrid
classical/quantum state: P(y) = Tr block(y), rho(y) = block(y)/P(y).  The
joint state is block diagonal over memory values, so every spectral
quantity reduces to per-block eigenvalues.  Entropies are in nats.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import engine, superop

MAX_MOMENT_ORDER = 6
PROBABILITY_FLOOR = 1e-15


def _as_blocks(state):
    if isinstance(state, HybridState):
        return {e.value: e.probability * e.state for e in state.entries}
    return state.blocks


@dataclass(frozen=True)
class HybridEntry:
    value: object
    probability: float
    state: np.ndarray


@dataclass(frozen=True)
class HybridState:
    """Explicit (P(y), rho(y), y) decomposition, separable by construction."""

    entries: tuple

    @property
    def values(self):
        return [e.value for e in self.entries]

    @property
    def probabilities(self):
        return np.array([e.probability for e in self.entries])

    def marginal(self):
        return sum(e.probability * e.state for e in self.entries)


def hybrid_state(state, prob_floor=PROBABILITY_FLOOR):
    """Normalize a memory-resolved state into its hybrid decomposition."""
    entries = []
    blocks = _as_blocks(state)
    for key in sorted(blocks, key=_numeric_or_key):
        p = float(np.trace(blocks[key]).real)
        if p <= prob_floor:
            continue
        entries.append(HybridEntry(value=key, probability=p,
                                   state=superop.ensure_density(blocks[key] / p)))
    total = sum(e.probability for e in entries)
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"hybrid state total probability {total} far from 1")
    return HybridState(entries=tuple(entries))


def _numeric_or_key(key):
    from .memory import sort_key
    return sort_key(key)


def numeric_values(state):
    """Memory values as floats; rejects non-numeric (e.g. tuple) registers."""
    blocks = _as_blocks(state)
    vals = []
    for k in blocks:
        if isinstance(k, tuple):
            raise TypeError("memory values are not scalar; marginalize first")
        vals.append(float(k))
    return np.array(sorted(vals))


def von_neumann_entropy(rho):
    """-Tr[rho ln rho] with the 0 ln 0 = 0 convention."""
    evals = np.linalg.eigvalsh(0.5 * (rho + np.conj(rho).T))
    evals = evals[evals > 0.0]
    return float(-np.sum(evals * np.log(evals)))


def shannon_entropy(probs):
    p = np.asarray(probs, dtype=float)
    p = p[p > 0.0]
    return float(-np.sum(p * np.log(p)))


def block_entropy(blocks_dict):
    """-sum_y Tr[block(y) ln block(y)] over unnormalized blocks."""
    total = 0.0
    for b in blocks_dict.values():
        evals = np.linalg.eigvalsh(0.5 * (b + b.conj().T))
        evals = evals[evals > 0.0]
        total += float(-np.sum(evals * np.log(evals)))
    return total


@dataclass(frozen=True)
class MutualInformation:
    value: float
    marginal_entropy: float
    classical_entropy: float
    joint_entropy: float
    joint_entropy_blockwise: float

    def holevo_gap(self):
        """H(P) - I >= 0 for separable hybrid states."""
        return self.classical_entropy - self.value


def mutual_information(state, route_tol=1e-9):
    """I = S(rho_marginal) + H(P) - S(joint) of the hybrid state.

    The joint entropy is computed both from the decomposition
    H(P) + sum_y P(y) S(rho(y)) and directly from the unnormalized blocks;
    the two routes must agree within route_tol.
    """
    h = state if isinstance(state, HybridState) else hybrid_state(state)
    probs = h.probabilities
    s_marginal = von_neumann_entropy(h.marginal())
    h_classical = shannon_entropy(probs)
    s_joint = h_classical + float(sum(
        e.probability * von_neumann_entropy(e.state) for e in h.entries))
    s_joint_blocks = block_entropy(_as_blocks(h))
    if abs(s_joint - s_joint_blocks) > route_tol:
        raise ValueError(
            f"joint-entropy routes disagree: {s_joint} vs {s_joint_blocks}")
    value = s_marginal + h_classical - s_joint
    if value < -1e-12 or value > h_classical + 1e-9:
        raise ValueError(f"mutual information {value} outside [0, H(P)]")
    return MutualInformation(value=value, marginal_entropy=s_marginal,
                             classical_entropy=h_classical,
                             joint_entropy=s_joint,
                             joint_entropy_blockwise=s_joint_blocks)


def memory_operator(state):
    """Diagonal register operator Y = sum_y y |y><y| over occupied values."""
    vals = numeric_values(state)
    return np.diag(vals).astype(complex)


def covariance(state, observable):
    """cov(y, O) = sum_y y Tr[O block(y)] - E[y] Tr[O rho_marginal]."""
    blocks = _as_blocks(state)
    obs = np.asarray(observable, dtype=complex)
    e_yo = e_y = e_o = 0.0
    for k, b in blocks.items():
        y = float(k)
        tr_ob = float(np.trace(obs @ b).real)
        e_yo += y * tr_ob
        e_o += tr_ob
        e_y += y * float(np.trace(b).real)
    return e_yo - e_y * e_o


def average_observable(state, observable_fn):
    """sum_y Tr[O(y) block(y)] for a memory-dependent observable."""
    blocks = _as_blocks(state)
    return float(sum(np.trace(np.asarray(observable_fn(k)) @ b).real
                     for k, b in blocks.items()))


def mean_memory(state):
    blocks = _as_blocks(state)
    return float(sum(float(k) * np.trace(b).real for k, b in blocks.items()))


# ---------------------------------------------------------------------------
# full counting statistics of the register


def characteristic_function(state, chis=None, points=129):
    """M(chi) = sum_y exp(i chi y) P(y); default grid spans +-pi/dy."""
    blocks = _as_blocks(state)
    vals = np.array([float(k) for k in blocks])
    probs = np.array([np.trace(b).real for b in blocks.values()])
    if chis is None:
        distinct = np.unique(vals)
        dy = np.min(np.diff(distinct)) if distinct.size > 1 else 1.0
        chis = np.linspace(-np.pi / dy, np.pi / dy, points)
    chis = np.asarray(chis, dtype=float)
    m = np.exp(1j * np.multiply.outer(chis, vals)) @ probs
    return chis, m


def moments(state, order=4):
    """Raw moments E[y^j], j = 0..order, by direct summation."""
    if order > MAX_MOMENT_ORDER:
        raise ValueError(f"moment order {order} > {MAX_MOMENT_ORDER}")
    blocks = _as_blocks(state)
    vals = np.array([float(k) for k in blocks])
    probs = np.array([np.trace(b).real for b in blocks.values()])
    return np.array([np.sum(probs * vals ** j) for j in range(order + 1)])


def fornberg_weights(z, x, m):
    """Finite-difference weights for derivatives 0..m at z on stencil x."""
    x = np.asarray(x, dtype=float)
    n = x.size
    c = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def moments_by_differentiation(state, order=4, stencil_halfwidth=4, eps=None):
    """Raw moments from (-i d/dchi)^j M(chi) at chi = 0.

    Central finite differences on a symmetric stencil; the cross-check
    partner of moments().
    """
    if order > MAX_MOMENT_ORDER:
        raise ValueError(f"moment order {order} > {MAX_MOMENT_ORDER}")
    vals = numeric_values(state)
    scale = max(np.max(np.abs(vals)), 1e-12)
    if eps is None:
        eps = 0.05 / scale
    stencil = eps * np.arange(-stencil_halfwidth, stencil_halfwidth + 1)
    _, m = characteristic_function(state, chis=stencil)
    w = fornberg_weights(0.0, stencil, order)
    out = np.empty(order + 1)
    for j in range(order + 1):
        out[j] = np.real((-1j) ** j * (w[j] @ m))
    return out


def cumulants_from_moments(ms):
    """Raw moments m_1..m_J -> cumulants k_1..k_J (m_0 slot included)."""
    ms = np.asarray(ms, dtype=float)
    order = ms.size - 1
    ks = np.zeros_like(ms)
    for n in range(1, order + 1):
        acc = ms[n]
        for k in range(1, n):
            acc -= math.comb(n - 1, k - 1) * ks[k] * ms[n - k]
        ks[n] = acc
    return ks


@dataclass(frozen=True)
class MemoryStatistics:
    values: np.ndarray
    probabilities: np.ndarray
    moments: np.ndarray
    cumulants: np.ndarray
    chi_grid: np.ndarray
    characteristic: np.ndarray

    def variance(self):
        return float(self.cumulants[2]) if self.cumulants.size > 2 else 0.0

    def to_dict(self):
        return {
            "values": self.values.tolist(),
            "probabilities": self.probabilities.tolist(),
            "moments": self.moments.tolist(),
            "cumulants": self.cumulants.tolist(),
        }


def memory_statistics(state, order=4, cross_check_tol=None):
    """Distribution, characteristic function, moments and cumulants.

    With cross_check_tol set, the finite-difference moments must agree
    with the direct sums to that relative tolerance.
    """
    if order > MAX_MOMENT_ORDER:
        raise ValueError(f"moment order {order} > {MAX_MOMENT_ORDER}")
    blocks = _as_blocks(state)
    vals = np.array(sorted(float(k) for k in blocks))
    probs = np.array([np.trace(blocks[k]).real
                      for k in sorted(blocks, key=float)])
    ms = moments(state, order)
    if cross_check_tol is not None:
        fd = moments_by_differentiation(state, order)
        scale = np.maximum(np.abs(ms), 1.0)
        worst = np.max(np.abs(fd - ms) / scale)
        if worst > cross_check_tol:
            raise ValueError(f"finite-difference moment check failed: "
                             f"relative error {worst:.3e}")
    ks = cumulants_from_moments(ms)
    chis, m = characteristic_function(state)
    var = ks[2] if order >= 2 else 0.0
    if var < -1e-12:
        raise ValueError(f"negative variance {var}")
    return MemoryStatistics(values=vals, probabilities=probs, moments=ms,
                            cumulants=ks, chi_grid=chis, characteristic=m)


# ---------------------------------------------------------------------------
# conditional evolution and two-time correlations


def conditional_state(state, y):
    """Single-block state rho(.|y): the block at y, normalized."""
    blocks = _as_blocks(state)
    if y not in blocks:
        raise KeyError(f"memory value {y!r} not occupied")
    p = float(np.trace(blocks[y]).real)
    if p <= PROBABILITY_FLOOR:
        raise ValueError(f"memory value {y!r} has vanishing probability")
    from .memory import MemoryResolvedState
    return MemoryResolvedState(blocks={y: blocks[y] / p},
                               step=getattr(state, "step", 0),
                               time=getattr(state, "time", 0.0))


def conditional_distribution(state, y, inst, mem, lag_steps, dt=0.0):
    """P(y' at t + lag | y at t) under the same instrument and memory."""
    cond = conditional_state(state, y)
    cond = engine.iterate(cond, inst, mem, lag_steps, dt=dt)
    return cond.probabilities()


def two_point_correlation(state, inst, mem, lag_steps, dt=0.0,
                          prob_floor=PROBABILITY_FLOOR):
    """F = E[y_t y_{t+lag}] - E[y_t] E[y_{t+lag}].

    Splits the state by the current memory value, propagates each
    conditional branch lag_steps further, and correlates the register
    means.  lag_steps = 0 returns the variance.
    """
    blocks = _as_blocks(state)
    e_yy = 0.0
    mu_now = 0.0
    mu_lag = 0.0
    for k in blocks:
        p = float(np.trace(blocks[k]).real)
        if p <= prob_floor:
            continue
        y = float(k)
        mu_now += y * p
        cond = conditional_state(state, k)
        if lag_steps:
            cond = engine.iterate(cond, inst, mem, lag_steps, dt=dt)
        mean_later = mean_memory(cond)
        e_yy += y * p * mean_later
        mu_lag += p * mean_later
    return e_yy - mu_now * mu_lag
