"""Deterministic propagation of memory-resolved states.

Three solver families live here:

* the generic one-step recursion over an instrument and a causal memory
  (plus a transfer-matrix route for outcome-valued memories),
* the continuous-monitoring renewal solver, which assembles the map
  Omega = sum_k int_0^inf G(k,tau) J_k dtau in closed form from piecewise
  exponentials and reads the stationary state off its unit eigenvector,
* a Runge-Kutta integrator for the continuous weak-measurement feedback
  master equation, the dt -> 0 limit of the gridded Gaussian instrument.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import superop
from .memory import (GridDomain, MemoryResolvedState, counting_memory,
                     jump_memory, product_memory, sort_key)
from .models import Instrument

logger = logging.getLogger(__name__)

TAIL_EPSILON = 1e-8


class GridExtensionError(RuntimeError):
    """Raised when probability mass leaks past the end of the tau grid."""

    def __init__(self, message, suggested_tau_max=None):
        super().__init__(message)
        self.suggested_tau_max = suggested_tau_max


# ---------------------------------------------------------------------------
# generic discrete-time recursion


def step(state, inst, mem, dt=0.0):
    """One measurement interval of the memory-resolved recursion.

    Every occupied block rho(y') is pushed through each outcome map
    M_x(y') and accumulated at the updated memory value f_n(x, y').
    """
    n = state.step + 1
    new_blocks = {}
    saturations = state.saturations
    for y_prev, block in state.blocks.items():
        maps = inst.weighted_maps(y_prev)
        for x, m in zip(inst.outcomes, maps):
            out = superop.apply_superop(m, block)
            key, clamped = mem.advance(n, float(x), y_prev)
            saturations += int(clamped)
            if key in new_blocks:
                new_blocks[key] = new_blocks[key] + out
            else:
                new_blocks[key] = out
    return MemoryResolvedState(blocks=new_blocks, step=n,
                               time=state.time + dt, saturations=saturations)


def step_no_feedback(state, inst, mem, dt=0.0):
    """step() for instruments that ignore the memory register."""
    if inst.memory_dependent:
        raise ValueError("instrument depends on the memory; use step()")
    return step(state, inst, mem, dt=dt)


def step_two_memory(state, inst, mem_first, mem_second, dt=0.0):
    """Joint recursion for two registers (y, w); the instrument may read w.

    The state's keys are (y, w) pairs; inst receives only w.
    """
    pm = product_memory(mem_first, mem_second)
    wrapped = Instrument(
        outcomes=inst.outcomes,
        maps_fn=lambda yw: inst.maps_for(yw[1] if inst.memory_dependent else None),
        signature_fn=lambda yw: inst.signature(yw[1]),
        weights=inst.weights,
        label=inst.label,
    )
    return step(state, wrapped, pm, dt=dt)


def marginalize(state, index=1):
    """Sum a product-memory state over one register (default: the second)."""
    keep = 1 - index
    out = {}
    for key, block in state.blocks.items():
        k = key[keep]
        out[k] = out[k] + block if k in out else block.copy()
    return replace(state, blocks=out)


def iterate(state, inst, mem, steps, dt=0.0):
    for _ in range(steps):
        state = step(state, inst, mem, dt=dt)
    return state


@dataclass(frozen=True)
class ConvergenceReport:
    state: MemoryResolvedState
    steps: int
    converged: bool
    reason: str
    final_delta: float


def iterate_to_convergence(state, inst, mem, tol=1e-12, max_steps=100000,
                           dt=0.0):
    """Step until the block-wise max change drops below tol or the cap hits.

    The report says which of the two stopped the loop.
    """
    delta = math.inf
    for n in range(1, max_steps + 1):
        new = step(state, inst, mem, dt=dt)
        delta = _block_delta(state, new)
        state = new
        if delta < tol:
            return ConvergenceReport(state, n, True, "tolerance", delta)
    return ConvergenceReport(state, max_steps, False, "step-cap", delta)


def _block_delta(a, b):
    keys = set(a.blocks) | set(b.blocks)
    delta = 0.0
    for k in keys:
        if k in a.blocks and k in b.blocks:
            delta = max(delta, float(np.max(np.abs(a.blocks[k] - b.blocks[k]))))
        else:
            blk = a.blocks.get(k, b.blocks.get(k))
            delta = max(delta, float(np.max(np.abs(blk))))
    return delta


def min_block_eigenvalue(state):
    """Smallest eigenvalue over all (hermitized) blocks; positivity probe."""
    lo = math.inf
    for b in state.blocks.values():
        h = 0.5 * (b + b.conj().T)
        lo = min(lo, float(np.linalg.eigvalsh(h)[0]))
    return lo


def closed_unconditional_step(rho, inst, y=None):
    """Marginal update rho -> sum_x w_x M_x(y) rho in one application."""
    return superop.apply_superop(inst.total_map(y), rho)


def outcome_probabilities(rho, inst, y=None):
    """P(x) = w_x Tr[M_x(y) rho] for each outcome, as an array."""
    return np.array([np.trace(superop.apply_superop(m, rho)).real
                     for m in inst.weighted_maps(y)])


# ---------------------------------------------------------------------------
# transfer matrix for outcome-valued memories


@dataclass(frozen=True)
class TransferMatrix:
    outcomes: np.ndarray
    matrix: np.ndarray
    dim: int

    def block(self, i, j):
        dd = self.dim * self.dim
        return self.matrix[i * dd:(i + 1) * dd, j * dd:(j + 1) * dd]


def transfer_matrix(inst):
    """Block matrix Xi[x, x'] = w_x M_x(x') of the current-resolved chain.

    Row blocks are the new outcome, column blocks the previous one; the
    stacked vector of blocks evolves as a plain matrix-vector product.
    """
    outs = inst.outcomes
    first = inst.maps_for(float(outs[0]))
    d = superop.superop_dim(first[0])
    dd = d * d
    m = outs.size
    big = np.zeros((m * dd, m * dd), dtype=complex)
    for j, y in enumerate(outs):
        maps = inst.weighted_maps(float(y))
        for i in range(m):
            big[i * dd:(i + 1) * dd, j * dd:(j + 1) * dd] = maps[i]
    return TransferMatrix(outcomes=np.asarray(outs, dtype=float), matrix=big,
                          dim=d)


def check_column_stochastic(tm, tol=1e-10):
    """Each previous-outcome column must conserve total trace."""
    t = superop.trace_vector(tm.dim)
    m = tm.outcomes.size
    stacked = np.tile(t, m)
    defect = np.max(np.abs(stacked @ tm.matrix - stacked))
    if defect > tol:
        raise ValueError(f"transfer matrix violates trace conservation "
                         f"by {defect:.3e}")


def state_to_stacked(state, outcomes, dim):
    dd = dim * dim
    v = np.zeros(outcomes.size * dd, dtype=complex)
    for i, x in enumerate(outcomes):
        b = state.blocks.get(float(x))
        if b is not None:
            v[i * dd:(i + 1) * dd] = superop.vec(b)
    return v


def stacked_to_state(v, outcomes, dim, step=0, time=0.0):
    dd = dim * dim
    blocks = {}
    for i, x in enumerate(outcomes):
        blocks[float(x)] = superop.unvec(v[i * dd:(i + 1) * dd], dim)
    return MemoryResolvedState(blocks=blocks, step=step, time=time)


def current_resolved_steady(tm, eig_tol=1e-6):
    """Stationary blocks of the transfer matrix (unit-eigenvalue vector).

    Blocks are hermitized and jointly normalized to unit total trace;
    negative block eigenvalues below -1e-10 are rejected.
    """
    v = superop.fixed_point_eigenvector(tm.matrix, eig_tol=eig_tol)
    dd = tm.dim * tm.dim
    traces = sum(np.trace(superop.unvec(v[i * dd:(i + 1) * dd], tm.dim))
                 for i in range(tm.outcomes.size))
    if abs(traces) < 1e-12:
        raise superop.NoFixedPointError("stationary vector is traceless")
    v = v / traces
    blocks = {}
    for i, x in enumerate(tm.outcomes):
        b = superop.unvec(v[i * dd:(i + 1) * dd], tm.dim)
        b = 0.5 * (b + b.conj().T)
        lo = float(np.linalg.eigvalsh(b)[0])
        if lo < -1e-10:
            raise ValueError(f"stationary block for outcome {x} has negative "
                             f"eigenvalue {lo:.3e}")
        blocks[float(x)] = b
    return MemoryResolvedState(blocks=blocks)


# ---------------------------------------------------------------------------
# continuous monitoring: renewal solver


@dataclass(frozen=True)
class Segment:
    """One stretch of constant generators between switching times."""
    duration: float
    nojump: np.ndarray
    full: np.ndarray


@dataclass(frozen=True)
class JumpProcess:
    """Piecewise-constant monitored dynamics.

    channels maps a jump label to its sandwich map J_q; segments maps the
    label to the schedule of Segment entries that applies while the last
    jump had that label (final duration must be inf).
    """

    channels: tuple
    jump_maps: dict
    segments: dict

    def __post_init__(self):
        if tuple(sorted(self.channels)) != tuple(self.channels):
            raise ValueError("channels must be ascending")
        for q in self.channels:
            segs = self.segments[q]
            if not math.isinf(segs[-1].duration):
                raise ValueError("last segment must have infinite duration")
            if any(s.duration <= 0 for s in segs[:-1]):
                raise ValueError("segment durations must be positive")

    @property
    def dim(self):
        return superop.superop_dim(self.jump_maps[self.channels[0]])

    def switch_times(self, q):
        times, t = [], 0.0
        for seg in self.segments[q][:-1]:
            t += seg.duration
            times.append(t)
        return times

    def segment_at(self, q, tau):
        """Index of the segment covering tau (left-closed intervals)."""
        t = 0.0
        for i, seg in enumerate(self.segments[q][:-1]):
            t += seg.duration
            if tau < t - 1e-12 * max(1.0, abs(t)):
                return i
        return len(self.segments[q]) - 1


def nojump_propagator(process, q, tau):
    """G(q, tau): ordered product of segment exponentials up to tau."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    dd = process.dim ** 2
    g = np.eye(dd, dtype=complex)
    left = tau
    for seg in process.segments[q]:
        span = left if math.isinf(seg.duration) else min(left, seg.duration)
        g = superop.expm(seg.nojump, span) @ g
        left -= span
        if left <= 0.0:
            break
    return g


def nojump_propagators(process, q, taus):
    """G(q, tau) for an ascending array of taus, batched per segment."""
    taus = np.asarray(taus, dtype=float)
    dd = process.dim ** 2
    out = np.empty((taus.size, dd, dd), dtype=complex)
    start = 0.0
    prefix = np.eye(dd, dtype=complex)
    for seg in process.segments[q]:
        end = math.inf if math.isinf(seg.duration) else start + seg.duration
        sel = (taus >= start - 1e-15) & (taus < end) if not math.isinf(end) \
            else (taus >= start - 1e-15)
        if np.any(sel):
            out[sel] = _batched_expm_apply(seg.nojump, taus[sel] - start, prefix)
        if math.isinf(seg.duration):
            break
        prefix = superop.expm(seg.nojump, seg.duration) @ prefix
        start = end
    return out


def _batched_expm_apply(a, ts, prefix):
    """[exp(t a) @ prefix for t in ts], sharing one eigendecomposition."""
    try:
        w, v = np.linalg.eig(a)
        cond = np.linalg.cond(v)
        if np.isfinite(cond) and cond < superop.EXPM_COND_LIMIT:
            right = np.linalg.inv(v) @ prefix
            phases = np.exp(np.multiply.outer(ts, w))      # (t, dd)
            return (phases[:, None, :] * v[None, :, :]) @ right
    except np.linalg.LinAlgError:  # pragma: no cover
        pass
    return np.array([scipy.linalg.expm(t * a) @ prefix for t in ts])


def integrated_nojump(process, q, tau_from=0.0):
    """Closed form of int_{tau_from}^inf G(q, tau) dtau.

    Each finite segment contributes A^{-1}(e^{bA} - e^{aA}) chained onto
    the propagator that reaches it; the final segment contributes
    -A^{-1} e^{aA}.  Requires every segment generator to be invertible
    (strictly decaying no-jump evolution).
    """
    dd = process.dim ** 2
    acc = np.zeros((dd, dd), dtype=complex)
    start = 0.0
    prefix = np.eye(dd, dtype=complex)
    for seg in process.segments[q]:
        a = seg.nojump
        inv_a = superop.inverse(a)
        lo = max(start, tau_from)
        if math.isinf(seg.duration):
            acc += -inv_a @ superop.expm(a, lo - start) @ prefix
            break
        end = start + seg.duration
        if lo < end:
            acc += inv_a @ (superop.expm(a, seg.duration)
                            - superop.expm(a, lo - start)) @ prefix
        prefix = superop.expm(a, seg.duration) @ prefix
        start = end
    return acc


def lambda_maps(process):
    """Per-channel maps Lam_q = int_0^inf G(q,tau) dtau . J_q."""
    return {q: integrated_nojump(process, q) @ process.jump_maps[q]
            for q in process.channels}


def renewal_map(process):
    """Omega = sum_q Lam_q; its unit eigenvector is the stationary state."""
    total = None
    for lam in lambda_maps(process).values():
        total = lam if total is None else total + lam
    return total


def renewal_map_quadrature(process, taus, weights):
    """Omega assembled by trapezoid quadrature on a tau grid (generic
    fallback path); the tail beyond the grid is added in closed form.

    Returns (omega, defect) where defect is the worst violation of the
    per-schedule exhaustiveness identity sum_q Tr[J_q int G(k)] = Tr --
    the next jump fires with certainty -- which isolates pure quadrature
    error and shrinks as O(step^2).
    """
    total = None
    defect = 0.0
    tau_max = float(taus[-1])
    tvec = superop.trace_vector(process.dim)
    jump_sum = sum(process.jump_maps[q] for q in process.channels)
    for q in process.channels:
        gs = nojump_propagators(process, q, taus)
        integral = np.einsum("t,tab->ab", weights, gs)
        integral = integral + integrated_nojump(process, q, tau_from=tau_max)
        defect = max(defect, float(np.max(np.abs(
            tvec @ jump_sum @ integral - tvec))))
        term = integral @ process.jump_maps[q]
        total = term if total is None else total + term
    return total, defect


def steady_state_by_iteration(omega, rho0, tol=1e-12, max_iter=5000):
    """Fixed point of rho -> Omega rho / Tr[Omega rho] by plain iteration."""
    rho = np.asarray(rho0, dtype=complex)
    rho = rho / np.trace(rho)
    for n in range(1, max_iter + 1):
        new = superop.apply_superop(omega, rho)
        new = new / np.trace(new)
        delta = float(np.max(np.abs(new - rho)))
        rho = new
        if delta < tol:
            return rho, n, True
    return rho, max_iter, False


def survival_probability(process, q, tau, sigma):
    """Tr[G(q, tau) sigma]: probability that no jump occurred up to tau."""
    return float(np.trace(superop.apply_superop(
        nojump_propagator(process, q, tau), sigma)).real)


def _grid_weights(taus):
    """Trapezoid weights of a (possibly non-uniform) ascending grid."""
    w = np.zeros_like(taus)
    w[1:] += 0.5 * np.diff(taus)
    w[:-1] += 0.5 * np.diff(taus)
    return w


def _tail_rates(process):
    """(slowest decay, fastest variation) of the final-segment generators."""
    slow = math.inf
    fast = 0.0
    for q in process.channels:
        eig = np.linalg.eigvals(process.segments[q][-1].nojump)
        slow = min(slow, -float(eig.real.max()))
        fast = max(fast, float(np.abs(eig).max()))
    return slow, fast


def build_tau_grid(process, scales, eps_tail=TAIL_EPSILON, step=None):
    """Grid over [0, tau_max] honoring the switch points exactly.

    step defaults to min(positive scales)/50 and applies through the
    switching region; past the last switch the evolution is a plain
    exponential decay, so the spacing relaxes to ~1/(200 rate), which
    keeps the trapezoid error of the decaying tail below ~1e-7 relative
    without letting slow channels blow up the point count.  tau_max grows
    by doubling until the no-jump survival from every basis projector is
    < eps_tail on every channel.
    """
    positive = [s for s in scales if s and s > 0 and math.isfinite(s)]
    if not positive:
        raise ValueError("at least one positive time scale required")
    if step is None:
        step = min(positive) / 50.0
    d = process.dim
    projectors = [np.diag([1.0 + 0j if i == j else 0.0 for j in range(d)])
                  for i in range(d)]
    switch = sorted({t for q in process.channels for t in process.switch_times(q)})
    tau_max = max(positive + switch) if switch else max(positive)
    tau_max = max(tau_max, step * 50)
    for _ in range(60):
        worst = max(survival_probability(process, q, tau_max, p)
                    for q in process.channels for p in projectors)
        if worst < eps_tail:
            break
        tau_max *= 2.0
    else:
        raise GridExtensionError(
            "no-jump survival does not decay; cannot close the tau grid",
            suggested_tau_max=tau_max)
    slow, fast = _tail_rates(process)
    tail_step = step
    if slow > 0 and math.isfinite(slow) and fast > 0:
        tail_step = max(step, min(1.0 / (200.0 * slow),
                                  1.0 / (20.0 * fast),
                                  tau_max / 100.0))
    fine_end = switch[-1] if switch else 0.0
    bounds = [0.0] + [t for t in switch if t < tau_max] + [tau_max]
    taus = [np.array([0.0])]
    for a, b in zip(bounds[:-1], bounds[1:]):
        h = step if a < fine_end else tail_step
        n = max(1, int(math.ceil((b - a) / h - 1e-9)))
        taus.append(np.linspace(a, b, n + 1)[1:])
    return np.concatenate(taus)


@dataclass(frozen=True)
class JumpGrid:
    """Stationary conditional blocks on the (channel, tau) grid.

    blocks[iq, it] holds the density G(q, tau) J_q rho_ss; weights are
    trapezoid weights, tail the closed-form mass beyond the grid.
    """

    channels: tuple
    taus: np.ndarray
    weights: np.ndarray
    blocks: np.ndarray
    tail: dict
    refinements: int = 0

    def density(self, q):
        iq = self.channels.index(q)
        return np.einsum("tii->t", self.blocks[iq]).real

    def channel_probability(self, q):
        iq = self.channels.index(q)
        return float(self.weights @ self.density(q)) + self.tail[q]

    def normalization(self):
        return sum(self.channel_probability(q) for q in self.channels)

    def to_memory_state(self):
        """Mass-per-cell view, renormalized to unit total trace."""
        blocks = {}
        for iq, q in enumerate(self.channels):
            for it, tau in enumerate(self.taus):
                blocks[(float(q), float(tau))] = \
                    self.weights[it] * self.blocks[iq, it]
        total = sum(np.trace(b).real for b in blocks.values())
        blocks = {k: b / total for k, b in blocks.items()}
        return MemoryResolvedState(blocks=blocks)


@dataclass(frozen=True)
class JumpSteadyState:
    """Output bundle of the renewal solver."""

    rho: np.ndarray
    probabilities: dict
    lambdas: dict
    omega: np.ndarray
    process: JumpProcess
    grid: JumpGrid = None
    method: str = "closed-form"

    def conditional(self, q):
        """Normalized system state given the last jump label."""
        block = superop.apply_superop(self.lambdas[q], self.rho)
        return superop.ensure_density(block / np.trace(block))

    def memory_state(self):
        """Two-block state over the jump labels (closed form, exact)."""
        blocks = {}
        for q in self.process.channels:
            b = superop.apply_superop(self.lambdas[q], self.rho)
            blocks[float(q)] = 0.5 * (b + b.conj().T)
        total = sum(np.trace(b).real for b in blocks.values())
        blocks = {k: b / total for k, b in blocks.items()}
        return MemoryResolvedState(blocks=blocks)


def jump_steady_state(process, scales=None, with_grid=True, method="closed",
                      eps_tail=TAIL_EPSILON, norm_tol=1e-6, max_refine=6,
                      grid_step=None):
    """Stationary state of a monitored piecewise-constant process.

    method "closed" assembles Omega from the closed-form integrals;
    "quadrature" uses the trapezoid fallback on the tau grid.  The grid is
    refined (step halving) until its quadrature normalization lands within
    norm_tol of 1.
    """
    lams = lambda_maps(process)
    taus = weights = None
    refinements = 0
    if with_grid or method == "quadrature":
        if scales is None:
            raise ValueError("tau-grid scales required")
        taus = build_tau_grid(process, scales, eps_tail=eps_tail,
                              step=grid_step)

    if method == "closed":
        omega = renewal_map(process)
        eig_tol = 1e-6
    elif method == "quadrature":
        # refine until the quadrature is exhaustive to norm_tol; its error
        # lands directly on Omega's unit eigenvalue, so the eigensolver
        # tolerance scales with it
        for _ in range(max_refine + 1):
            omega, q_defect = renewal_map_quadrature(process, taus,
                                                     _grid_weights(taus))
            if q_defect <= norm_tol:
                break
            taus = _refine_grid(taus)
        else:
            raise GridExtensionError(
                f"quadrature defect {q_defect:.3e} persists after "
                f"{max_refine} refinements", suggested_tau_max=float(taus[-1]))
        eig_tol = max(1e-6, 10.0 * q_defect)
    else:
        raise ValueError(f"unknown method {method!r}")

    rho_ss = superop.steady_density(omega, eig_tol=eig_tol,
                                    residual_tol=max(1e-9, eig_tol))
    probabilities = {}
    for q in process.channels:
        probabilities[q] = float(np.trace(
            superop.apply_superop(lams[q], rho_ss)).real)

    grid = None
    if with_grid:
        for refinements in range(max_refine + 1):
            weights = _grid_weights(taus)
            blocks = np.empty((len(process.channels), taus.size,
                               process.dim, process.dim), dtype=complex)
            tail = {}
            for iq, q in enumerate(process.channels):
                seed = superop.apply_superop(process.jump_maps[q], rho_ss)
                gs = nojump_propagators(process, q, taus)
                # each row of gs @ vec(seed) is a column-stacked operator
                blocks[iq] = (gs @ superop.vec(seed)).reshape(
                    taus.size, process.dim, process.dim).transpose(0, 2, 1)
                tail[q] = float(np.trace(superop.apply_superop(
                    integrated_nojump(process, q, tau_from=float(taus[-1]))
                    @ process.jump_maps[q], rho_ss)).real)
            grid = JumpGrid(channels=tuple(process.channels), taus=taus,
                            weights=weights, blocks=blocks, tail=tail,
                            refinements=refinements)
            defect = abs(grid.normalization() - 1.0)
            if defect <= norm_tol:
                break
            taus = _refine_grid(taus)
        else:
            raise GridExtensionError(
                f"tau-grid normalization defect {defect:.3e} persists after "
                f"{max_refine} refinements", suggested_tau_max=float(taus[-1]))
        if refinements:
            logger.info("tau grid refined %d time(s) to meet normalization",
                        refinements)

    return JumpSteadyState(rho=rho_ss, probabilities=probabilities,
                           lambdas=lams, omega=omega, process=process,
                           grid=grid, method=method)


def _refine_grid(taus):
    mid = 0.5 * (taus[:-1] + taus[1:])
    return np.sort(np.concatenate([taus, mid]))


# ---------------------------------------------------------------------------
# discrete-time view of continuous monitoring


def vanloan_integral(a, b, c, t):
    """int_0^t exp((t-s) a) b exp(s c) ds via the block-exponential identity."""
    n = a.shape[0]
    blk = np.zeros((2 * n, 2 * n), dtype=complex)
    blk[:n, :n] = a
    blk[:n, n:] = b
    blk[n:, n:] = c
    return scipy.linalg.expm(t * blk)[:n, n:]


def discrete_jump_instrument(process, dt):
    """Exactly trace-preserving instrument for one monitoring window.

    Outcome 0 is "no jump" with map exp(dt L0); outcome q is "first jump
    in the window had label q" with map int_0^dt exp((dt-s) L_post(q))
    J_q exp(s L0) ds, where L_post(q) is the unconditional generator of
    the cell entered after the jump.  The memory is (jump label, time
    since jump).
    """
    channels = tuple(process.channels)
    outcomes = np.array(sorted(list(channels) + [0.0]))
    post_full = {q: process.segments[q][0].full for q in channels}

    cache = {}

    def maps_for_signature(sig):
        if sig not in cache:
            q_mem, seg_idx = sig
            seg = process.segments[q_mem][seg_idx]
            mats = []
            for x in outcomes:
                if x == 0.0:
                    mats.append(superop.expm(seg.nojump, dt))
                else:
                    mats.append(vanloan_integral(
                        post_full[x], process.jump_maps[x], seg.nojump, dt))
            cache[sig] = tuple(mats)
        return cache[sig]

    def signature_fn(y):
        k, tau = y
        return (k, process.segment_at(k, tau))

    return Instrument(outcomes=outcomes,
                      maps_fn=lambda y: maps_for_signature(signature_fn(y)),
                      signature_fn=signature_fn,
                      label="windowed-monitoring")


def monitoring_memory(dt, k0, tau_cap, channels=(-1.0, 1.0)):
    """(jump label, clamped time since jump) product register."""
    return product_memory(jump_memory(k0, channels=channels),
                          counting_memory(dt, cap=tau_cap))


@dataclass(frozen=True)
class JumpChainState:
    """Vectorized twin of the memory-resolved state for monitoring runs.

    blocks[iq, it] is the vec'd operator at (channel iq, tau = it*dt);
    the last tau cell absorbs (clamps) everything beyond the cap.
    """

    blocks: np.ndarray
    dt: float
    step: int = 0

    @property
    def taus(self):
        return self.dt * np.arange(self.blocks.shape[1])

    def total_trace(self, dim):
        tr = superop.trace_vector(dim)
        return float(np.real(np.einsum("qtv,v->", self.blocks, tr)))


def jump_chain_init(process, dt, tau_cap, rho0, k0):
    d = process.dim
    nt = int(round(tau_cap / dt)) + 1
    nq = len(process.channels)
    blocks = np.zeros((nq, nt, d * d), dtype=complex)
    iq = process.channels.index(k0)
    blocks[iq, 0] = superop.vec(np.asarray(rho0, dtype=complex))
    return JumpChainState(blocks=blocks, dt=dt)


@dataclass(frozen=True)
class JumpChainPlan:
    """Per-channel contiguous (lo, hi, maps) runs; constant across steps."""

    runs: tuple     # runs[iq] = ((lo, hi, maps tuple), ...)


def jump_chain_plan(chain, process, inst):
    nt = chain.blocks.shape[1]
    dt = chain.dt
    per_channel = []
    for q in process.channels:
        seg_ids = np.array([process.segment_at(q, j * dt)
                            for j in range(nt)])
        runs = []
        for sid in np.unique(seg_ids):
            lo, hi = _run_bounds(seg_ids, sid)
            runs.append((lo, hi, inst.maps_fn((q, lo * dt))))
        per_channel.append(tuple(runs))
    return JumpChainPlan(runs=tuple(per_channel))


def jump_chain_step(chain, process, inst, plan=None):
    """One monitoring window, vectorized over all (channel, tau) cells."""
    nq, nt, dd = chain.blocks.shape
    new = np.zeros_like(chain.blocks)
    dt = chain.dt
    if plan is None:
        plan = jump_chain_plan(chain, process, inst)
    channel_index = {x: i for i, x in enumerate(process.channels)}
    for iq, q in enumerate(process.channels):
        for lo, hi, maps in plan.runs[iq]:
            sub = chain.blocks[iq, lo:hi]
            for x, m in zip(inst.outcomes, maps):
                pushed = sub @ m.T
                if x == 0.0:
                    if hi < nt:
                        new[iq, lo + 1:hi + 1] += pushed
                    else:
                        new[iq, lo + 1:hi] += pushed[:-1]
                        new[iq, nt - 1] += pushed[-1]  # clamp at the cap
                else:
                    new[channel_index[x], 0] += pushed.sum(axis=0)
    return JumpChainState(blocks=new, dt=dt, step=chain.step + 1)


def _run_bounds(ids, value):
    idx = np.flatnonzero(ids == value)
    return int(idx[0]), int(idx[-1]) + 1


def jump_chain_channel_probabilities(chain, process):
    """Trace mass per jump label, marginalized over the clock."""
    tr = superop.trace_vector(process.dim)
    sums = np.real(chain.blocks @ tr).sum(axis=1)
    return {q: float(sums[iq]) for iq, q in enumerate(process.channels)}


def jump_chain_to_memory_state(chain, process):
    d = process.dim
    blocks = {}
    for iq, q in enumerate(process.channels):
        for it in range(chain.blocks.shape[1]):
            v = chain.blocks[iq, it]
            if np.any(v != 0.0):
                blocks[(float(q), float(it * chain.dt))] = superop.unvec(v, d)
    return MemoryResolvedState(blocks=blocks, step=chain.step,
                               time=chain.step * chain.dt)


def jump_chain_min_eigenvalue(chain, dim):
    """Smallest block eigenvalue, closed form for 2x2 hermitized blocks."""
    if dim != 2:
        mats = chain.blocks.reshape(-1, dim, dim).transpose(0, 2, 1)
        lo = math.inf
        for m in mats:
            h = 0.5 * (m + m.conj().T)
            lo = min(lo, float(np.linalg.eigvalsh(h)[0]))
        return lo
    v = chain.blocks.reshape(-1, 4)
    a = v[:, 0].real
    c = v[:, 3].real
    b = 0.5 * (v[:, 2] + np.conj(v[:, 1]))  # vec order: [00, 10, 01, 11]
    half = 0.5 * (a + c)
    rad = np.sqrt((0.5 * (a - c)) ** 2 + np.abs(b) ** 2)
    return float(np.min(half - rad))


# ---------------------------------------------------------------------------
# continuous weak-measurement feedback master equation


def wgm_generator(a_op, lam, f_op, liouvillian_matrix):
    """Generator of the continuous limit of Gaussian measurement + kick.

    rho' = L rho + D[sqrt(lam) a] rho + D[f] rho
           - i [f, sqrt(lam)(a rho + rho a^dag)].
    """
    a_op = np.asarray(a_op, dtype=complex)
    f_op = np.asarray(f_op, dtype=complex)
    gen = np.asarray(liouvillian_matrix, dtype=complex).copy()
    gen += superop.dissipator(np.sqrt(lam) * a_op)
    gen += superop.dissipator(f_op)
    sand = superop.spre(a_op) + superop.spost(a_op.conj().T)
    gen += -1j * np.sqrt(lam) * (superop.spre(f_op) - superop.spost(f_op)) @ sand
    return gen


def wgm_master_step(rho, generator, dt, trace_tol=1e-8):
    """One classical RK4 step of the feedback master equation."""
    def rhs(r):
        return superop.apply_superop(generator, r)

    k1 = rhs(rho)
    k2 = rhs(rho + 0.5 * dt * k1)
    k3 = rhs(rho + 0.5 * dt * k2)
    k4 = rhs(rho + dt * k3)
    new = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    drift = abs(np.trace(new).real - np.trace(rho).real)
    if drift > trace_tol:
        raise ValueError(f"trace drift {drift:.3e} in one step; "
                         f"reduce the step size")
    return new


def wgm_propagate(rho, generator, dt, steps):
    """RK4 propagation as a matrix power of the one-step update."""
    dd = generator.shape[0]
    eye = np.eye(dd, dtype=complex)
    g1 = generator * dt
    one = eye + g1 + g1 @ g1 / 2.0 + g1 @ g1 @ g1 / 6.0 \
        + g1 @ g1 @ g1 @ g1 / 24.0
    total = np.linalg.matrix_power(one, steps)
    return superop.apply_superop(total, rho)
