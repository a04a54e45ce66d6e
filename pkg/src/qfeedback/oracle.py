"""Stochastic-trajectory oracle for the deterministic solvers.

Trajectories sample outcomes by inverse CDF over the ascending outcome
list, using per-trajectory PCG64 substreams spawned from one master seed
(generator identity is recorded in run metadata).  The oracle shares the
engine's discretization exactly: gridded outcomes are drawn from the
discrete quadrature weights and monitoring windows use the same windowed
instrument, so any systematic discrepancy isolates an algorithmic bug
rather than discretization error.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import engine, superop

NORMALIZATION_TOL = 1e-8


class InstrumentNormalizationError(RuntimeError):
    """Total sampling weight deviated from 1 beyond tolerance."""


def rng_metadata():
    return {
        "generator": "numpy PCG64, per-trajectory SeedSequence.spawn streams",
        "numpy_version": np.__version__,
    }


def spawn_sequences(seed, n):
    if isinstance(seed, (list, tuple)):
        if len(seed) != n:
            raise ValueError(f"need {n} seed sequences, got {len(seed)}")
        return list(seed)
    if isinstance(seed, np.random.SeedSequence):
        return seed.spawn(n)
    return np.random.SeedSequence(seed).spawn(n)


@dataclass
class Trajectory:
    seed: object
    outcomes: np.ndarray
    memory_path: list
    final_state: np.ndarray
    states: list = None
    step_probabilities: np.ndarray = None

    def to_jsonl(self):
        return json.dumps({
            "seed": str(self.seed),
            "outcomes": np.asarray(self.outcomes).tolist(),
            "memory": [list(m) if isinstance(m, tuple) else m
                       for m in self.memory_path],
        })


def simulate(inst, mem, rho0, steps, seed, keep_states=False, dt=0.0):
    """One conditional trajectory under an instrument and a memory.

    seed may be an int or a SeedSequence (use spawn_sequences for
    reproducible ensembles).
    """
    rng = np.random.default_rng(seed)
    y, _ = mem.domain.canonical(mem.initial)
    rho = np.asarray(rho0, dtype=complex).copy()
    outcomes = np.empty(steps)
    memory_path = [y]
    states = [rho.copy()] if keep_states else None
    probs_kept = np.empty(steps)
    for n in range(1, steps + 1):
        probs = engine.outcome_probabilities(rho, inst, y)
        total = probs.sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise InstrumentNormalizationError(
                f"outcome weights sum to {total}, off by "
                f"{abs(total - 1.0):.3e}")
        cum = np.cumsum(probs / total)
        u = rng.random()
        idx = min(int(np.searchsorted(cum, u, side="right")),
                  probs.size - 1)
        x = float(inst.outcomes[idx])
        maps = inst.weighted_maps(y)
        rho = superop.apply_superop(maps[idx], rho)
        tr = np.trace(rho).real
        rho = rho / tr
        y, _ = mem.advance(n, x, y)
        outcomes[n - 1] = x
        probs_kept[n - 1] = probs[idx] / total
        memory_path.append(y)
        if keep_states:
            states.append(rho.copy())
    return Trajectory(seed=seed, outcomes=outcomes, memory_path=memory_path,
                      final_state=rho, states=states,
                      step_probabilities=probs_kept)


def replay_memory(mem, outcomes):
    """Memory path regenerated from an outcome record (consistency check)."""
    y, _ = mem.domain.canonical(mem.initial)
    path = [y]
    for n, x in enumerate(outcomes, start=1):
        y, _ = mem.advance(n, float(x), y)
        path.append(y)
    return path


# ---------------------------------------------------------------------------
# vectorized ensembles


@dataclass
class BatchResult:
    outcomes: np.ndarray        # (n_traj, steps) outcome values
    final_states: np.ndarray    # (n_traj, dd) vec'd conditional states
    final_memory: list          # per-trajectory final memory value
    dim: int
    initial_component: np.ndarray = None

    def final_density(self, i):
        return superop.unvec(self.final_states[i], self.dim)

    def mean_final_state(self):
        return superop.unvec(self.final_states.mean(axis=0), self.dim)


class _UniformBlocks:
    """Per-trajectory uniform streams, drawn in step blocks to bound memory.

    Block draws continue each PCG64 stream exactly, so column s always
    equals the s-th sequential rng.random() of trajectory i.
    """

    def __init__(self, seed, n_traj, block=512):
        self._gens = [np.random.default_rng(s)
                      for s in spawn_sequences(seed, n_traj)]
        self._block = block
        self._buf = None
        self._offset = 0

    def column(self, step):
        if self._buf is None or not (
                self._offset <= step < self._offset + self._buf.shape[1]):
            if self._buf is not None and step != self._offset + \
                    self._buf.shape[1]:
                raise ValueError("uniform blocks must be consumed in order")
            self._offset = step
            self._buf = np.stack([g.random(self._block) for g in self._gens])
        return self._buf[:, step - self._offset]


def _sample_rows(cum, u):
    """Row-wise inverse CDF matching searchsorted(side='right')."""
    idx = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cum.shape[1] - 1)


def simulate_batch(inst, rho0, steps, seed, n_traj, initial_mixture=None):
    """Ensemble under a memory-independent instrument.

    Matches simulate() outcome-for-outcome on the same spawned seeds.
    initial_mixture = (probabilities, densities) samples each trajectory's
    starting state by inverse CDF, consuming the first uniform of its
    stream (rho0 is then ignored); the drawn component index comes back
    in the initial_component field.
    """
    if inst.memory_dependent:
        raise ValueError("use simulate_batch_monitoring for memory-dependent "
                         "instruments")
    maps = np.stack(inst.weighted_maps())
    d = superop.superop_dim(maps[0])
    tvec = superop.trace_vector(d)
    trows = maps.transpose(0, 2, 1) @ tvec          # (m, dd): Tr[M_x .]
    uniforms = _UniformBlocks(seed, n_traj)
    initial_component = None
    if initial_mixture is None:
        states = np.tile(superop.vec(np.asarray(rho0, dtype=complex)),
                         (n_traj, 1))
        draw_offset = 0
    else:
        probs0, comps = initial_mixture
        probs0 = np.asarray(probs0, dtype=float)
        if abs(probs0.sum() - 1.0) > NORMALIZATION_TOL:
            raise ValueError("initial mixture weights must sum to 1")
        comp_vecs = np.stack([superop.vec(np.asarray(c, dtype=complex))
                              for c in comps])
        cum0 = np.tile(np.cumsum(probs0), (n_traj, 1))
        initial_component = _sample_rows(cum0, uniforms.column(0))
        states = comp_vecs[initial_component].copy()
        draw_offset = 1
    outcome_idx = np.empty((n_traj, steps), dtype=np.int64)
    for s in range(steps):
        probs = np.real(states @ trows.T)
        total = probs.sum(axis=1)
        worst = np.max(np.abs(total - 1.0))
        if worst > NORMALIZATION_TOL:
            raise InstrumentNormalizationError(
                f"outcome weights off by {worst:.3e}")
        cum = np.cumsum(probs / total[:, None], axis=1)
        idx = _sample_rows(cum, uniforms.column(s + draw_offset))
        outcome_idx[:, s] = idx
        for x in range(maps.shape[0]):
            mask = idx == x
            if np.any(mask):
                states[mask] = states[mask] @ maps[x].T
        tr = np.real(states @ tvec)
        states = states / tr[:, None]
    outcomes = inst.outcomes[outcome_idx]
    return BatchResult(outcomes=outcomes, final_states=states,
                       final_memory=[float(v) for v in outcomes[:, -1]],
                       dim=d, initial_component=initial_component)


def simulate_batch_monitoring(process, dt, rho0, k0, steps, seed, n_traj,
                              tau_cap, initial_taus=None, initial_states=None,
                              initial_channels=None, record_outcomes=False):
    """Ensemble of monitoring trajectories with (jump label, clock) memory.

    Uses the windowed instrument of discrete_jump_instrument and the same
    quantized clock as the deterministic chain.  Initial conditions may be
    supplied per trajectory (arrays) to start from a sampled distribution.
    """
    inst = engine.discrete_jump_instrument(process, dt)
    channels = list(process.channels)
    outcomes = inst.outcomes
    d = process.dim
    dd = d * d
    tvec = superop.trace_vector(d)

    # enumerate (channel, segment) signatures and their map stacks
    sig_list = []
    sig_lookup = {}
    for q in channels:
        for sidx in range(len(process.segments[q])):
            sig_lookup[(q, sidx)] = len(sig_list)
            sig_list.append((q, sidx))
    map_stack = np.empty((len(sig_list), outcomes.size, dd, dd), dtype=complex)
    for i, (q, sidx) in enumerate(sig_list):
        # representative tau inside the segment
        t0 = sum(s.duration for s in process.segments[q][:sidx])
        map_stack[i] = np.stack(inst.maps_fn((q, t0)))
    trow_stack = map_stack.transpose(0, 1, 3, 2) @ tvec   # (sig, m, dd)

    switch = {q: np.array(process.switch_times(q)) for q in channels}
    switch_eff = {q: s - 1e-12 * np.maximum(1.0, np.abs(s))
                  for q, s in switch.items()}

    jump_channel_idx = np.full(outcomes.size, -1, dtype=np.int64)
    for i, x in enumerate(outcomes):
        if x != 0.0:
            jump_channel_idx[i] = channels.index(x)

    if initial_states is None:
        states = np.tile(superop.vec(np.asarray(rho0, dtype=complex)),
                         (n_traj, 1))
    else:
        states = np.array(initial_states, dtype=complex)
    k_idx = (np.full(n_traj, channels.index(k0), dtype=np.int64)
             if initial_channels is None
             else np.asarray(initial_channels, dtype=np.int64))
    taus = (np.zeros(n_traj) if initial_taus is None
            else np.asarray(initial_taus, dtype=float))

    uniforms = _UniformBlocks(seed, n_traj)
    outcome_idx = (np.empty((n_traj, steps), dtype=np.int8)
                   if record_outcomes else None)

    base_sig = np.array([sig_lookup[(q, 0)] for q in channels])
    n_seg = {q: len(process.segments[q]) for q in channels}

    for s in range(steps):
        sig = np.empty(n_traj, dtype=np.int64)
        for iq, q in enumerate(channels):
            mask = k_idx == iq
            if not np.any(mask):
                continue
            if n_seg[q] == 1:
                sig[mask] = base_sig[iq]
            else:
                seg = np.searchsorted(switch_eff[q], taus[mask], side="right")
                sig[mask] = base_sig[iq] + seg
        probs = np.empty((n_traj, outcomes.size))
        for i in range(len(sig_list)):
            mask = sig == i
            if np.any(mask):
                probs[mask] = np.real(states[mask] @ trow_stack[i].T)
        total = probs.sum(axis=1)
        worst = np.max(np.abs(total - 1.0))
        if worst > NORMALIZATION_TOL:
            raise InstrumentNormalizationError(
                f"outcome weights off by {worst:.3e}")
        cum = np.cumsum(probs / total[:, None], axis=1)
        idx = _sample_rows(cum, uniforms.column(s))
        if record_outcomes:
            outcome_idx[:, s] = idx
        for i in range(len(sig_list)):
            for x in range(outcomes.size):
                mask = (sig == i) & (idx == x)
                if np.any(mask):
                    states[mask] = states[mask] @ map_stack[i, x].T
        tr = np.real(states @ tvec)
        states = states / tr[:, None]
        jumped = jump_channel_idx[idx] >= 0
        k_idx = np.where(jumped, jump_channel_idx[idx], k_idx)
        taus = np.where(jumped, 0.0,
                        np.minimum((np.round(taus / dt) + 1) * dt, tau_cap))

    final_memory = [(channels[k_idx[i]], float(taus[i]))
                    for i in range(n_traj)]
    recorded = outcomes[outcome_idx] if record_outcomes else None
    return BatchResult(outcomes=recorded, final_states=states,
                       final_memory=final_memory, dim=d)


# ---------------------------------------------------------------------------
# empirical distributions and agreement reports


def empirical_distribution(values):
    """Relative frequencies of hashable values."""
    values = list(values)
    n = len(values)
    counts = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    return {v: c / n for v, c in sorted(counts.items())}, n


@dataclass(frozen=True)
class BinReport:
    value: object
    expected: float
    observed: float
    sigma: float
    z: float
    status: str     # ok | fail | sparse


@dataclass(frozen=True)
class AgreementReport:
    bins: tuple
    n: int
    z_max: float
    passed: bool
    worst_z: float

    def to_dict(self):
        return {
            "n": self.n,
            "z_max": self.z_max,
            "passed": self.passed,
            "worst_z": self.worst_z,
            "bins": [{"value": b.value, "expected": b.expected,
                      "observed": b.observed, "sigma": b.sigma,
                      "z": b.z, "status": b.status} for b in self.bins],
            "rng": rng_metadata(),
        }


def agreement(observed, expected, n, z_max=3.0, sparse_count=5.0):
    """Bin-by-bin binomial comparison at z_max standard errors.

    Bins whose expected count is below sparse_count are flagged sparse and
    do not fail the report.
    """
    bins = []
    passed = True
    worst = 0.0
    for value in sorted(set(observed) | set(expected)):
        p = float(expected.get(value, 0.0))
        phat = float(observed.get(value, 0.0))
        sigma = math.sqrt(max(p * (1.0 - p), 0.0) / n)
        if p * n < sparse_count:
            status = "sparse"
            z = 0.0 if sigma == 0.0 else abs(phat - p) / sigma
        elif sigma == 0.0:
            z = 0.0 if phat == p else math.inf
            status = "ok" if phat == p else "fail"
        else:
            z = abs(phat - p) / sigma
            status = "ok" if z <= z_max else "fail"
        if status == "fail":
            passed = False
        worst = max(worst, 0.0 if math.isinf(z) else z)
        bins.append(BinReport(value=value, expected=p, observed=phat,
                              sigma=sigma, z=z, status=status))
    return AgreementReport(bins=tuple(bins), n=n, z_max=z_max, passed=passed,
                           worst_z=worst)


def scalar_agreement(samples, expected, z_max=3.0):
    """Sample-mean comparison with a sample-estimated standard error."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    mean = samples.mean()
    sem = samples.std(ddof=1) / math.sqrt(n) if n > 1 else math.inf
    z = abs(mean - expected) / sem if sem > 0 else math.inf
    return {"mean": float(mean), "expected": float(expected),
            "sem": float(sem), "z": float(z), "passed": bool(z <= z_max),
            "n": int(n)}


def write_jsonl(trajectories, path):
    with open(path, "w", encoding="utf-8") as fh:
        for t in trajectories:
            fh.write(t.to_jsonl() + "\n")
