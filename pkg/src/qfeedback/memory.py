"""Classical memory registers driven by measurement outcomes.

A causal memory is a recursion y_n = f_n(x_n, y_{n-1}) together with a
domain that canonicalizes the values it can take.  The memory-resolved
state stores one (unnormalized) conditional operator per occupied memory
value; its total trace is the normalization of the joint classical/quantum
state.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

logger = logging.getLogger(__name__)


def bin_to_grid(value, grid_origin, grid_step, grid_size):
    """Nearest point of a uniform grid; exact midpoints resolve to the
    lower index; out-of-range values clamp to the boundary.

    Returns (grid value, clamped flag).
    """
    pos = (value - grid_origin) / grid_step
    idx = math.ceil(pos - 0.5)  # ties go down
    clamped = False
    if idx < 0:
        idx, clamped = 0, True
    elif idx >= grid_size:
        idx, clamped = grid_size - 1, True
    return grid_origin + idx * grid_step, clamped


class ImplicitDomain:
    """Any hashable value is admitted unchanged."""

    kind = "implicit"

    def canonical(self, value):
        return value, False


class DiscreteDomain:
    """Finite set of admissible memory values."""

    kind = "discrete"

    def __init__(self, values):
        self.values = tuple(values)
        self._set = set(self.values)
        if len(self._set) != len(self.values):
            raise ValueError("duplicate values in discrete domain")

    def canonical(self, value):
        if value not in self._set:
            raise ValueError(f"value {value!r} outside discrete memory domain")
        return value, False


class GridDomain:
    """Uniform grid with clamping at the edges."""

    kind = "grid"

    def __init__(self, origin, step, size):
        if step <= 0.0 or size < 2:
            raise ValueError("grid needs positive step and at least two points")
        self.origin = float(origin)
        self.step = float(step)
        self.size = int(size)

    @property
    def points(self):
        return self.origin + self.step * np.arange(self.size)

    def canonical(self, value):
        return bin_to_grid(value, self.origin, self.step, self.size)


class ProductDomain:
    """Cartesian product of two domains; values are pairs."""

    kind = "product"

    def __init__(self, first, second):
        self.first = first
        self.second = second

    def canonical(self, value):
        a, ca = self.first.canonical(value[0])
        b, cb = self.second.canonical(value[1])
        return (a, b), (ca or cb)


@dataclass(frozen=True)
class CausalMemory:
    """Recursion y_n = f_n(x_n, y_{n-1}) over a domain.

    update receives (n, x, y) with n the 1-based index of the incoming
    outcome, so step-dependent rules like the running average are exact.
    """

    update: object
    initial: object
    domain: object = field(default_factory=ImplicitDomain)
    label: str = ""

    def advance(self, n, outcome, value):
        """Canonicalized next value; returns (value, clamped flag)."""
        return self.domain.canonical(self.update(n, outcome, value))


def last_outcome(initial=0.0):
    return CausalMemory(update=lambda n, x, y: x, initial=initial,
                        label="last-outcome")


def running_average(initial=0.0):
    def update(n, x, y):
        return (x + (n - 1) * y) / n
    return CausalMemory(update=update, initial=initial, label="running-average")


def full_record(initial=()):
    def update(n, x, y):
        return tuple(y) + (x,)
    return CausalMemory(update=update, initial=tuple(initial),
                        label="full-record")


def jump_memory(initial, channels=(-1.0, 1.0)):
    """Label of the most recent jump; outcome 0 means no jump."""
    domain = DiscreteDomain(channels)
    if initial not in domain._set:
        raise ValueError("initial jump label must be one of the channels")

    def update(n, x, y):
        return y if x == 0 else x
    return CausalMemory(update=update, initial=initial, domain=domain,
                        label="jump")


def counting_memory(dt, cap=None, initial=0.0):
    """Time since the last jump, advancing by dt on outcome 0.

    Values are quantized to exact multiples of dt so that equal elapsed
    times merge regardless of the addition order.  With cap set, values
    clamp there (saturation is counted by the state).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")

    def update(n, x, y):
        if x != 0:
            return 0.0
        return (round(y / dt) + 1) * dt

    if cap is None:
        domain = ImplicitDomain()
    else:
        size = int(round(cap / dt)) + 1
        domain = GridDomain(0.0, dt, size)
    return CausalMemory(update=update, initial=initial, domain=domain,
                        label="counting")


def product_memory(first, second):
    """Two registers updated side by side from the same outcome stream."""
    def update(n, x, yw):
        return (first.update(n, x, yw[0]), second.update(n, x, yw[1]))
    return CausalMemory(update=update,
                        initial=(first.initial, second.initial),
                        domain=ProductDomain(first.domain, second.domain),
                        label=f"({first.label},{second.label})")


def sort_key(key):
    """Total order over memory keys (numbers and nested tuples)."""
    if isinstance(key, tuple):
        return (1, tuple(sort_key(k) for k in key))
    return (0, float(key))


@dataclass(frozen=True)
class MemoryResolvedState:
    """Joint state: one unnormalized operator block per memory value.

    Value semantics: engine steps return new instances.  step counts how
    many outcomes have been folded in; time is step * dt for the caller's
    dt; saturations counts grid clamps that occurred while producing this
    state.
    """

    blocks: dict
    step: int = 0
    time: float = 0.0
    saturations: int = 0

    @property
    def dim(self):
        for b in self.blocks.values():
            return b.shape[0]
        raise ValueError("state has no blocks")

    def keys(self):
        return sorted(self.blocks.keys(), key=sort_key)

    def total_trace(self):
        return float(sum(np.trace(b).real for b in self.blocks.values()))

    def probabilities(self):
        """P(y) = Tr block(y), in key order."""
        return {k: float(np.trace(self.blocks[k]).real) for k in self.keys()}

    def marginal(self):
        """Unconditional quantum state sum_y block(y)."""
        out = None
        for b in self.blocks.values():
            out = b.copy() if out is None else out + b
        return out

    def pruned(self, tol=0.0):
        """Drop blocks with trace <= tol (keeps at least one block)."""
        kept = {k: b for k, b in self.blocks.items()
                if np.trace(b).real > tol}
        if not kept:
            kept = dict(self.blocks)
        return replace(self, blocks=kept)

    def to_json(self):
        data = {
            "format": "qfeedback-memory-state",
            "version": 1,
            "step": self.step,
            "time": self.time,
            "saturations": self.saturations,
            "blocks": [
                {
                    "key": _key_to_json(k),
                    "re": np.real(self.blocks[k]).tolist(),
                    "im": np.imag(self.blocks[k]).tolist(),
                }
                for k in self.keys()
            ],
        }
        return json.dumps(data)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        if data.get("format") != "qfeedback-memory-state":
            raise ValueError("not a serialized memory-resolved state")
        blocks = {}
        for item in data["blocks"]:
            key = _key_from_json(item["key"])
            blocks[key] = np.asarray(item["re"], dtype=float) \
                + 1j * np.asarray(item["im"], dtype=float)
        return cls(blocks=blocks, step=data["step"], time=data["time"],
                   saturations=data.get("saturations", 0))


def _key_to_json(key):
    if isinstance(key, tuple):
        return [_key_to_json(k) for k in key]
    return key


def _key_from_json(key):
    if isinstance(key, list):
        return tuple(_key_from_json(k) for k in key)
    return key


def delta_state(rho0, mem, time=0.0, trace_tol=1e-9):
    """State concentrated on the memory's initial value."""
    rho0 = np.asarray(rho0, dtype=complex)
    if not np.all(np.isfinite(rho0)):
        raise ValueError("initial state has non-finite entries")
    tr = np.trace(rho0).real
    if abs(tr - 1.0) > trace_tol:
        raise ValueError(f"initial state trace {tr} is not 1")
    key, clamped = mem.domain.canonical(mem.initial)
    if clamped or (key != mem.initial):
        logger.warning("initial memory value %r binned to %r", mem.initial, key)
    return MemoryResolvedState(blocks={key: rho0.copy()}, time=time,
                               saturations=int(clamped))
