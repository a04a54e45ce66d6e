"""Causal memory registers and the memory-resolved state container."""

import json
import math

import numpy as np
import pytest

from qfeedback import memory, models
from conftest import random_density


def test_last_outcome_update():
    mem = memory.last_outcome(0.0)
    y, clamped = mem.advance(1, -1.0, mem.initial)
    assert y == -1.0 and not clamped
    y, _ = mem.advance(2, 1.0, y)
    assert y == 1.0


def test_running_average_is_exact_mean(rng):
    mem = memory.running_average()
    xs = rng.normal(size=17)
    y = mem.initial
    for n, x in enumerate(xs, start=1):
        y, _ = mem.advance(n, float(x), y)
        assert abs(y - np.mean(xs[:n])) < 1e-12


def test_full_record_accumulates():
    mem = memory.full_record()
    y = mem.initial
    for n, x in enumerate((1.0, -1.0, 1.0), start=1):
        y, _ = mem.advance(n, x, y)
    assert y == (1.0, -1.0, 1.0)


def test_jump_memory_keeps_label_on_no_jump():
    mem = memory.jump_memory(-1.0)
    y, _ = mem.advance(1, 0.0, -1.0)
    assert y == -1.0
    y, _ = mem.advance(2, 1.0, y)
    assert y == 1.0
    with pytest.raises(ValueError):
        memory.jump_memory(0.5)


def test_counting_memory_quantizes_and_clamps():
    dt = 0.1
    mem = memory.counting_memory(dt, cap=0.3)
    y = mem.initial
    for expect in (0.1, 0.2, 0.3, 0.3):
        y, clamped = mem.advance(1, 0.0, y)
        assert abs(y - expect) < 1e-15
    assert clamped
    y, clamped = mem.advance(5, 1.0, y)   # a jump resets the clock
    assert y == 0.0 and not clamped
    # quantization: repeated adds yield exact grid multiples
    y = 0.0
    for _ in range(1000):
        y, _ = mem.advance(1, 0.0, y)
        assert y in {round(y / dt) * dt}
    with pytest.raises(ValueError):
        memory.counting_memory(-0.1)


def test_product_memory_advances_both():
    mem = memory.product_memory(memory.jump_memory(-1.0),
                                memory.counting_memory(0.5, cap=2.0))
    y = mem.initial
    y, _ = mem.advance(1, 0.0, y)
    assert y == (-1.0, 0.5)
    y, _ = mem.advance(2, 1.0, y)
    assert y == (1.0, 0.0)


def test_bin_to_grid():
    v, clamped = memory.bin_to_grid(0.26, 0.0, 0.1, 11)
    assert abs(v - 0.3) < 1e-15 and not clamped
    v, clamped = memory.bin_to_grid(7.0, 0.0, 0.1, 11)
    assert abs(v - 1.0) < 1e-15 and clamped


def test_sort_key_orders_mixed_tuples():
    keys = [(1.0, 0.2), (-1.0, 0.4), (-1.0, 0.0), 0.5]
    ordered = sorted(keys, key=memory.sort_key)
    assert ordered.index((-1.0, 0.0)) < ordered.index((-1.0, 0.4))
    assert ordered.index((-1.0, 0.4)) < ordered.index((1.0, 0.2))


def test_delta_state_and_probabilities(rng):
    rho = random_density(rng)
    st = memory.delta_state(rho, memory.last_outcome(0.0))
    assert st.total_trace() == pytest.approx(1.0)
    assert list(st.probabilities()) == [0.0]
    assert np.allclose(st.marginal(), rho)
    with pytest.raises(ValueError):
        memory.delta_state(2.0 * rho, memory.last_outcome(0.0))


def test_pruned_drops_tiny_blocks(rng):
    rho = random_density(rng)
    st = memory.MemoryResolvedState(
        blocks={0.0: 0.999 * rho, 1.0: 1e-15 * rho})
    kept = st.pruned(tol=1e-12)
    assert list(kept.blocks) == [0.0]
    # never prunes to nothing
    assert memory.MemoryResolvedState(
        blocks={0.0: 0.0 * rho}).pruned(tol=1.0).blocks


def test_json_round_trip_is_exact(rng):
    blocks = {
        (-1.0, 0.25): random_density(rng) * 0.3,
        (1.0, 0.0): random_density(rng) * 0.7,
        2.5: random_density(rng) * 0.1,
    }
    st = memory.MemoryResolvedState(blocks=blocks, step=17, time=0.425,
                                    saturations=3)
    text = st.to_json()
    back = memory.MemoryResolvedState.from_json(text)
    assert back.step == 17 and back.time == 0.425 and back.saturations == 3
    assert set(back.blocks) == set(blocks)
    for k in blocks:
        assert np.array_equal(back.blocks[k], blocks[k])   # bit exact
    # serialization is canonical: a second round trip is byte identical
    assert back.to_json() == text


def test_from_json_rejects_other_formats():
    with pytest.raises(ValueError):
        memory.MemoryResolvedState.from_json(json.dumps({"format": "nope"}))


def test_implicit_domain_passthrough():
    dom = memory.ImplicitDomain()
    assert dom.canonical(0.123) == (0.123, False)


def test_discrete_domain_rejects_off_grid():
    dom = memory.DiscreteDomain((-1.0, 1.0))
    assert dom.canonical(1.0) == (1.0, False)
    with pytest.raises(ValueError):
        dom.canonical(0.5)
