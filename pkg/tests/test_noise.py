import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvssm.noise import (
    GridError,
    InitialSampler,
    NoiseTable,
    counter_normals,
    left_fold,
    philox4x32,
    sample_initial,
)


def _words(*vals):
    return [np.array([v], dtype=np.uint32) for v in vals]


@pytest.mark.parametrize(
    "ctr, key, expected",
    [
        ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
        (
            (0xFFFFFFFF,) * 4,
            (0xFFFFFFFF,) * 2,
            (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD),
        ),
        (
            (0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344),
            (0xA4093822, 0x299F31D0),
            (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1),
        ),
    ],
)
def test_philox_known_answers(ctr, key, expected):
    out = philox4x32(*_words(*ctr), *_words(*key))
    assert tuple(int(w[0]) for w in out) == expected


def test_single_fine_step_interval_is_the_fine_increment():
    table = NoiseTable(seed=3, n_particles=4, noise_dim=2, h_fine=1e-3, horizon=0.1)
    k = 17
    fine = table.fine_block(k, k + 1)[2, 0]
    got = table.coarse_increment(2, k * 1e-3, (k + 1) * 1e-3)
    assert np.array_equal(got, fine)


def test_whole_interval_equals_sequential_sum():
    table = NoiseTable(seed=9, n_particles=3, noise_dim=1, h_fine=0.01, horizon=1.0)
    whole = table.coarse_increment(1, 0.0, 1.0)
    acc = np.zeros(1)
    for k in range(100):
        acc = acc + table.coarse_increment(1, k * 0.01, (k + 1) * 0.01)
    assert np.array_equal(whole, acc)


@pytest.mark.slow
def test_coarse_increment_variance():
    n = 100_000
    table = NoiseTable(seed=5, n_particles=n, noise_dim=1, h_fine=1e-3, horizon=0.1)
    inc = table.block_increments(0, 100)[:, 0]
    var = float(np.var(inc))
    # standard error of a sample variance of normals: var * sqrt(2 / (n - 1))
    se = 0.1 * math.sqrt(2.0 / (n - 1))
    assert abs(var - 0.1) <= 5 * se


def test_refinement_consistency():
    table = NoiseTable(seed=11, n_particles=5, noise_dim=2, h_fine=0.001, horizon=0.064)
    m = 16
    for n in range(4):
        coarse = table.block_increments(n * m, (n + 1) * m)
        manual = np.zeros((5, 2))
        for k in range(n * m, (n + 1) * m):
            manual = manual + table.fine_block(k, k + 1)[:, 0, :]
        assert np.array_equal(coarse, manual)


def test_reverse_particle_order_gives_same_values():
    table = NoiseTable(seed=2, n_particles=50, noise_dim=3, h_fine=0.01, horizon=0.5)
    fwd = table.fine_block(0, 50)
    rev = table.fine_block(0, 50, np.arange(49, -1, -1))
    assert np.array_equal(fwd, rev[::-1])


def test_distinct_seeds_differ():
    a = NoiseTable(1, 100, 1, 0.01, 1.0).fine_block(0, 1)[:, 0, 0]
    b = NoiseTable(2, 100, 1, 0.01, 1.0).fine_block(0, 1)[:, 0, 0]
    assert not np.array_equal(a, b)
    assert np.count_nonzero(a == b) == 0


def test_counter_normals_are_standard():
    z = counter_normals(7, 0, np.arange(200_000, dtype=np.uint64), np.uint64(0), np.uint64(0))
    assert abs(z.mean()) < 5 / math.sqrt(z.size)
    assert abs(z.var() - 1) < 5 * math.sqrt(2 / z.size)
    assert np.all(np.isfinite(z))


def test_odd_and_even_components_are_not_copies():
    z0 = counter_normals(4, 0, np.arange(1000, dtype=np.uint64), np.uint64(0), np.uint64(0))
    z1 = counter_normals(4, 0, np.arange(1000, dtype=np.uint64), np.uint64(0), np.uint64(1))
    assert abs(np.corrcoef(z0, z1)[0, 1]) < 0.15


def test_off_grid_queries_rejected():
    table = NoiseTable(0, 2, 1, 0.01, 1.0)
    with pytest.raises(GridError):
        table.steps_per(0.015)
    with pytest.raises(GridError):
        table.fine_block(0, 101)
    with pytest.raises(GridError):
        table.coarse_increment(0, 0.5, 0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(1, 8), st.integers(1, 12))
def test_fold_additivity(seed, m, blocks):
    table = NoiseTable(seed, 3, 1, 0.125, 0.125 * m * blocks)
    fine = table.fine_block(0, m * blocks)
    parts = [table.block_increments(j * m, (j + 1) * m) for j in range(blocks)]
    assert np.array_equal(left_fold(fine[:, : m]), parts[0])
    total = np.zeros((3, 1))
    for p in parts:
        total = total + p
    assert np.allclose(total, left_fold(fine), rtol=0, atol=1e-12)


def test_point_mass_initial():
    x = sample_initial(InitialSampler((1.0,)), 4, seed=0)
    assert np.array_equal(x, np.ones((4, 1)))


def test_normal_initial_statistics_and_repeatability():
    n = 100_000
    law = InitialSampler((0.0,), (1.0,), "normal")
    x = sample_initial(law, n, seed=13)
    assert abs(float(x.mean())) <= 5 / math.sqrt(n)
    assert np.array_equal(x, sample_initial(law, n, seed=13))
    other = sample_initial(InitialSampler((0.0,), (1.0,), "normal", offset=1), n, seed=13)
    assert not np.array_equal(x, other)


def test_initial_and_brownian_streams_are_separate():
    law = InitialSampler((0.0,), (0.01,), "normal")
    x = sample_initial(law, 10, seed=3)[:, 0] / 0.1
    w = NoiseTable(3, 10, 1, 1.0, 1.0).fine_block(0, 1)[:, 0, 0]
    assert not np.allclose(x, w)
