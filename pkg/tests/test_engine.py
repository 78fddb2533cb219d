import numpy as np
import pytest

from mvssm.engine import EngineError, SnapshotPolicy, run, run_coupled, run_two_state
from mvssm.model import make_builtin
from mvssm.noise import InitialSampler, NoiseTable
from mvssm.schemes import SchemeConfig

from _support import builtin

POINT1 = InitialSampler((1.0,))


class PermutedNoise:
    """Noise table whose particle ``i`` reads the stream of particle ``perm[i]``."""

    def __init__(self, base, perm):
        self._base = base
        self._perm = np.asarray(perm)

    def __getattr__(self, name):
        return getattr(self._base, name)

    def fine_block(self, k0, k1, particles=None):
        if particles is None:
            particles = np.arange(self._base.n_particles)
        return self._base.fine_block(k0, k1, self._perm[np.asarray(particles)])

    def block_increments(self, k0, k1, particles=None):
        from mvssm.noise import left_fold

        return left_fold(self.fine_block(k0, k1, particles))


@pytest.mark.parametrize(
    "scheme",
    [SchemeConfig("ssm", 0.05), SchemeConfig("adaptive", 0.05, h_delta="inv_sq"), SchemeConfig("tamed", 0.05, 0.5)],
)
def test_thread_count_does_not_change_results(scheme):
    spec = builtin("GinzburgLandau")
    law = InitialSampler((0.0,), (4.0,), "normal")
    noise = NoiseTable(21, 100, 1, 0.05 / 8, 1.0)
    runs = [
        run(spec, scheme, 100, 1.0, law, noise, SnapshotPolicy(every=1), threads=t, chunk=16) for t in (1, 4)
    ]
    for a, b in zip(runs[0].clouds, runs[1].clouds):
        assert np.array_equal(a.states, b.states)


def test_pure_brownian_terminal_value():
    spec = make_builtin("OrnsteinUhlenbeckMV", {"rho": 0, "lam": 0, "nu": 1})
    noise = NoiseTable(5, 1, 1, 0.0625, 1.0)
    traj = run(spec, SchemeConfig("ssm", 0.25), 1, 1.0, POINT1, noise)
    x = np.ones(1)
    for n in range(4):
        x = x + noise.coarse_increment(0, 0.25 * n, 0.25 * (n + 1))
    assert np.array_equal(traj.terminal.states[0], x)
    assert np.allclose(traj.terminal.states[0], 1 + noise.fine_block(0, 16)[0].sum(axis=0), atol=1e-14)


def test_gl_ssm_stays_bounded():
    spec = builtin("GinzburgLandau")
    traj = run(spec, SchemeConfig("ssm", 0.01), 1000, 1.0, POINT1, NoiseTable(1, 1000, 1, 0.01, 1.0))
    assert np.all(np.isfinite(traj.terminal.states))
    assert np.max(np.abs(traj.terminal.states)) < 10


def test_identical_configs_identical_trajectories():
    spec = builtin("GinzburgLandau")
    noise = NoiseTable(3, 50, 1, 0.01, 0.5)
    a, b = run_coupled(spec, [SchemeConfig("ssm", 0.05)] * 2, 50, 0.5, POINT1, noise)
    assert np.array_equal(a.terminal.states, b.terminal.states)


def test_ssm_and_euler_coincide_without_v():
    spec = make_builtin("OrnsteinUhlenbeckMV", {"rho": 0, "lam": 0.4, "nu": 0.8})
    noise = NoiseTable(3, 64, 1, 0.01, 1.0)
    a, b = run_coupled(
        spec, [SchemeConfig("ssm", 0.1), SchemeConfig("euler", 0.1)], 64, 1.0, POINT1, noise,
        snapshots=SnapshotPolicy(every=1),
    )
    for ca, cb in zip(a.clouds, b.clouds):
        assert np.array_equal(ca.states, cb.states)


def test_pathwise_gap_shrinks_with_h():
    spec = builtin("GinzburgLandau")
    noise = NoiseTable(9, 400, 1, 0.0025, 1.0)
    hs = [0.04, 0.02, 0.01, 0.005]
    trajs = run_coupled(spec, [SchemeConfig("ssm", h) for h in hs], 400, 1.0, POINT1, noise)
    gaps = [
        np.median(np.abs(trajs[i].terminal.states - trajs[i + 1].terminal.states)) for i in range(3)
    ]
    assert gaps[0] > gaps[1] > gaps[2]


def test_permutation_equivariance():
    spec = builtin("CuckerSmale")
    n = 40
    base = NoiseTable(2, n, 1, 0.05, 1.0)
    x0 = np.random.default_rng(0).normal(size=(n, 2))
    perm = np.random.default_rng(1).permutation(n)
    sc = SchemeConfig("ssm", 0.1)
    a = run(spec, sc, n, 1.0, x0, base)
    b = run(spec, sc, n, 1.0, x0[perm], PermutedNoise(base, perm))
    assert np.array_equal(a.terminal.states[perm], b.terminal.states)


def test_two_state_same_law_has_no_gap():
    spec = builtin("GinzburgLandauStability")
    law = InitialSampler((0.0,), (1.0,), "normal")
    tx, tz = run_two_state(spec, SchemeConfig("ssm", 0.1), 30, 1.0, law, law, NoiseTable(0, 30, 1, 0.1, 1.0))
    for a, b in zip(tx.clouds, tz.clouds):
        assert np.array_equal(a.states, b.states)


def test_additive_noise_gap_is_constant():
    spec = make_builtin("OrnsteinUhlenbeckMV", {"rho": 0, "lam": 0, "nu": 0.7})
    tx, tz = run_two_state(
        spec, SchemeConfig("ssm", 0.1), 20, 1.0, POINT1, InitialSampler((3.0,)), NoiseTable(0, 20, 1, 0.1, 1.0)
    )
    for a, b in zip(tx.clouds, tz.clouds):
        assert np.allclose(b.states - a.states, 2.0, rtol=0, atol=1e-12)


@pytest.mark.parametrize("h", [1e-3, 1e-2])
def test_fourth_moment_stays_bounded(h):
    spec = builtin("GinzburgLandau")
    traj = run(
        spec, SchemeConfig("ssm", h), 300, 1.0, POINT1, NoiseTable(4, 300, 1, h, 1.0),
        snapshots=SnapshotPolicy(every=1),
    )
    fourth = max(float(np.mean(c.states[:, 0] ** 4)) for c in traj.clouds)
    assert fourth < 100


def test_snapshot_policy():
    assert SnapshotPolicy().wanted(10, 0.1) == {0, 10}
    assert SnapshotPolicy(every=4).wanted(10, 0.1) == {0, 4, 8, 10}
    assert SnapshotPolicy(times=(0.3,)).wanted(10, 0.1) == {0, 3, 10}
    with pytest.raises(EngineError):
        SnapshotPolicy(times=(0.35,)).wanted(10, 0.1)


def test_mismatched_inputs_rejected():
    spec = builtin("GinzburgLandau")
    sc = SchemeConfig("ssm", 0.1)
    with pytest.raises(EngineError):
        run(spec, sc, 5, 1.0, POINT1, NoiseTable(0, 4, 1, 0.1, 1.0))
    with pytest.raises(EngineError):
        run(spec, sc, 4, 1.0, POINT1, NoiseTable(0, 4, 1, 0.1, 0.5))
    with pytest.raises(EngineError):
        run(spec, sc, 4, 1.0, InitialSampler((0.0, 0.0)), NoiseTable(0, 4, 1, 0.1, 1.0))
    with pytest.raises(EngineError):
        run(spec, SchemeConfig("ssm", 0.15), 4, 0.3, POINT1, NoiseTable(0, 4, 1, 0.1, 1.0))


def test_substep_counts_recorded():
    spec = builtin("GinzburgLandau")
    traj = run(
        spec, SchemeConfig("adaptive", 0.1, h_delta="inv_sq"), 20, 1.0,
        InitialSampler((0.0,), (9.0,), "normal"), NoiseTable(0, 20, 1, 0.1 / 64, 1.0),
        record_substeps=True,
    )
    assert traj.substeps.shape == (20,) and np.all(traj.substeps >= 10)
    assert traj.step_wall.shape == (10,) and traj.total_wall > 0
