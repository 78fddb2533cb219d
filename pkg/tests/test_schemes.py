import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvssm.model import ModelConstants, ModelSpec, eval_stats, make_builtin
from mvssm.noise import NoiseTable
from mvssm.schemes import (
    SchemeConfig,
    SchemeError,
    adaptive_step,
    explicit_euler_step,
    frozen_ssm_step,
    proposed_substep,
    quantize_substep,
    ssm_step,
    tamed_drift,
    tamed_step,
)

from _support import builtin

GL_QUIET = {"sigma": 0.0, "c": 0.0}


def brownian():
    return make_builtin("OrnsteinUhlenbeckMV", {"rho": 0, "lam": 0, "nu": 1})


def test_ssm_gl_deterministic_step():
    rec = ssm_step(make_builtin("GinzburgLandau", GL_QUIET), np.array([[1.0]]), 0.0, 1.0, np.zeros((1, 1)))
    y = rec.ystar[0, 0]
    assert abs(y + y**3 - 1.0) <= 1e-14
    assert abs(y - 0.682328) < 1e-6
    assert rec.cloud_next[0, 0] == y


def test_ssm_pure_brownian_step():
    x = np.array([[0.3], [-2.0]])
    dW = np.array([[0.11], [-0.4]])
    assert np.array_equal(ssm_step(brownian(), x, 0.0, 0.5, dW).cloud_next, x + dW)


def test_ssm_ou_linear_step():
    spec = make_builtin("OrnsteinUhlenbeckMV", {"rho": -1, "lam": 0, "nu": 0})
    rec = ssm_step(spec, np.array([[1.0]]), 0.0, 0.5, np.zeros((1, 1)))
    assert rec.ystar[0, 0] == 1 / 1.5
    assert rec.cloud_next[0, 0] == 1 / 1.5


def test_ssm_rejects_frozen_models():
    with pytest.raises(SchemeError):
        ssm_step(builtin("PolynomialDrift"), np.ones((2, 1)), 0.0, 0.1, np.zeros((2, 1)))


def test_frozen_ssm_polynomial_example():
    spec = make_builtin("PolynomialDrift", {"gamma": -1.0})
    x = np.array([[1.0], [-1.0]])
    rec = frozen_ssm_step(spec, x, 0.0, 0.1, np.zeros((2, 1)))
    assert np.allclose(rec.ystar, x / 1.2, rtol=0, atol=1e-15)
    # Y* has mean zero so b vanishes and without noise X_next = Y*
    assert np.array_equal(rec.cloud_next, rec.ystar)


def test_frozen_ssm_zero_cloud_is_fixed():
    spec = make_builtin("PolynomialDrift", {"gamma": -1.0})
    z = np.zeros((5, 1))
    assert np.array_equal(frozen_ssm_step(spec, z, 0.0, 0.1, np.ones((5, 1))).cloud_next, z)


def test_tamed_drift_examples():
    b = np.array([[6.0, 8.0]])
    assert np.allclose(np.linalg.norm(tamed_drift(b, 100, 0.5)), 5.0, rtol=0, atol=1e-14)
    assert not np.any(tamed_drift(np.zeros((3, 2)), 100, 0.5))


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e3, 1e3), st.integers(1, 10**6), st.floats(0.05, 1.0))
def test_tamed_first_order_gap(b, M, alpha):
    bh = np.array([[b]])
    rel = M ** (-alpha) * abs(b)
    if b != 0 and rel < 0.1:
        gap = abs(tamed_drift(bh, M, alpha)[0, 0] - b) / abs(b)
        assert gap <= rel + 1e-15


def test_tamed_rejects_alpha():
    with pytest.raises(SchemeError):
        tamed_step(brownian(), np.zeros((1, 1)), 0.0, 0.1, 10, 1.5, np.zeros((1, 1)))
    with pytest.raises(SchemeError):
        SchemeConfig("tamed", 0.1)


def test_adaptive_proposals():
    spec = builtin("GinzburgLandau")
    stats = eval_stats(np.array([[2.0]]))
    assert math.isclose(proposed_substep(spec, "inv_sq", 0.0, [[2.0]], stats, 0.1)[0], 0.025)
    assert proposed_substep(spec, "inv_sq", 0.0, [[0.5]], stats, 0.1)[0] == 0.1


def _unit_drift():
    return ModelSpec(
        "UnitDrift",
        1,
        1,
        lambda t, x: np.zeros(np.shape(x)),
        lambda t, x, s: np.ones(np.shape(x)),
        lambda t, x, s: np.zeros(np.shape(x) + (1,)),
        ModelConstants(L_v=0.0),
    )


def test_quantized_substep_examples():
    # proposal 0.025 with 0.003 left in the coarse interval
    assert quantize_substep(np.array([0.025]), 0.1, 0.001, np.array([3]))[0] == 3
    assert quantize_substep(np.array([0.025]), 0.1, 0.001, np.array([100]))[0] == 25
    assert quantize_substep(np.array([1e-9]), 0.1, 0.001, np.array([100]))[0] == 1
    assert quantize_substep(np.array([0.3]), 0.1, 0.001, np.array([100]))[0] == 100


def test_adaptive_final_substep_is_clamped():
    # x grows from 2 under unit drift: substeps of 25, 24, 23, 23 fine steps,
    # then the 22-step proposal is cut to the 5 that remain
    spec = _unit_drift()
    noise = NoiseTable(0, 1, 1, 0.001, 0.1)
    rec = adaptive_step(spec, np.array([[2.0]]), 0.0, 0.1, "inv_sq", noise)
    assert rec.substeps[0] == 5
    assert abs(rec.cloud_next[0, 0] - 2.1) <= 1e-14


def test_adaptive_substeps_cover_interval():
    spec = _unit_drift()
    rng = np.random.default_rng(2)
    x = rng.uniform(-20, 20, size=(300, 1))
    noise = NoiseTable(0, 300, 1, 1e-4, 0.1)
    rec = adaptive_step(spec, x, 0.0, 0.1, "inv_sq", noise)
    # unit drift integrated over all substeps recovers exactly the interval length
    assert np.allclose(rec.cloud_next - x, 0.1, rtol=0, atol=1e-12)
    assert np.all(rec.substeps >= 1)
    assert np.all(rec.substeps[np.abs(x[:, 0]) <= 1] == 1)


def test_adaptive_matches_fine_euler_when_every_substep_is_fine():
    # with h_fine equal to the forced substep, adaptive = explicit Euler at h_fine with a frozen measure
    spec = make_builtin("OrnsteinUhlenbeckMV", {"rho": -1, "lam": 0, "nu": 0.5})
    noise = NoiseTable(4, 3, 1, 0.05, 0.1)
    x = np.array([[3.0], [5.0], [-4.0]])  # |x| >= 3 so proposal <= h/9 < h_fine
    rec = adaptive_step(spec, x, 0.0, 0.1, "inv_sq", noise)
    y = x.copy()
    fine = noise.fine_block(0, 2)
    for k in range(2):
        y = y + (-y) * 0.05 + 0.5 * fine[:, k, :]
    assert np.array_equal(rec.cloud_next, y)
    assert np.all(rec.substeps == 2)


def test_adaptive_rule_must_be_positive():
    spec = _unit_drift()
    noise = NoiseTable(0, 1, 1, 0.01, 0.1)
    with pytest.raises(SchemeError):
        adaptive_step(spec, np.array([[1e200]]), 0.0, 0.1, "inv_sq", noise)


def test_explicit_euler_examples():
    spec = make_builtin("GinzburgLandau", GL_QUIET)
    assert explicit_euler_step(spec, np.array([[10.0]]), 0.0, 0.1, np.zeros((1, 1)))[0, 0] == -90.0
    gl = builtin("GinzburgLandau")
    assert explicit_euler_step(gl, np.zeros((1, 1)), 0.0, 0.1, np.ones((1, 1)))[0, 0] == 0.0
    x = np.array([[0.5]])
    dW = np.array([[0.2]])
    assert np.array_equal(explicit_euler_step(brownian(), x, 0.0, 0.1, dW), x + dW)


def test_euler_blowup_is_flagged_not_raised():
    spec = make_builtin("GinzburgLandau", GL_QUIET)
    x = np.array([[1e120], [1.0]])
    nxt = explicit_euler_step(spec, x, 0.0, 0.1, np.zeros((2, 1)))
    assert not np.isfinite(nxt[0, 0]) and np.isfinite(nxt[1, 0])
    again = explicit_euler_step(spec, nxt, 0.0, 0.1, np.zeros((2, 1)))
    assert np.isnan(again[0, 0]) == np.isnan(nxt[0, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.001, 1.0))
def test_ssm_equals_euler_without_v(seed, h):
    spec = make_builtin("OrnsteinUhlenbeckMV", {"rho": 0.0, "lam": 0.7, "nu": 1.3})
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 1))
    dW = rng.normal(size=(40, 1)) * math.sqrt(h)
    assert np.array_equal(ssm_step(spec, x, 0.0, h, dW).cloud_next, explicit_euler_step(spec, x, 0.0, h, dW))


def test_ystar_domination_gl():
    spec = builtin("GinzburgLandau")
    h = 0.25
    rng = np.random.default_rng(8)
    x = rng.normal(scale=3.0, size=(400, 1))
    noise = NoiseTable(8, 400, 1, h, 100 * h)
    for n in range(100):
        rec = ssm_step(spec, x, n * h, h, noise.block_increments(n, n + 1))
        assert np.all(rec.ystar**2 <= x**2 / (1 - h) * (1 + 1e-15))
        x = rec.cloud_next


def test_diffusion_shapes_fhn():
    from mvssm.schemes import diffusion_term

    spec = builtin("FitzHughNagumo")
    x = np.random.default_rng(0).uniform(0, 1, size=(7, 3))
    out = diffusion_term(spec, 0.0, x, eval_stats(x), np.ones((7, 3)))
    assert out.shape == (7, 3)
