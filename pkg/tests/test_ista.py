import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hybridtrack.ista import (TDA, AdapterParams, CodeInit, IstaAdapter, StepSizeError, init_code,
                              ista_adapter_forward, ista_reference_solve, kkt_residual, lasso_objective,
                              max_step, soft_threshold, tda_forward, tda_weights, tied_adapter_params)
from hybridtrack.harness.verify import adapter_chain, lasso_instance

f64 = torch.float64


# -- soft thresholding --------------------------------------------------------

@pytest.mark.parametrize("x,theta,expected", [(1.2, 0.5, 0.7), (-1.2, 0.5, -0.7), (0.3, 0.5, 0.0)])
def test_soft_threshold_values(x, theta, expected):
    assert soft_threshold(np.array(x), theta) == pytest.approx(expected)
    assert soft_threshold(torch.tensor(x, dtype=f64), theta).item() == pytest.approx(expected)


def test_soft_threshold_zero_is_identity(rng):
    x = rng.normal(size=(4, 5))
    np.testing.assert_array_equal(soft_threshold(x, 0.0), x)


def test_soft_threshold_negative_theta():
    with pytest.raises(ValueError):
        soft_threshold(np.ones(3), -0.1)
    with pytest.raises(ValueError):
        soft_threshold(torch.ones(3), torch.tensor([0.1, -0.1, 0.0]))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 20, elements=st.floats(-5, 5)), st.lists(st.floats(0, 6), min_size=2, max_size=6))
def test_sparsity_nonincreasing_in_theta(x, thetas):
    counts = [np.count_nonzero(soft_threshold(x, t)) for t in sorted(thetas)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 10, elements=st.floats(-5, 5)), st.floats(0, 3))
def test_soft_threshold_is_odd_and_shrinks(x, theta):
    y = soft_threshold(x, theta)
    np.testing.assert_array_equal(soft_threshold(-x, theta), -y)
    assert np.all(np.abs(y) <= np.abs(x))


# -- LASSO objective and reference solver -------------------------------------------

def test_objective_cases(rng):
    x = rng.normal(size=(3, 2))
    d = rng.normal(size=(3, 4))
    assert lasso_objective(x, d, np.zeros((4, 2)), 0.7) == pytest.approx(np.sum(x ** 2))
    a = rng.normal(size=(4, 2))
    assert lasso_objective(d @ a, d, a, 0.0) == pytest.approx(0.0, abs=1e-20)
    assert lasso_objective([1.0], [[1.0]], [0.8], 0.4) == pytest.approx(0.36)
    with pytest.raises(ValueError):
        lasso_objective(x, d, a, -1.0)


def test_scalar_closed_form():
    res = ista_reference_solve(np.array([1.0]), np.array([[1.0]]), 0.4, iters=200)
    assert res.code[0] == pytest.approx(0.8, abs=1e-6)
    res = ista_reference_solve(np.array([0.15]), np.array([[1.0]]), 0.4, iters=200)
    assert res.code[0] == 0.0


def test_orthonormal_closed_form(rng):
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    x = rng.normal(size=(6, 3))
    res = ista_reference_solve(x, q, 0.5, iters=500)
    np.testing.assert_allclose(res.code, soft_threshold(q.T @ x, 0.25), atol=1e-6)


def test_reference_trace_and_kkt():
    inst = lasso_instance(3)
    res = ista_reference_solve(inst.x, inst.D, inst.lam, iters=2000)
    assert res.trace[0] == pytest.approx(np.sum(inst.x ** 2))
    assert np.all(np.diff(res.trace) <= 1e-12)
    assert res.kkt < 1e-4
    assert kkt_residual(inst.x, inst.D, res.code, inst.lam) == res.kkt


def test_oversized_step_raises(rng):
    d = rng.normal(size=(8, 16))
    with pytest.raises(StepSizeError):
        ista_reference_solve(rng.normal(size=(8, 4)), d, 0.1, step=20 * max_step(d), iters=50)


def test_kkt_residual_zero_at_solution_of_scalar_problem():
    assert kkt_residual(np.array([1.0]), np.array([[1.0]]), np.array([0.8]), 0.4) == pytest.approx(0.0, abs=1e-12)
    assert kkt_residual(np.array([1.0]), np.array([[1.0]]), np.array([0.0]), 0.4) == pytest.approx(1.6)


# -- sparse-code initialisation ----------------------------------------------------------

def test_init_code_cases():
    x = torch.randn(3, 2, 4, 5, dtype=f64)
    assert not init_code(torch.zeros(2, 4, 5, dtype=f64), torch.randn(6, 4, dtype=f64)).any()
    torch.testing.assert_close(init_code(x, torch.eye(4, dtype=f64)), x)
    p = torch.randn(6, 4, dtype=f64)
    a = init_code(x, p)
    for t in range(3):
        torch.testing.assert_close(a[t], p @ x[t])
    with pytest.raises(ValueError):
        init_code(x, torch.randn(6, 5, dtype=f64))
    mod = CodeInit(4, 6).double()
    torch.testing.assert_close(mod(x), mod.weight @ x)


# -- adapter ----------------------------------------------------------------------------

def _params(m=6, lat=4, m_out=None, seed=0, theta=0.05):
    g = torch.Generator().manual_seed(seed)
    m_out = m if m_out is None else m_out
    return AdapterParams(torch.randn(lat, m, generator=g, dtype=f64) * 0.3,
                         torch.randn(m, lat, generator=g, dtype=f64) * 0.3,
                         torch.randn(m_out, lat, generator=g, dtype=f64),
                         torch.full((lat,), theta, dtype=f64))


def test_zero_synthesis_silences_adapter():
    p = _params()
    p.D_out = torch.zeros_like(p.D_out)
    out, _ = ista_adapter_forward(torch.randn(2, 6, 5, dtype=f64), torch.randn(2, 4, 5, dtype=f64), p)
    assert not out.any()


def test_zero_threshold_gives_linear_update():
    p = _params(theta=0.0)
    x, a0 = torch.randn(2, 6, 5, dtype=f64), torch.randn(2, 4, 5, dtype=f64)
    _, a = ista_adapter_forward(x, a0, p)
    torch.testing.assert_close(a, a0 + p.P @ (x - p.D @ a0))


def test_skip_average():
    p = _params(theta=0.3)
    x, a0 = torch.randn(2, 6, 5, dtype=f64), torch.randn(2, 4, 5, dtype=f64)
    z = a0 + p.P @ (x - p.D @ a0)
    _, a = ista_adapter_forward(x, a0, p, skip=True)
    torch.testing.assert_close(a, 0.5 * (soft_threshold(z, 0.3) + z))
    _, a = ista_adapter_forward(x, a0, p, skip=False)
    torch.testing.assert_close(a, soft_threshold(z, 0.3))


def test_negative_stored_theta_acts_through_abs():
    p = _params(theta=-0.3)
    q = _params(theta=0.3)
    x, a0 = torch.randn(1, 6, 3, dtype=f64), torch.randn(1, 4, 3, dtype=f64)
    torch.testing.assert_close(ista_adapter_forward(x, a0, p)[1], ista_adapter_forward(x, a0, q)[1])


def test_multistep_code_needs_tda_for_single_step_target():
    p = _params()
    x, a0 = torch.randn(3, 2, 6, 5, dtype=f64), torch.randn(3, 2, 4, 5, dtype=f64)
    with pytest.raises(ValueError):
        ista_adapter_forward(x, a0, p, None, single_step_target=True)
    tda = TDA(3).double()
    out, a = ista_adapter_forward(x, a0, p, tda, single_step_target=True)
    assert out.shape == (2, 6, 5) and a.shape == (2, 4, 5)
    _, a_mean = ista_adapter_forward(x, a0, p, single_step_target=True, temporal="mean")
    _, a_multi = ista_adapter_forward(x, a0, p)
    torch.testing.assert_close(a_mean, a_multi.mean(0))


def test_single_step_code_broadcasts_over_time():
    p = _params()
    x = torch.randn(3, 2, 6, 5, dtype=f64)
    a0 = torch.randn(2, 4, 5, dtype=f64)
    out, a = ista_adapter_forward(x, a0, p)
    assert out.shape == (3, 2, 6, 5)
    for t in range(3):
        torch.testing.assert_close(out[t], ista_adapter_forward(x[t], a0, p)[0])


def test_adapter_module_falls_back_to_mean_for_one_step():
    ad = IstaAdapter(6, 4, single_step_target=True).double()
    x, a0 = torch.randn(1, 2, 6, 5, dtype=f64), torch.randn(1, 2, 4, 5, dtype=f64)
    out, a = ad(x, a0)
    assert a.shape == (2, 4, 5)


@pytest.mark.parametrize("k", [1, 2, 4, 8])
def test_tied_adapters_reproduce_ista_iterations(k):
    inst = lasso_instance(11)
    ref = ista_reference_solve(inst.x, inst.D, inst.lam, iters=k)
    assert np.max(np.abs(adapter_chain(inst, k) - ref.code)) < 1e-10


def test_tied_params_shapes():
    d = np.random.default_rng(0).normal(size=(8, 16))
    p = tied_adapter_params(d, 0.5, 0.01)
    assert p.P.shape == (16, 8) and p.D.shape == (8, 16) and p.theta.shape == (16,)
    assert p.theta[0].item() == pytest.approx(0.005)


# -- TDA --------------------------------------------------------------------------------

def test_tda_zero_weights_halve_the_sum():
    a = torch.randn(3, 2, 4, 5, dtype=f64)
    out = tda_forward(a, torch.zeros(3, 24, dtype=f64), 8)
    torch.testing.assert_close(out, 0.5 * a.sum(0))


def test_tda_single_step_is_scalar_gate():
    a = torch.randn(1, 4, 5, dtype=f64)
    w = torch.randn(1, 8, dtype=f64)
    alpha = tda_weights(a, w, 8)
    torch.testing.assert_close(tda_forward(a, w, 8), alpha[0, 0] * a[0])


def test_tda_identical_steps():
    a0 = torch.randn(4, 5, dtype=f64)
    a = a0.expand(3, 4, 5)
    w = torch.randn(3, 24, dtype=f64)
    alpha = tda_weights(a, w, 8)
    torch.testing.assert_close(tda_forward(a, w, 8), alpha.sum() * a0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 999))
def test_tda_weights_in_open_unit_interval(t, b, seed):
    g = torch.Generator().manual_seed(seed)
    a = torch.randn(t, b, 8, 6, generator=g, dtype=f64)
    alpha = tda_weights(a, torch.randn(t, 8 * t, generator=g, dtype=f64), 8)
    assert alpha.shape == (b, t)
    assert bool(((alpha > 0) & (alpha < 1)).all())


def test_tda_parameter_count_and_shape_check():
    assert sum(p.numel() for p in TDA(3).parameters()) == 72
    with pytest.raises(ValueError):
        tda_forward(torch.randn(3, 4, 5), torch.zeros(2, 16), 8)


# -- gradients ---------------------------------------------------------------------------

def _kink_free(z, theta, margin=1e-3):
    return bool((torch.abs(torch.abs(z) - theta) > margin).all())


def test_adapter_gradient_matches_finite_differences():
    g = torch.Generator().manual_seed(3)
    theta = 0.05
    for _ in range(100):
        x = torch.randn(2, 6, 5, generator=g, dtype=f64)
        a0 = torch.randn(2, 4, 5, generator=g, dtype=f64)
        p = _params(seed=int(torch.randint(0, 10**6, (1,), generator=g)), theta=theta)
        z = a0 + p.P @ (x - p.D @ a0)
        if _kink_free(z, theta):
            break
    tda = TDA(2).double()

    def f(x, a0, P, D, D_out, th):
        out, a = ista_adapter_forward(x, a0, AdapterParams(P, D, D_out, th))
        return out, a

    args = tuple(t.clone().requires_grad_(True) for t in (x, a0, p.P, p.D, p.D_out, p.theta))
    assert torch.autograd.gradcheck(f, args, eps=1e-6, atol=1e-8, rtol=1e-4)

    xm = x.unsqueeze(0).expand(2, *x.shape).clone() + 0.01 * torch.randn(2, *x.shape, generator=g, dtype=f64)

    def f_tda(x, w):
        tda.weight.data = w
        out, _ = ista_adapter_forward(x, a0, AdapterParams(p.P, p.D, p.D_out, p.theta),
                                      lambda a: tda_forward(a, w, 8), single_step_target=True)
        return out

    z = a0 + p.P @ (xm - p.D @ a0)
    if _kink_free(z, theta):
        assert torch.autograd.gradcheck(
            f_tda, (xm.requires_grad_(True), torch.randn(2, 16, generator=g, dtype=f64).requires_grad_(True)),
            eps=1e-6, atol=1e-8, rtol=1e-4)


def test_tda_gradient_matches_finite_differences():
    g = torch.Generator().manual_seed(5)
    # distinct values keep the max-pool selection away from ties
    a = torch.randn(3, 2, 8, 5, generator=g, dtype=f64).requires_grad_(True)
    w = (torch.randn(3, 24, generator=g, dtype=f64) * 0.3).requires_grad_(True)
    assert torch.autograd.gradcheck(lambda a, w: tda_forward(a, w, 8), (a, w), eps=1e-6, atol=1e-8, rtol=1e-4)
