import numpy as np
import pytest

from dmplug.autodiff import Tensor
from dmplug.errors import ContractError, OptimizerError
from dmplug.optim import Adam, AdamState, ParamGroup, adam_step, lbfgs_minimize


def test_first_adam_step_moves_by_lr_times_sign():
    t = Tensor(np.array([1.0, -2.0, 3.0]))
    opt = Adam([ParamGroup("x", [t], 0.1)])
    opt.step([[np.array([5.0, -0.01, 0.0])]])
    # bias correction makes the first step lr * g / |g| (zero stays put)
    assert np.allclose(t.data, [0.9, -1.9, 3.0], atol=1e-6)


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(4)
    t = Tensor(x.copy())
    opt = Adam([ParamGroup("x", [t], 0.05)])
    m = v = np.zeros(4)
    ref = x.copy()
    for k in range(1, 21):
        g = 2 * ref + np.sin(k)
        opt.step([[2 * t.data + np.sin(k)]])
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.05 * (m / (1 - 0.9 ** k)) / (np.sqrt(v / (1 - 0.999 ** k)) + 1e-8)
    assert np.allclose(t.data, ref, atol=1e-13)


def test_groups_use_their_own_learning_rates():
    a, b = Tensor(np.zeros(2)), Tensor(np.zeros(2))
    opt = Adam([ParamGroup("a", [a], 1e-2), ParamGroup("b", [b], 0.0)])
    opt.step([[np.ones(2)], [np.ones(2)]])
    assert np.allclose(a.data, -1e-2) and np.array_equal(b.data, np.zeros(2))


def test_adam_minimizes_quadratic():
    t = Tensor(np.array([3.0, -4.0]))
    opt = Adam([ParamGroup("x", [t], 0.1)])
    for _ in range(500):
        opt.step([[2 * t.data]])
    assert np.linalg.norm(t.data) < 1e-2


def test_non_finite_gradient_names_group():
    t = Tensor(np.zeros(2))
    with pytest.raises(OptimizerError) as info:
        adam_step([ParamGroup("kernel", [t], 0.1)], [[np.array([np.nan, 0.0])]], AdamState())
    assert info.value.group == "kernel"
    assert np.array_equal(t.data, np.zeros(2))


def test_contracts():
    with pytest.raises(ContractError):
        ParamGroup("x", [], -1.0)
    with pytest.raises(ContractError):
        adam_step([ParamGroup("x", [], 0.1)], [], AdamState())


def _rosen(p):
    x = p[0]
    f = np.sum(100 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2)
    g = np.zeros_like(x)
    g[:-1] = -400 * x[:-1] * (x[1:] - x[:-1] ** 2) - 2 * (1 - x[:-1])
    g[1:] += 200 * (x[1:] - x[:-1] ** 2)
    return f, [g]


def test_lbfgs_solves_rosenbrock():
    res = lbfgs_minimize(_rosen, [np.array([-1.2, 1.0, -0.5, 0.8])], max_iter=500, gtol=1e-8)
    assert res.converged and not res.line_search_failed
    assert np.allclose(res.params[0], 1.0, atol=1e-5)
    assert all(b <= a for a, b in zip(res.losses, res.losses[1:]))


def test_lbfgs_multiple_arrays_and_callback_stop():
    A = np.diag([1.0, 10.0, 100.0])

    def obj(p):
        x, y = p
        return 0.5 * x @ A @ x + np.sum((y - 2) ** 2), [A @ x, 2 * (y - 2)]

    seen = []
    res = lbfgs_minimize(obj, [np.ones(3), np.zeros((2, 2))], max_iter=200,
                         callback=lambda k, p, loss: seen.append(k) or k >= 3)
    assert res.n_iter == 3 and seen == [1, 2, 3]
    full = lbfgs_minimize(obj, [np.ones(3), np.zeros((2, 2))], max_iter=200)
    assert full.params[1].shape == (2, 2)
    assert np.allclose(full.params[1], 2.0, atol=1e-6) and np.allclose(full.params[0], 0, atol=1e-6)


def test_lbfgs_line_search_failure_warns():
    # gradient points the wrong way, so no step ever decreases the loss
    def obj(p):
        return float(p[0] @ p[0]), [-p[0]]

    with pytest.warns(RuntimeWarning):
        res = lbfgs_minimize(obj, [np.ones(2)], max_iter=5, max_backtracks=5)
    assert res.line_search_failed and np.array_equal(res.params[0], np.ones(2))
