import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmplug import autodiff as ad
from dmplug.errors import ContractError, DomainError, TrainingError
from dmplug.fixtures import gmm_fixture
from dmplug.schedule import make_linear_schedule, make_schedule, pick_substeps
from dmplug.score import (AnalyticScore, GmmPrior, NeuralScore, TrainConfig, analytic_epsilon,
                          train_score)

from conftest import fd_grad, rel_err, tape_grad


def test_linear_schedule_endpoints_and_products():
    sch = make_linear_schedule()
    assert sch.T == 1000
    assert sch.beta(1) == pytest.approx(1e-4)
    assert sch.beta(1000) == pytest.approx(0.02)
    assert sch.alpha_bar(0) == 1.0
    assert np.all(np.diff(sch.alpha_bars) < 0)
    assert sch.alpha_bar(1000) < 1e-4
    assert sch.terminal_is_noise
    # cumulative product agrees with numpy
    assert np.allclose(sch.alpha_bars[1:], np.cumprod(1 - np.linspace(1e-4, 0.02, 1000)), rtol=1e-12)


def test_schedule_arrays_are_read_only():
    sch = make_linear_schedule(10)
    with pytest.raises(ValueError):
        sch.betas[0] = 0.5


@pytest.mark.parametrize("betas", [[], [0.0, 0.1], [0.5, 1.0], [-0.1]])
def test_invalid_betas_rejected(betas):
    with pytest.raises(ContractError):
        make_schedule(betas)


def test_short_schedule_is_not_terminal_noise():
    assert not make_schedule([0.1, 0.1]).terminal_is_noise


def test_three_substeps_of_a_thousand():
    assert pick_substeps(1000, 3) == [334, 667, 1000]
    assert pick_substeps(make_linear_schedule(), 1) == [1000]
    assert pick_substeps(10, 10) == list(range(1, 11))


@pytest.mark.parametrize("k", [0, 1001])
def test_substep_count_out_of_range(k):
    with pytest.raises(ContractError):
        pick_substeps(1000, k)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 2000), st.data())
def test_substeps_strictly_increasing_and_end_at_T(T, data):
    k = data.draw(st.integers(1, T))
    s = pick_substeps(T, k)
    assert len(s) == k and s[-1] == T and s[0] >= 1
    assert all(b > a for a, b in zip(s, s[1:]))


def _log_density(prior, abar, x):
    """log p_t(x) of the noised mixture, computed directly."""
    d = prior.dim
    vals = []
    for w, mu, cov in zip(prior.weights, prior.means, prior.covs):
        C = abar * cov + (1 - abar) * np.eye(d)
        diff = x - np.sqrt(abar) * mu
        _, logdet = np.linalg.slogdet(C)
        vals.append(np.log(w) - 0.5 * diff @ np.linalg.solve(C, diff) - 0.5 * logdet)
    vals = np.array(vals)
    m = vals.max()
    return m + np.log(np.exp(vals - m).sum())


@pytest.mark.parametrize("t", [1, 100, 500, 1000])
def test_analytic_epsilon_is_scaled_score_of_mixture(schedule, t):
    fx = gmm_fixture(seed=3, dim=3, components=3)
    prior = fx.prior()
    rng = np.random.default_rng(t)
    x = rng.standard_normal(3)
    abar = schedule.alpha_bar(t)
    score = fd_grad(lambda v: _log_density(prior, abar, v), x)
    eps = analytic_epsilon(prior, schedule, t, x).data
    assert np.allclose(eps, -np.sqrt(1 - abar) * score, atol=1e-6)


def test_gaussian_epsilon_closed_form(schedule):
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 4))
    cov = A @ A.T + 0.1 * np.eye(4)
    mu = rng.standard_normal(4)
    prior = GmmPrior.gaussian(mu, cov)
    x = rng.standard_normal((5, 4))
    t = 400
    ab = schedule.alpha_bar(t)
    C = ab * cov + (1 - ab) * np.eye(4)
    ref = np.sqrt(1 - ab) * np.linalg.solve(C, (x - np.sqrt(ab) * mu).T).T
    assert np.allclose(AnalyticScore(prior, schedule).eval(t, x).data, ref, atol=1e-12)


def test_analytic_epsilon_is_differentiable(schedule):
    prior = gmm_fixture(seed=1, dim=2).prior()
    x = np.array([0.3, -0.2])

    def f(v):
        return float(np.sum(analytic_epsilon(prior, schedule, 300, v).data ** 2))

    g = tape_grad(lambda t: ad.sum(ad.power(analytic_epsilon(prior, schedule, 300, t), 2)), x)
    assert rel_err(g, fd_grad(f, x)) < 1e-6


def test_analytic_epsilon_rejects_bad_step_and_shape(schedule):
    prior = GmmPrior.gaussian(np.zeros(2), np.eye(2))
    with pytest.raises(ContractError):
        analytic_epsilon(prior, schedule, 0, np.zeros(2))
    with pytest.raises(ContractError):
        analytic_epsilon(prior, schedule, 5, np.zeros(3))


def test_singular_covariance_at_clean_end_is_domain_error():
    prior = GmmPrior.gaussian(np.zeros(2), np.diag([1.0, 0.0]))
    # abar rounds to one, so the noised covariance keeps the zero direction
    with pytest.raises(DomainError):
        analytic_epsilon(prior, make_schedule([1e-300]), 1, np.zeros(2))


@pytest.mark.parametrize("bad", [
    dict(weights=[0.5, 0.6], means=[[0.0], [1.0]], covs=[[[1.0]], [[1.0]]]),
    dict(weights=[1.0], means=[[0.0, 0.0]], covs=[[[1.0, 0.5], [0.0, 1.0]]]),
    dict(weights=[-1.0, 2.0], means=[[0.0], [1.0]], covs=[[[1.0]], [[1.0]]]),
])
def test_invalid_mixtures_rejected(bad):
    with pytest.raises(ContractError):
        GmmPrior(**bad)


def test_mixture_sampling_moments():
    prior = GmmPrior([0.3, 0.7], [[-2.0, 0.0], [2.0, 1.0]],
                     [np.eye(2) * 0.25, np.eye(2) * 0.5])
    s = prior.sample(40000, np.random.default_rng(0))
    mean = 0.3 * np.array([-2.0, 0.0]) + 0.7 * np.array([2.0, 1.0])
    assert np.allclose(s.mean(axis=0), mean, atol=0.03)


def test_neural_eval_shapes_and_batch_consistency(schedule):
    net = NeuralScore((4, 4), schedule.T, widths=(8, 8), seed=1)
    x = np.random.default_rng(0).standard_normal((3, 4, 4))
    batch = net.eval(np.array([5, 500, 1000]), x).data
    assert batch.shape == (3, 4, 4)
    single = net.eval(500, x[1]).data
    assert single.shape == (4, 4)
    assert np.allclose(batch[1], single, atol=1e-12)


def test_neural_eval_rejects_bad_steps(schedule):
    net = NeuralScore((2,), schedule.T, widths=(4,))
    with pytest.raises(ContractError):
        net.eval(0, np.zeros(2))
    with pytest.raises(ContractError):
        net.eval(np.array([1, 2]), np.zeros((3, 2)))
    with pytest.raises(ContractError):
        NeuralScore((2,), 10, widths=())


def test_neural_gradient_in_input_and_weights(schedule):
    net = NeuralScore((3,), schedule.T, widths=(5, 5), seed=2)
    x = np.random.default_rng(1).standard_normal(3)

    def f(v):
        return float(np.sum(net.eval(700, v).data ** 2))

    g = tape_grad(lambda t: ad.sum(ad.power(net.eval(700, t), 2)), x)
    assert rel_err(g, fd_grad(f, x)) < 1e-6

    W = net.params["W1"]
    base = W.data.copy()

    def fw(v):
        W.data = v
        out = float(np.sum(net.eval(700, x).data ** 2))
        W.data = base
        return out

    with ad.Tape() as tape:
        loss = ad.sum(ad.power(net.eval(700, x), 2))
    gw = tape.backward(loss, [W])[0]
    assert rel_err(gw, fd_grad(fw, base.copy())) < 1e-6


def test_training_reduces_loss_and_is_reproducible(schedule):
    data = gmm_fixture(seed=0, n=500, dim=2).samples
    net = NeuralScore((2,), schedule.T, widths=(32, 32), seed=0)
    cfg = TrainConfig(steps=300, batch=64, lr=3e-3, seed=4)
    trained, losses = train_score(data, schedule, net, cfg)
    assert np.mean(losses[-50:]) < np.mean(losses[:50])
    again, losses2 = train_score(data, schedule, net, cfg)
    assert losses == losses2
    for a, b in zip(trained.tensors(), again.tensors()):
        assert np.array_equal(a.data, b.data)
    # the input net is left untouched
    assert np.array_equal(net.params["W0"].data,
                          NeuralScore((2,), schedule.T, widths=(32, 32), seed=0).params["W0"].data)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_contract_and_divergence(schedule):
    net = NeuralScore((2,), schedule.T, widths=(4,))
    with pytest.raises(ContractError):
        train_score(np.zeros((0, 2)), schedule, net)
    with pytest.raises(ContractError):
        train_score(np.zeros((4, 3)), schedule, net)
    with pytest.raises(TrainingError) as info:
        train_score(np.full((4, 2), 1e200), schedule, net, TrainConfig(steps=5, batch=4))
    assert info.value.step == 0
