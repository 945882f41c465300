import numpy as np
import pytest

from dmplug.baseline import InterleaveConfig, interleave_solve, operator_matrix
from dmplug.errors import ContractError
from dmplug.fixtures import lowrank_gaussian_fixture
from dmplug.operators import (BlindBlur, ConvBlur, Downsample, NonlinearBlur, delta_kernel,
                              gaussian_kernel)
from dmplug.reverse import ReverseProcess, reverse_fn
from dmplug.score import AnalyticScore


@pytest.fixture
def setup(schedule):
    fx = lowrank_gaussian_fixture(seed=2, n=2, dim=16, rank=3, sample_shape=(4, 4))
    rp = ReverseProcess.with_steps(AnalyticScore(fx.prior(), schedule), schedule, 3)
    return fx.samples[0], rp


def test_operator_matrix_matches_operator(setup):
    x, _ = setup
    op = ConvBlur(gaussian_kernel(3, 0.8))
    M = operator_matrix(op, (4, 4))
    assert M.shape == (16, 16)
    assert np.allclose(M @ x.ravel(), op(x).data.ravel())
    assert operator_matrix(Downsample(2), (4, 4)).shape == (4, 16)


def test_zero_zeta_is_plain_ddim_sampling(setup):
    x, rp = setup
    steps = (100, 400, 700, 1000)
    res = interleave_solve(Downsample(2)(x).data, Downsample(2), rp,
                           InterleaveConfig(zeta=0.0, substeps=steps), np.random.default_rng(5))
    z = np.random.default_rng(5).standard_normal((1, 4, 4))
    ref = reverse_fn(z, ReverseProcess(rp.prior, rp.schedule, steps)).data[0]
    assert np.allclose(res.recon, ref, atol=1e-12)
    assert len(res.residuals) == 4


def test_gradient_step_reduces_residual(setup):
    x, rp = setup
    op = Downsample(2)
    y = op(x).data
    steps = tuple(range(10, 1001, 10))
    plain = interleave_solve(y, op, rp, InterleaveConfig(zeta=0.0, substeps=steps))
    guided = interleave_solve(y, op, rp, InterleaveConfig(zeta=0.05, substeps=steps))
    assert guided.final_residual < 0.5 * plain.final_residual


def test_projection_lands_on_measurement(setup):
    x, rp = setup
    op = Downsample(2)
    y = op(x).data
    res = interleave_solve(y, op, rp, InterleaveConfig(variant="projection", substeps=(500, 1000)))
    assert res.final_residual < 1e-10


def test_seeded_and_reproducible(setup):
    x, rp = setup
    y = Downsample(2)(x).data
    cfg = InterleaveConfig(zeta=0.1, substeps=(250, 500, 750, 1000))
    a = interleave_solve(y, Downsample(2), rp, cfg, np.random.default_rng(1))
    b = interleave_solve(y, Downsample(2), rp, cfg, np.random.default_rng(1))
    assert np.array_equal(a.recon, b.recon) and a.residuals == b.residuals


def test_contracts(setup):
    x, rp = setup
    with pytest.raises(ContractError):
        InterleaveConfig(zeta=-1.0)
    with pytest.raises(ContractError):
        InterleaveConfig(variant="langevin")
    with pytest.raises(ContractError):
        interleave_solve(x, NonlinearBlur(delta_kernel(3)), rp, InterleaveConfig(variant="projection"))
    with pytest.raises(ContractError):
        interleave_solve(x, BlindBlur(3), rp)
