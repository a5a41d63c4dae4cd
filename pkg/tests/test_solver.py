import numpy as np
import pytest

from latentcomp.errors import IndexOverflow, IndexUnderflow, ShapeMismatch
from latentcomp.models import AnalyticDenoiser, GaussianMixtureModel
from latentcomp.schedule import build_schedule
from latentcomp.solver import (
    TrajectoryState, denoise_step, invert_step, invert_trajectory, sample_trajectory,
)

S = build_schedule(20)
rng = np.random.default_rng(0)


def _z(shape=(3, 4, 4)):
    return rng.standard_normal(shape)


def test_zero_eps_scales_latent():
    z = _z()
    out = denoise_step(TrajectoryState(7, z), np.zeros_like(z), S)
    np.testing.assert_allclose(out.latent, S.alpha[6] / S.alpha[7] * z, rtol=1e-14)
    up = invert_step(TrajectoryState(7, z), np.zeros_like(z), S)
    np.testing.assert_allclose(up.latent, S.alpha[8] / S.alpha[7] * z, rtol=1e-14)


def test_exact_noise_algebra():
    x, e = _z(), _z()
    t = 12
    out = denoise_step(TrajectoryState(t, S.alpha[t] * x + S.sigma[t] * e), e, S)
    np.testing.assert_allclose(out.latent, S.alpha[t - 1] * x + S.sigma[t - 1] * e, rtol=1e-12, atol=1e-14)


def test_order2_without_extrapolation_matches_order1():
    z, e = _z(), _z()
    t = 9
    x0 = (z - S.sigma[t] * e) / S.alpha[t]
    o1 = denoise_step(TrajectoryState(t, z), e, S, 1)
    o2 = denoise_step(TrajectoryState(t, z, prev_clean=x0), e, S, 2)
    assert o1.latent.tobytes() == o2.latent.tobytes()
    # no history: falls back to order 1
    assert denoise_step(TrajectoryState(t, z), e, S, 2).latent.tobytes() == o1.latent.tobytes()


def test_step_pair_is_identity_for_fixed_eps():
    for t in range(20):
        z, e = _z(), _z()
        back = denoise_step(invert_step(TrajectoryState(t, z), e, S), e, S)
        assert np.linalg.norm(back.latent - z) / np.linalg.norm(z) <= 1e-10


def test_superposition():
    z1, z2, e1, e2 = _z(), _z(), _z(), _z()
    a, b = 0.7, -1.3
    for step, t in ((denoise_step, 5), (invert_step, 5)):
        lhs = step(TrajectoryState(t, a * z1 + b * z2), a * e1 + b * e2, S).latent
        rhs = a * step(TrajectoryState(t, z1), e1, S).latent + b * step(TrajectoryState(t, z2), e2, S).latent
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_inputs_not_mutated():
    z, e = _z(), _z()
    zc, ec = z.copy(), e.copy()
    denoise_step(TrajectoryState(3, z, prev_clean=z), e, S, 2)
    invert_step(TrajectoryState(3, z), e, S)
    assert np.array_equal(z, zc) and np.array_equal(e, ec)


def test_step_errors():
    z = _z()
    with pytest.raises(IndexUnderflow):
        denoise_step(TrajectoryState(0, z), z, S)
    with pytest.raises(IndexOverflow):
        invert_step(TrajectoryState(20, z), z, S)
    with pytest.raises(ShapeMismatch):
        denoise_step(TrajectoryState(3, z), np.zeros((3, 4, 5)), S)


def _gaussian(seed=1, std=0.4):
    r = np.random.default_rng(seed)
    mean = r.normal(0.5, 0.3, size=(3, 8, 8))
    return mean, std, AnalyticDenoiser(GaussianMixtureModel.single(mean, std))


def test_trajectory_shape_and_determinism():
    mean, std, den = _gaussian()
    z0 = mean + std * rng.standard_normal(mean.shape)
    a = invert_trajectory(z0, den, None, S)
    b = invert_trajectory(z0, den, None, S)
    assert len(a) == 21 and a[0].tobytes() == z0.tobytes()
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))


@pytest.mark.parametrize("iters", [0, 1, 3])
def test_round_trip_gaussian(iters):
    mean, std, den = _gaussian()
    z0 = mean + std * rng.standard_normal(mean.shape)
    rec = sample_trajectory(invert_trajectory(z0, den, None, S, iters)[-1], den, None, S)
    # plain inversion carries the first-order drift; refinement removes most of it
    bound = 0.2 if iters == 0 else 5e-2
    assert np.linalg.norm(rec - z0) / np.linalg.norm(z0) <= bound


def test_refinement_never_worse_per_step():
    mean, std, den = _gaussian()
    z0 = mean + std * rng.standard_normal(mean.shape)
    plain = invert_trajectory(z0, den, None, S, 0)
    refined = invert_trajectory(z0, den, None, S, 3)
    rec = [np.linalg.norm(sample_trajectory(t[-1], den, None, S) - z0) for t in (plain, refined)]
    assert rec[1] <= rec[0]


def _pf_ode_target(zT, mean, std, t):
    """Closed-form probability-flow solution for a Gaussian prior."""
    scale = lambda i: np.sqrt(S.alpha[i] ** 2 * std**2 + S.sigma[i] ** 2)  # noqa: E731
    return S.alpha[t] * mean + scale(t) * (zT - S.alpha[-1] * mean) / scale(S.steps)


def test_order2_at_least_as_accurate_as_order1():
    mean, std, den = _gaussian(std=0.5)
    zT = S.alpha[-1] * mean + np.sqrt(S.alpha[-1] ** 2 * std**2 + S.sigma[-1] ** 2) * rng.standard_normal(mean.shape)
    target = _pf_ode_target(zT, mean, std, 0)
    errs = [np.linalg.norm(sample_trajectory(zT, den, None, S, order, clean_endpoint=False) - target)
            for order in (1, 2)]
    assert errs[1] <= errs[0]


def test_sample_partial_range_and_visited():
    mean, std, den = _gaussian()
    zT = rng.standard_normal(mean.shape)
    visited = sample_trajectory(zT, den, None, S, start=15, stop=6, return_all=True)
    assert sorted(visited) == list(range(6, 16))
    assert visited[15].tobytes() == zT.tobytes()


def test_clean_endpoint_removes_residual_noise():
    m = rng.standard_normal((3, 4, 4))
    den = AnalyticDenoiser(GaussianMixtureModel.single(m, 0.0))
    zT = S.alpha[-1] * m + S.sigma[-1] * rng.standard_normal(m.shape)
    noisy = sample_trajectory(zT, den, None, S, clean_endpoint=False)
    clean = sample_trajectory(zT, den, None, S)
    assert np.linalg.norm(clean - m) / np.linalg.norm(m) < 1e-12
    assert np.linalg.norm(noisy - m) / np.linalg.norm(m) > 1e-6  # sigma_0 residual


def test_second_order_inversion_round_trip():
    mean, std, den = _gaussian()
    z0 = mean + std * rng.standard_normal(mean.shape)
    plain = sample_trajectory(invert_trajectory(z0, den, None, S, 0)[-1], den, None, S)
    second = sample_trajectory(invert_trajectory(z0, den, None, S, order=2)[-1], den, None, S, order=2)
    assert np.linalg.norm(second - z0) < np.linalg.norm(plain - z0)


def test_second_order_invert_step_without_history_is_first_order():
    z, e = _z(), _z()
    a = invert_step(TrajectoryState(4, z), e, S, 1)
    b = invert_step(TrajectoryState(4, z), e, S, 2)
    assert a.latent.tobytes() == b.latent.tobytes()
