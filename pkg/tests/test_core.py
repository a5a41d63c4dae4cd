import numpy as np
import pytest

from latentcomp.core import as_mask, digest, gaussian_noise, masked_channel_stats, substream_seed
from latentcomp.errors import EmptyMask, ShapeMismatch


def test_stats_of_constant_latent():
    st = masked_channel_stats(np.full((3, 4, 4), 2.0), np.ones((4, 4)))
    assert np.array_equal(st.mean, [2.0, 2.0, 2.0])
    assert np.array_equal(st.std, [0.0, 0.0, 0.0])
    assert st.count == 16


def test_two_site_population_std():
    t = np.zeros((1, 2, 2))
    t[0, 0, 0], t[0, 1, 1] = 1.0, 3.0
    m = np.array([[1.0, 0.0], [0.0, 1.0]])
    st = masked_channel_stats(t, m)
    assert st.mean[0] == 2.0 and st.std[0] == 1.0


def test_stats_match_boolean_indexing():
    rng = np.random.default_rng(0)
    t = rng.normal(size=(4, 6, 5))
    m = rng.uniform(size=(6, 5)) > 0.4
    st = masked_channel_stats(t, m)
    sel = t[:, m]
    np.testing.assert_allclose(st.mean, sel.mean(axis=1), rtol=1e-12)
    np.testing.assert_allclose(st.std, sel.std(axis=1), rtol=1e-12)


def test_stats_errors():
    with pytest.raises(EmptyMask):
        masked_channel_stats(np.ones((2, 3, 3)), np.zeros((3, 3)))
    with pytest.raises(ShapeMismatch):
        masked_channel_stats(np.ones((2, 3, 3)), np.ones((4, 3)))


def test_gaussian_noise_determinism_and_moments():
    a = gaussian_noise((1, 100, 1000), 42)
    assert a.tobytes() == gaussian_noise((1, 100, 1000), 42).tobytes()
    assert abs(a.mean()) < 0.02
    assert 0.98 <= a.std() <= 1.02
    b = gaussian_noise((1, 100, 1000), 43)
    assert np.mean(a != b) >= 0.99


def test_substreams_are_distinct():
    assert substream_seed(0, "noise") != substream_seed(0, "dataset")
    assert substream_seed(0, "noise") == substream_seed(0, "noise")
    assert substream_seed(1, "noise") != substream_seed(0, "noise")


def test_as_mask_validates():
    m = as_mask(np.array([[True, False], [False, True]]))
    assert m.dtype == np.float64 and m.sum() == 2
    with pytest.raises(ValueError):
        as_mask(np.array([[0.2, 0.0], [1.0, 0.0]]))
    with pytest.raises(ShapeMismatch):
        as_mask(np.ones((2, 2)), (3, 3))


def test_digest_sensitive_to_content():
    x = np.zeros((2, 2))
    y = x.copy()
    y[0, 0] = 1e-12
    assert digest(x) == digest(x.copy())
    assert digest(x) != digest(y)
