import numpy as np
import pytest

from latentcomp.errors import EmptyDataset, ShapeMismatch
from latentcomp.models import (
    AnalyticDenoiser, GaussianMixtureModel, LinearAutoencoder, PromptSpec, ToyEmbedder, ToyFeatureBank,
    analytic_denoiser_eps, toy_bundle,
)
from latentcomp.models.data import ToyDataset, load_dataset, make_toy_domains, save_dataset
from latentcomp.models.trained import (
    MAGIC, TrainConfig, load_weights, save_weights, train_toy_denoiser, untrained_denoiser,
)
from latentcomp.schedule import build_schedule

S = build_schedule(20)
rng = np.random.default_rng(0)


# --- analytic mixture ---------------------------------------------------------------

def test_point_mass_eps():
    m = rng.normal(size=(2, 3, 3))
    z = rng.normal(size=m.shape)
    eps = analytic_denoiser_eps(GaussianMixtureModel.single(m, 0.0), z, 9, S)
    np.testing.assert_allclose(eps, (z - S.alpha[9] * m) / S.sigma[9], rtol=1e-12)


def test_symmetric_mixture_at_origin():
    m = rng.normal(size=(1, 2, 2, 2))
    gm = GaussianMixtureModel(np.array([0.5, 0.5]), np.concatenate([m, -m]), np.array([0.3, 0.3]))
    assert np.abs(analytic_denoiser_eps(gm, np.zeros((2, 2, 2)), 11, S)).max() < 1e-15


def test_vjp_matches_finite_differences():
    gm = GaussianMixtureModel(np.array([0.6, 0.4]), rng.normal(size=(2, 2, 3, 3)), np.array([0.5, 0.7]))
    den = AnalyticDenoiser(gm)
    z = rng.normal(size=(2, 3, 3))
    v = rng.normal(size=z.shape)
    t, h = 8, 1e-6
    jtv = np.zeros(z.size)
    for i in range(z.size):
        e = np.zeros(z.size)
        e[i] = h
        e = e.reshape(z.shape)
        jtv[i] = np.sum(v * (den.predict(z + e, t, None, S) - den.predict(z - e, t, None, S))) / (2 * h)
    np.testing.assert_allclose(den.vjp(z, t, None, S, v), jtv.reshape(z.shape), rtol=1e-6, atol=1e-9)


def test_mixture_validation():
    with pytest.raises(ValueError):
        GaussianMixtureModel(np.array([0.7, 0.7]), np.zeros((2, 1, 2, 2)), np.ones(2))
    with pytest.raises(ShapeMismatch):
        GaussianMixtureModel(np.ones(1), np.zeros((1, 2, 2)), np.ones(1))
    with pytest.raises(ShapeMismatch):
        analytic_denoiser_eps(GaussianMixtureModel.single(np.zeros((1, 2, 2)), 1.0), np.zeros((1, 3, 3)), 1, S)


# --- toy autoencoder / embedder / feature bank -----------------------------------------

def test_autoencoder_constant_and_block_constant():
    ae = LinearAutoencoder(2)
    np.testing.assert_array_equal(ae.encode(np.full((3, 8, 8), 0.3)), np.full((3, 4, 4), 0.3))
    blocks = rng.uniform(size=(3, 4, 4))
    x = np.repeat(np.repeat(blocks, 2, axis=1), 2, axis=2)
    assert ae.decode(ae.encode(x)).tobytes() == x.tobytes()
    with pytest.raises(ShapeMismatch):
        ae.encode(np.zeros((3, 7, 8)))


def test_decode_adjoint():
    ae = LinearAutoencoder(2)
    z, v = rng.normal(size=(3, 5, 6)), rng.normal(size=(3, 10, 12))
    assert np.sum(ae.decode(z) * v) == pytest.approx(np.sum(z * ae.decode_adjoint_vec(v)), rel=1e-12)


def test_embedder():
    emb = ToyEmbedder((3, 8, 8), dim=16, seed=3)
    p = PromptSpec("a green disc")
    assert emb.embed_text(p).tobytes() == ToyEmbedder((3, 8, 8), dim=16, seed=3).embed_text(PromptSpec("a green disc")).tobytes()
    assert np.linalg.norm(emb.embed_text(p)) == pytest.approx(1.0)
    assert not np.allclose(emb.embed_text(p), emb.embed_text(PromptSpec("a red disc")))
    x, v = rng.normal(size=(3, 8, 8)), rng.normal(size=16)
    assert np.dot(emb.embed_image(x), v) == pytest.approx(np.sum(x * emb.image_grad_adjoint(x, v)), rel=1e-12)
    with pytest.raises(ShapeMismatch):
        emb.embed_image(np.zeros((3, 4, 4)))


def test_prompt_embedding_id():
    assert PromptSpec("abc").embedding_id == PromptSpec("abc", "tag").embedding_id
    assert PromptSpec("abc").embedding_id != PromptSpec("abd").embedding_id


def _brute_features(x, kernels):
    c, h, w = x.shape
    p = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    out = np.zeros((kernels.shape[0], h, w))
    for k in range(kernels.shape[0]):
        for i in range(h):
            for j in range(w):
                out[k, i, j] = np.sum(kernels[k] * p[:, i:i + 3, j:j + 3])
    return out


def test_feature_bank_against_brute_force():
    fb = ToyFeatureBank(3, 8, seed=1)
    x = rng.uniform(size=(3, 4, 4))
    F = _brute_features(x, fb.kernels)
    np.testing.assert_allclose(fb.features(x), F, rtol=1e-12, atol=1e-14)
    flat = F.reshape(8, -1)
    np.testing.assert_allclose(fb.gram(x), flat @ flat.T / 16, rtol=1e-10, atol=1e-14)
    assert not np.any(fb.gram(np.zeros((3, 5, 5))))


def test_feature_adjoint_inner_product():
    fb = ToyFeatureBank(3, 8, seed=2)
    x, dF = rng.normal(size=(3, 6, 7)), rng.normal(size=(8, 6, 7))
    assert np.sum(fb.features(x) * dF) == pytest.approx(np.sum(x * fb.features_adjoint(x, dF)), rel=1e-11)


def test_gram_gradient_finite_differences():
    fb = ToyFeatureBank(3, 4, seed=4)
    x, dG = rng.normal(size=(3, 4, 4)), rng.normal(size=(4, 4))
    h = 1e-6
    num = np.zeros(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        e = e.reshape(x.shape)
        num[i] = np.sum(dG * (fb.gram(x + e) - fb.gram(x - e))) / (2 * h)
    np.testing.assert_allclose(fb.gram_grad_adjoint(x, dG), num.reshape(x.shape), rtol=1e-6, atol=1e-9)


# --- data -----------------------------------------------------------------------------

def test_dataset_determinism_and_domains():
    a, b = make_toy_domains(4, 6), make_toy_domains(4, 6)
    assert a.digest() == b.digest()
    assert a.digest() != make_toy_domains(5, 6).digest()
    for smp in a:
        bg = smp.background
        assert np.array_equal(bg[0], bg[1]) and np.array_equal(bg[1], bg[2])  # grayscale
        obj = smp.object_mask > 0
        means = smp.foreground[:, obj].mean(axis=1)
        assert means.max() - means.min() > 0.1  # coloured object
        assert smp.prompt.text.endswith("on a striped background")


def test_dataset_save_load(tmp_path):
    ds = make_toy_domains(7, 3)
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert [s.id for s in back] == [s.id for s in ds]
    for s, t in zip(ds, back):
        assert np.abs(s.background - t.background).max() <= 0.5 / 255 + 1e-12
        assert np.array_equal(s.object_mask, t.object_mask)
        assert s.user_box == t.user_box and s.prompt == t.prompt


# --- trained toy denoiser ---------------------------------------------------------------

def test_training_is_deterministic():
    ds = make_toy_domains(0, 4)
    cfg = TrainConfig(epochs=3, hidden=8, depth=3)
    a = train_toy_denoiser(ds, cfg).denoiser.weights_float32()
    b = train_toy_denoiser(ds, cfg).denoiser.weights_float32()
    assert all(w1.tobytes() == w2.tobytes() and b1.tobytes() == b2.tobytes() for (w1, b1), (w2, b2) in zip(a, b))


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        train_toy_denoiser(ToyDataset((), 0))


def test_weights_round_trip(tmp_path):
    den = untrained_denoiser(3, TrainConfig(hidden=8, depth=3))
    path = tmp_path / "w.bin"
    save_weights(den, path)
    assert path.read_bytes()[:8] == MAGIC
    back = load_weights(path)
    z = rng.normal(size=(3, 6, 6))
    assert den.predict(z, 5, None, S).tobytes() == back.predict(z, 5, None, S).tobytes()
    path.write_bytes(b"NOTMAGIC" + path.read_bytes()[8:])
    with pytest.raises(ValueError):
        load_weights(path)


def test_conv_denoiser_vjp():
    den = untrained_denoiser(3, TrainConfig(hidden=8, depth=3))
    z, v = rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 4, 4))
    h = 1e-6
    num = np.zeros(z.size)
    for i in range(z.size):
        e = np.zeros(z.size)
        e[i] = h
        e = e.reshape(z.shape)
        num[i] = np.sum(v * (den.predict(z + e, 6, None, S) - den.predict(z - e, 6, None, S))) / (2 * h)
    np.testing.assert_allclose(den.vjp(z, 6, None, S, v), num.reshape(z.shape), rtol=1e-5, atol=1e-8)


@pytest.mark.slow
def test_trained_prior_separates_domains(trained_bundle):
    """The trained prior denoises held-out samples of both domains better than
    an untrained network and keeps grayscale inputs grayscale."""
    ae, den = trained_bundle.autoencoder, trained_bundle.denoiser
    blank = untrained_denoiser()
    t = 6
    errs, blank_errs = [], []
    noise = np.random.default_rng(1)
    for smp in make_toy_domains(9, 6):
        for x in (smp.background, smp.foreground):
            z0 = ae.encode(x)
            e = noise.standard_normal(z0.shape)
            zt = S.alpha[t] * z0 + S.sigma[t] * e
            errs.append(np.mean((den.predict(zt, t, None, S) - e) ** 2))
            blank_errs.append(np.mean((blank.predict(zt, t, None, S) - e) ** 2))
    assert np.mean(errs) < 0.5 * np.mean(blank_errs)


def test_bundle_describe():
    b = toy_bundle(untrained_denoiser(3, TrainConfig(hidden=8, depth=3)))
    d = b.describe()
    assert d["denoiser"] == "ConvDenoiser" and d["eta_scale"] > 0
