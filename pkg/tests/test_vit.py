import numpy as np
import pytest

from panosphere.losses import LossWeights
from panosphere.vit import (
    ToyConfig,
    ToySphereViT,
    _interp_matrix,
    forward,
    gradient_check,
    patchify,
    softmax_rows,
    sphere_cross_attention,
    synthetic_sphere_scene,
    train_sgd,
)


def test_config_text_round_trip():
    cfg = ToyConfig.from_text("patch = 4\n# comment\ndim=8  # trailing\nseed=3\n")
    assert (cfg.patch, cfg.dim, cfg.key_dim, cfg.seed) == (4, 8, 4, 3)
    with pytest.raises(ValueError, match="unknown"):
        ToyConfig.from_text("depth=3")
    with pytest.raises(ValueError):
        ToyConfig(dim=10)


def test_patchify_counts_and_zero_input():
    w = np.ones((8 * 8 * 3, 16))
    tokens = patchify(np.zeros((16, 32, 3)), 8, w, np.zeros(16))
    assert tokens.shape == (8, 16)
    assert not tokens.any()


def test_patchify_identity_on_one_hot_patch():
    img = np.zeros((4, 4, 1))
    img[2:4, 0:2, 0] = [[1, 2], [3, 4]]
    tokens = patchify(img, 2, np.eye(4), np.zeros(4))
    # patch (row 1, col 0) is token 2 and carries its pixels in raster order
    np.testing.assert_array_equal(tokens[2], [1, 2, 3, 4])
    assert not tokens[[0, 1, 3]].any()


def test_softmax_rows_stable():
    a = softmax_rows(np.array([[1000.0, 1000.0], [-1000.0, 0.0]]))
    np.testing.assert_allclose(a, [[0.5, 0.5], [0.0, 1.0]])


def test_attention_zero_query_is_uniform(rng):
    e = rng.normal(size=(6, 8))
    w_v = rng.normal(size=(8, 4))
    out, attn = sphere_cross_attention(rng.normal(size=(6, 8)), e, np.zeros((8, 4)),
                                       rng.normal(size=(8, 4)), w_v)
    assert np.all(attn == 1.0 / 6)
    np.testing.assert_allclose(out, np.broadcast_to((e @ w_v).mean(axis=0), out.shape))


def test_attention_single_key(rng):
    e = rng.normal(size=(1, 8))
    w_v = rng.normal(size=(8, 4))
    out, attn = sphere_cross_attention(rng.normal(size=(1, 8)), e, rng.normal(size=(8, 4)),
                                       rng.normal(size=(8, 4)), w_v)
    assert np.all(attn == 1.0)
    np.testing.assert_allclose(out, np.broadcast_to(e @ w_v, out.shape))


def test_attention_dominating_logit():
    e = np.eye(4)
    w_k = np.eye(4)
    w_v = np.arange(16.0).reshape(4, 4)
    z = np.eye(4)[[2, 0, 3, 1]]
    out, _ = sphere_cross_attention(z, e, 1e4 * np.eye(4), w_k, w_v)
    np.testing.assert_allclose(out, w_v[[2, 0, 3, 1]], atol=1e-4)


def test_attention_shape_mismatch(rng):
    with pytest.raises(ValueError, match="token count"):
        sphere_cross_attention(rng.normal(size=(3, 8)), rng.normal(size=(5, 8)),
                               rng.normal(size=(8, 4)), rng.normal(size=(8, 4)),
                               rng.normal(size=(8, 4)))
    with pytest.raises(ValueError):
        sphere_cross_attention(rng.normal(size=(5, 8)), rng.normal(size=(5, 6)),
                               rng.normal(size=(8, 4)), rng.normal(size=(8, 4)),
                               rng.normal(size=(8, 4)))


@pytest.mark.parametrize("wrap", [False, True])
def test_interp_matrix_rows_are_convex(wrap):
    m = _interp_matrix(32, 4, 8, wrap)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)
    assert m.min() >= 0
    # a constant coarse signal upsamples to the same constant
    np.testing.assert_allclose(m @ np.full(4, 2.5), 2.5)


def test_forward_contract():
    cfg = ToyConfig(seed=7)
    img, _ = synthetic_sphere_scene(16, 32)
    out = forward(img, cfg)
    assert out.shape == (16, 32)
    assert np.all(out > 0)
    np.testing.assert_array_equal(out, forward(img, ToyConfig(seed=7)))
    assert not np.array_equal(out, forward(img, ToyConfig(seed=8)))
    with pytest.raises(ValueError):
        forward(np.zeros((16, 32, 1)), cfg)
    with pytest.raises(ValueError):
        ToySphereViT(cfg, 15, 32)


def test_embedding_untouched_by_training():
    cfg = ToyConfig()
    img, target = synthetic_sphere_scene(16, 32)
    model = ToySphereViT(cfg, 16, 32)
    before = model.embedding.checksum()
    train_sgd(model, img, target, steps=3)
    assert model.embedding.checksum() == before


def test_quadratic_gradient_check():
    img, target = synthetic_sphere_scene(16, 32, noise=0.05)
    report = gradient_check(ToyConfig(), img, target, eps=1e-4, tol=1e-6, loss="quadratic")
    assert report["pass"], report["max_rel_err"]
    names = {g["param_group"] for g in report["groups"]}
    assert {"patch_w", "cross0_wq", "cross1_wo", "head_b"} <= names


def test_total_gradient_check_small():
    cfg = ToyConfig(patch=4, dim=8, n_linear=1, n_cross=1)
    img, target = synthetic_sphere_scene(8, 16, noise=0.05)
    report = gradient_check(cfg, img, target, eps=1e-3, tol=1e-3)
    assert report["pass"], report["max_rel_err"]
    assert report["embedding_unchanged"]


def test_gradient_check_unknown_loss():
    img, target = synthetic_sphere_scene(8, 16)
    with pytest.raises(ValueError):
        gradient_check(ToyConfig(patch=4, dim=8), img, target, loss="huber")


def test_training_reduces_loss_with_weights():
    img, target = synthetic_sphere_scene(16, 32)
    model = ToySphereViT(ToyConfig(), 16, 32)
    hist = train_sgd(model, img, target, steps=40, lr=0.05, weights=LossWeights(1.0, 0.0))
    assert len(hist) == 41
    assert hist[-1] < hist[0]


def test_synthetic_scene_is_exact():
    img, dist = synthetic_sphere_scene(8, 16, center=(0.0, 0.0, 0.0), radius=3.0)
    np.testing.assert_allclose(dist, 3.0)
    assert img.shape == (8, 16, 3)
    with pytest.raises(ValueError):
        synthetic_sphere_scene(8, 16, center=(3.0, 0.0, 0.0), radius=2.0)
