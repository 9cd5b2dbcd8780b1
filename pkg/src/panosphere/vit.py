"""Toy-scale SphereViT: patch embedding, spherical cross-attention and a
distance head, in float64 numpy with hand-written backward passes.

Layer stack::

    patchify -> n_linear x [Z + tanh(Z W + b)]
             -> n_cross  x [Z + CrossAttn(Z, E_sphere) W_O]
             -> per-token linear head -> bilinear upsample -> softplus

The image features are the queries; the fixed spherical embedding supplies
keys and values and is never written to.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .embedding import SphericalEmbedding, build_sphere_embedding
from .losses import LossWeights, total_loss

log = logging.getLogger(__name__)


@dataclass
class ToyConfig:
    patch: int = 8
    dim: int = 16
    key_dim: int = 0  # 0 means dim // 2
    n_linear: int = 2
    n_cross: int = 2
    channels: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.key_dim <= 0:
            self.key_dim = max(1, self.dim // 2)
        if self.dim % 4:
            raise ValueError(f"dim must be divisible by 4, got {self.dim}")
        if self.patch < 1 or self.n_linear < 0 or self.n_cross < 0:
            raise ValueError("patch must be >= 1 and block counts >= 0")

    @classmethod
    def from_text(cls, text: str) -> "ToyConfig":
        """Parse ``key=value`` lines; ``#`` starts a comment."""
        known = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
            values[key] = int(value)
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)


def glorot_uniform(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def softmax_rows(logits) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def sphere_cross_attention(z, embedding, w_q, w_k, w_v):
    """``softmax(Z W_Q (E W_K)^T / sqrt(D_k)) (E W_V)``; returns ``(output, weights)``."""
    z = np.asarray(z, dtype=np.float64)
    e = embedding.matrix if isinstance(embedding, SphericalEmbedding) else np.asarray(embedding)
    if z.shape[1] != e.shape[1] or w_q.shape[0] != z.shape[1]:
        raise ValueError(f"feature dim mismatch: Z {z.shape}, E {e.shape}, W_Q {w_q.shape}")
    if z.shape[0] != e.shape[0]:
        raise ValueError(f"token count mismatch: Z has {z.shape[0]}, E has {e.shape[0]}")
    d_k = w_q.shape[1]
    q = z @ w_q
    k = e @ w_k
    v = e @ w_v
    attn = softmax_rows(q @ k.T / math.sqrt(d_k))
    return attn @ v, attn


def softplus(x):
    return np.logaddexp(0.0, x)


def _interp_matrix(n_out: int, n_in: int, patch: int, wrap: bool) -> np.ndarray:
    """Linear interpolation from patch centres to pixel centres, shape (n_out, n_in)."""
    src = (np.arange(n_out) + 0.5) / patch - 0.5
    m = np.zeros((n_out, n_in))
    if wrap:
        lo = np.floor(src)
        frac = src - lo
        lo = lo.astype(int)
        rows = np.arange(n_out)
        np.add.at(m, (rows, lo % n_in), 1.0 - frac)
        np.add.at(m, (rows, (lo + 1) % n_in), frac)
    else:
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.minimum(np.floor(src).astype(int), max(n_in - 2, 0))
        frac = src - lo
        rows = np.arange(n_out)
        np.add.at(m, (rows, lo), 1.0 - frac)
        np.add.at(m, (rows, np.minimum(lo + 1, n_in - 1)), frac)
    return m


def patchify_array(img, patch: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    if h % patch or w % patch:
        raise ValueError(f"image {h}x{w} is not divisible by patch size {patch}")
    hp, wp = h // patch, w // patch
    x = img.reshape(hp, patch, wp, patch, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(hp * wp, patch * patch * c)


def patchify(img, patch: int, weight, bias) -> np.ndarray:
    """Flatten P x P patches row-major and project them to tokens."""
    return patchify_array(img, patch) @ weight + bias


class ToySphereViT:
    """A deterministic, seeded toy model for an ``height x width`` panorama."""

    def __init__(self, config: ToyConfig, height: int, width: int):
        self.config = config
        p = config.patch
        if height % p or width % p:
            raise ValueError(f"image {height}x{width} is not divisible by patch size {p}")
        self.height, self.width = height, width
        self.h_prime, self.w_prime = height // p, width // p
        self.embedding = build_sphere_embedding(self.h_prime, self.w_prime, config.dim)
        self.up_rows = _interp_matrix(height, self.h_prime, p, wrap=False)
        self.up_cols = _interp_matrix(width, self.w_prime, p, wrap=True)
        self.params = self._init_params(np.random.default_rng(config.seed))

    def _init_params(self, rng) -> dict:
        c = self.config
        d, dk = c.dim, c.key_dim
        fan_patch = c.patch * c.patch * c.channels
        params = {"patch_w": glorot_uniform(rng, fan_patch, d), "patch_b": np.zeros(d)}
        for i in range(c.n_linear):
            params[f"linear{i}_w"] = glorot_uniform(rng, d, d)
            params[f"linear{i}_b"] = np.zeros(d)
        for i in range(c.n_cross):
            params[f"cross{i}_wq"] = glorot_uniform(rng, d, dk)
            params[f"cross{i}_wk"] = glorot_uniform(rng, d, dk)
            params[f"cross{i}_wv"] = glorot_uniform(rng, d, dk)
            params[f"cross{i}_wo"] = glorot_uniform(rng, dk, d)
        params["head_w"] = glorot_uniform(rng, d, 1)[:, 0]
        params["head_b"] = np.zeros(1)
        return params

    def parameter_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def forward(self, img, *, return_cache: bool = False):
        """Predict a strictly positive ``(H, W)`` distance map."""
        c, prm = self.config, self.params
        img = np.asarray(img, dtype=np.float64)
        if img.shape[:2] != (self.height, self.width):
            raise ValueError(f"expected a {self.height}x{self.width} image, got {img.shape[:2]}")
        e = self.embedding.matrix
        x = patchify_array(img, c.patch)
        z = x @ prm["patch_w"] + prm["patch_b"]
        cache = {"x": x, "linear": [], "cross": []}
        for i in range(c.n_linear):
            t = np.tanh(z @ prm[f"linear{i}_w"] + prm[f"linear{i}_b"])
            cache["linear"].append((z, t))
            z = z + t
        for i in range(c.n_cross):
            q = z @ prm[f"cross{i}_wq"]
            k = e @ prm[f"cross{i}_wk"]
            v = e @ prm[f"cross{i}_wv"]
            attn = softmax_rows(q @ k.T / math.sqrt(c.key_dim))
            o = attn @ v
            cache["cross"].append((z, q, k, v, attn, o))
            z = z + o @ prm[f"cross{i}_wo"]
        cache["z"] = z
        s = (z @ prm["head_w"] + prm["head_b"][0]).reshape(self.h_prime, self.w_prime)
        logits = self.up_rows @ s @ self.up_cols.T
        out = softplus(logits)
        cache["logits"] = logits
        return (out, cache) if return_cache else out

    def backward(self, cache, grad_out) -> dict:
        """Gradients of a scalar loss w.r.t. every parameter, given d loss / d output."""
        c, prm = self.config, self.params
        e = self.embedding.matrix
        grads = {}
        g_logits = grad_out / (1.0 + np.exp(-cache["logits"]))  # softplus' = sigmoid
        g_s = (self.up_rows.T @ g_logits @ self.up_cols).reshape(-1)
        z = cache["z"]
        grads["head_w"] = z.T @ g_s
        grads["head_b"] = np.array([g_s.sum()])
        g_z = np.outer(g_s, prm["head_w"])
        scale = 1.0 / math.sqrt(c.key_dim)
        for i in reversed(range(c.n_cross)):
            z_in, q, k, v, attn, o = cache["cross"][i]
            grads[f"cross{i}_wo"] = o.T @ g_z
            g_o = g_z @ prm[f"cross{i}_wo"].T
            g_attn = g_o @ v.T
            g_v = attn.T @ g_o
            g_logit = attn * (g_attn - np.sum(g_attn * attn, axis=1, keepdims=True))
            g_q = g_logit @ k * scale
            g_k = g_logit.T @ q * scale
            grads[f"cross{i}_wq"] = z_in.T @ g_q
            grads[f"cross{i}_wk"] = e.T @ g_k
            grads[f"cross{i}_wv"] = e.T @ g_v
            g_z = g_z + g_q @ prm[f"cross{i}_wq"].T
        for i in reversed(range(c.n_linear)):
            z_in, t = cache["linear"][i]
            g_pre = g_z * (1.0 - t * t)
            grads[f"linear{i}_w"] = z_in.T @ g_pre
            grads[f"linear{i}_b"] = g_pre.sum(axis=0)
            g_z = g_z + g_pre @ prm[f"linear{i}_w"].T
        grads["patch_w"] = cache["x"].T @ g_z
        grads["patch_b"] = g_z.sum(axis=0)
        return grads

    def loss_and_grads(self, img, target, mask=None, weights: LossWeights = LossWeights()):
        pred, cache = self.forward(img, return_cache=True)
        result = total_loss(pred, target, mask, weights, return_grad=True)
        return result, self.backward(cache, result.grad)


def train_sgd(model: ToySphereViT, img, target, mask=None, *, lr: float = 0.05,
              steps: int = 200, weights: LossWeights = LossWeights()) -> list[float]:
    """Plain full-batch SGD; returns the loss before each step plus the final loss."""
    history = []
    for step in range(steps):
        result, grads = model.loss_and_grads(img, target, mask, weights)
        history.append(result.total)
        for name, g in grads.items():
            model.params[name] -= lr * g
        if step % 50 == 0:
            log.debug("step %d loss %.6f", step, result.total)
    history.append(total_loss(model.forward(img), target, mask, weights).total)
    return history


def _group_rel_err(analytic, numeric) -> float:
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-300)
    return float(np.linalg.norm(analytic - numeric) / denom)


def gradient_check(config: ToyConfig, img, target, mask=None, *, eps: float = 1e-3,
                   tol: float = 1e-3, loss: str = "total",
                   weights: LossWeights = LossWeights(), plain: bool = False) -> dict:
    """Compare analytic gradients with central finite differences.

    ``loss`` is ``"total"`` (median-aligned distance + normal L1) or
    ``"quadratic"`` (half the squared norm of the output). Each parameter
    group's error is ``|g_a - g_n| / max(|g_a|, |g_n|)`` in the Euclidean norm.

    The total loss is only piecewise smooth (L1 signs, median selection,
    normal orientation). Its finite differences are taken with those choices
    frozen at the unperturbed point, so both sides differentiate the same
    smooth piece. ``plain=True`` additionally reports the unfrozen error per
    group as ``plain_rel_err``.
    """
    img = np.asarray(img, dtype=np.float64)
    model = ToySphereViT(config, img.shape[0], img.shape[1])
    e_before = model.embedding.checksum()

    if loss == "quadratic":
        def objective():
            out = model.forward(img)
            return 0.5 * float(np.sum(out * out))

        out, cache = model.forward(img, return_cache=True)
        analytic = model.backward(cache, out)
        objectives = {"frozen": objective}
    elif loss == "total":
        result, analytic = model.loss_and_grads(img, target, mask, weights)
        branch = result.branch

        def frozen():
            return total_loss(model.forward(img), target, mask, weights, branch=branch).total

        def unfrozen():
            return total_loss(model.forward(img), target, mask, weights).total

        objectives = {"frozen": frozen}
        if plain:
            objectives["plain"] = unfrozen
    else:
        raise ValueError(f"unknown loss {loss!r}")

    start = time.perf_counter()
    groups = []
    for name, param in model.params.items():
        g_a = analytic[name]
        entry = {"param_group": name}
        for label, objective in objectives.items():
            numeric = np.zeros_like(param)
            flat = param.reshape(-1)
            g_n = numeric.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + eps
                f_plus = objective()
                flat[idx] = orig - eps
                f_minus = objective()
                flat[idx] = orig
                g_n[idx] = (f_plus - f_minus) / (2.0 * eps)
            finite = bool(np.all(np.isfinite(g_a)) and np.all(np.isfinite(numeric)))
            err = _group_rel_err(g_a, numeric) if finite else float("inf")
            if label == "frozen":
                entry.update(max_rel_err=err, finite=finite, **{"pass": bool(finite and err <= tol)})
            else:
                entry["plain_rel_err"] = err
        groups.append(entry)
    report = {
        "loss": loss,
        "eps": eps,
        "tol": tol,
        "groups": groups,
        "max_rel_err": max(g["max_rel_err"] for g in groups),
        "pass": all(g["pass"] for g in groups),
        "embedding_unchanged": model.embedding.checksum() == e_before,
        "seconds": time.perf_counter() - start,
    }
    if "plain" in objectives:
        report["plain_max_rel_err"] = max(g["plain_rel_err"] for g in groups)
    return report


def synthetic_sphere_scene(height: int, width: int, *, center=(0.3, -0.2, 0.1),
                           radius: float = 2.0, noise: float = 0.0, seed: int = 0):
    """A panorama taken off-centre inside a spherical room.

    Returns ``(image, distance)``: the image encodes the viewing direction in
    its three channels, the distance is the exact ray/sphere intersection.
    """
    from .geometry import cached_erp_directions

    d = cached_erp_directions(height, width)
    c = np.asarray(center, dtype=np.float64)
    if np.dot(c, c) >= radius * radius:
        raise ValueError("camera centre must lie inside the sphere")
    dc = d @ c
    distance = -dc + np.sqrt(dc * dc - np.dot(c, c) + radius * radius)
    image = 0.5 + 0.5 * d
    if noise:
        image = image + noise * np.random.default_rng(seed).standard_normal(image.shape)
    return image, distance


def forward(img, config: ToyConfig) -> np.ndarray:
    """Run a freshly initialised (seeded) toy model on ``img``."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.shape[2] != config.channels:
        raise ValueError(f"image has {img.shape[2]} channels, config expects {config.channels}")
    return ToySphereViT(config, img.shape[0], img.shape[1]).forward(img)
