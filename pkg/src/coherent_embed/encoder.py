"""Small convolutional encoder with an explicit backward pass.

Architecture: ``len(widths)`` stages of 3x3 convolution (stride 2, padding 1),
batch normalization and ReLU, then global average pooling, a linear
projection to ``dim``, an optional affine-free batch normalization of the
projection (``embed_norm``) and L2 normalization.  Without that centering
step the pooled ReLU features share one dominant direction and every
embedding starts inside a narrow cone.  An optional linear head
predicts the 4-way rotation from the pooled features.  Inputs are
channel-first, (N, C, H, W).

Batch normalization uses batch statistics when ``train=True`` (and updates
the running averages stored as ``bnI.running_mean`` / ``bnI.running_var``)
and the running averages otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass
class EncoderConfig:
    in_channels: int = 3
    widths: list = field(default_factory=lambda: [16, 32, 64])
    kernel_size: int = 3
    dim: int = 128
    rotation_head: bool = True
    batch_norm: bool = True
    embed_norm: bool = True
    bn_momentum: float = 0.1

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if not self.widths:
            raise ValueError("the encoder needs at least one stage")
        if self.dim < 2:
            raise ValueError("embedding dimension must be at least 2")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")


def conv_forward(x, w, b, stride=2):
    k = w.shape[-1]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2), (cols, x.shape)


def conv_backward(dout, w, cache, stride=2):
    cols, xshape = cache
    k = w.shape[-1]
    pad = k // 2
    n, cout, ho, wo = dout.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(cout, -1)).reshape(n, ho, wo, xshape[1], k, k)
    dxp = np.zeros((n, xshape[1], xshape[2] + 2 * pad, xshape[3] + 2 * pad), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, pad:pad + xshape[2], pad:pad + xshape[3]], dw, db


BN_EPS = 1e-5


def bn_forward(x, gamma, beta, mean, var):
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    return xhat * gamma[None, :, None, None] + beta[None, :, None, None], (xhat, inv)


def bn_backward(dy, gamma, cache):
    xhat, inv = cache
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dbeta = dy.sum(axis=(0, 2, 3))
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dx = (gamma * inv)[None, :, None, None] / m * (
        m * dy - dbeta[None, :, None, None] - xhat * dgamma[None, :, None, None])
    return dx, dgamma, dbeta


class Encoder:
    """Parameters live in ``self.params`` keyed by layer name."""

    def __init__(self, config: EncoderConfig, params: dict):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: EncoderConfig, seed=0, dtype=np.float32) -> "Encoder":
        """Kaiming fan-in initialization; biases start at zero."""
        rng = np.random.default_rng(seed)
        k = config.kernel_size
        params = {}
        cin = config.in_channels
        for i, cout in enumerate(config.widths):
            fan_in = cin * k * k
            params[f"conv{i}.weight"] = rng.normal(0, np.sqrt(2.0 / fan_in), (cout, cin, k, k))
            params[f"conv{i}.bias"] = np.zeros(cout)
            if config.batch_norm:
                params[f"bn{i}.weight"] = np.ones(cout)
                params[f"bn{i}.bias"] = np.zeros(cout)
                params[f"bn{i}.running_mean"] = np.zeros(cout)
                params[f"bn{i}.running_var"] = np.ones(cout)
            cin = cout
        params["proj.weight"] = rng.normal(0, np.sqrt(1.0 / cin), (config.dim, cin))
        params["proj.bias"] = np.zeros(config.dim)
        if config.embed_norm:
            params["embed_bn.running_mean"] = np.zeros(config.dim)
            params["embed_bn.running_var"] = np.ones(config.dim)
        if config.rotation_head:
            params["rot.weight"] = rng.normal(0, np.sqrt(1.0 / cin), (4, cin))
            params["rot.bias"] = np.zeros(4)
        return cls(config, {name: p.astype(dtype) for name, p in params.items()})

    @property
    def dtype(self):
        return self.params["conv0.weight"].dtype

    @property
    def feature_dim(self) -> int:
        return self.config.widths[-1]

    def copy(self) -> "Encoder":
        return Encoder(self.config, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "Encoder":
        return Encoder(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def _check_input(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected input shaped (N, {self.config.in_channels}, H, W), got {x.shape}")
        return x

    @property
    def buffers(self) -> list:
        """Names of non-trainable state (batch-norm running statistics)."""
        return [k for k in self.params if k.endswith(("running_mean", "running_var"))]

    @property
    def trainable(self) -> list:
        return [k for k in self.params if k not in self.buffers]

    def _batch_stats(self, h, axes, rm, rv):
        """Batch mean and variance; folds them into the running averages in place."""
        mean, var = h.mean(axis=axes), h.var(axis=axes)
        n = h.size // h.shape[1]
        mom = self.config.bn_momentum
        rm *= 1 - mom
        rm += mom * mean
        rv *= 1 - mom
        rv += mom * var * n / max(n - 1, 1)
        return mean, var

    def trunk(self, x, train: bool = False):
        """Pooled convolutional features (N, widths[-1]) and the backward cache."""
        x = self._check_input(x)
        caches = []
        h = x
        p = self.params
        for i in range(len(self.config.widths)):
            h, c = conv_forward(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"])
            bc = None
            if self.config.batch_norm:
                rm, rv = p[f"bn{i}.running_mean"], p[f"bn{i}.running_var"]
                mean, var = self._batch_stats(h, (0, 2, 3), rm, rv) if train else (rm, rv)
                h, bc = bn_forward(h, p[f"bn{i}.weight"], p[f"bn{i}.bias"], mean, var)
            h = np.maximum(h, 0)
            caches.append((c, bc, h))
        pooled = h.mean(axis=(2, 3))
        return pooled, (caches, h.shape, train)

    def trunk_backward(self, cache, d_pooled, grads):
        caches, hshape, train = cache
        dh = np.broadcast_to(d_pooled[:, :, None, None] / (hshape[2] * hshape[3]), hshape)
        for i in reversed(range(len(self.config.widths))):
            c, bc, out = caches[i]
            dh = np.where(out > 0, dh, 0)
            if bc is not None:
                gamma = self.params[f"bn{i}.weight"]
                if train:
                    dh, dg, dbeta = bn_backward(dh, gamma, bc)
                else:
                    xhat, inv = bc
                    dg, dbeta = (dh * xhat).sum(axis=(0, 2, 3)), dh.sum(axis=(0, 2, 3))
                    dh = dh * (gamma * inv)[None, :, None, None]
                grads[f"bn{i}.weight"] = dg
                grads[f"bn{i}.bias"] = dbeta
            dh, dw, db = conv_backward(dh, self.params[f"conv{i}.weight"], c)
            grads[f"conv{i}.weight"] = dw
            grads[f"conv{i}.bias"] = db
        return dh

    def forward(self, x, train: bool = False):
        """Unit embeddings and pooled features, plus a cache for ``backward``."""
        pooled, tcache = self.trunk(x, train)
        z = pooled @ self.params["proj.weight"].T + self.params["proj.bias"]
        ecache = None
        if self.config.embed_norm:
            rm, rv = self.params["embed_bn.running_mean"], self.params["embed_bn.running_var"]
            mean, var = self._batch_stats(z, (0,), rm, rv) if train else (rm, rv)
            inv = 1.0 / np.sqrt(var + BN_EPS)
            z = (z - mean) * inv
            ecache = (z, inv, train)
        norm = np.linalg.norm(z, axis=1, keepdims=True)
        emb = z / norm
        return emb, pooled, (tcache, pooled, emb, norm, ecache)

    def rotation_logits(self, pooled):
        return pooled @ self.params["rot.weight"].T + self.params["rot.bias"]

    def backward(self, cache, d_emb=None, d_pooled=None, d_rot=None):
        """Parameter gradients given upstream gradients on embeddings, pooled features and rotation logits.

        ``d_rot`` must come from ``rotation_logits`` applied to this cache's pooled features.
        """
        tcache, pooled, emb, norm, ecache = cache
        grads = {}
        dp = np.zeros_like(pooled) if d_pooled is None else np.array(d_pooled, dtype=pooled.dtype)
        if d_emb is not None:
            d_emb = np.asarray(d_emb, dtype=pooled.dtype)
            dz = (d_emb - emb * np.sum(d_emb * emb, axis=1, keepdims=True)) / norm
            if ecache is not None:
                zhat, inv, train = ecache
                if train:
                    dz = inv * (dz - dz.mean(axis=0) - zhat * (dz * zhat).mean(axis=0))
                else:
                    dz = dz * inv
            grads["proj.weight"] = dz.T @ pooled
            grads["proj.bias"] = dz.sum(axis=0)
            dp += dz @ self.params["proj.weight"]
        if d_rot is not None:
            d_rot = np.asarray(d_rot, dtype=pooled.dtype)
            grads["rot.weight"] = d_rot.T @ pooled
            grads["rot.bias"] = d_rot.sum(axis=0)
            dp += d_rot @ self.params["rot.weight"]
        self.trunk_backward(tcache, dp, grads)
        return grads

    def encode(self, x, batch_size: int = 256) -> np.ndarray:
        """Unit-norm embeddings for a batch of inputs (or a single (C, H, W) input)."""
        single = np.asarray(x).ndim == 3
        x = self._check_input(x)
        out = np.concatenate([self.forward(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)])
        return out[0] if single else out

    def features(self, x, batch_size: int = 256) -> np.ndarray:
        x = self._check_input(x)
        return np.concatenate([self.trunk(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)])


def encode(encoder: Encoder, x) -> np.ndarray:
    return encoder.encode(x)


class SGD:
    """Stochastic gradient descent with heavy-ball momentum.

    ``v <- momentum * v + (g + weight_decay * p)``; ``p <- p - lr * v``.
    """

    def __init__(self, params: dict, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict, names=None) -> None:
        for k in names if names is not None else grads:
            p = self.params[k]
            g = grads[k].astype(p.dtype, copy=False)
            if self.weight_decay:
                g = g + self.weight_decay * p
            v = self.velocity[k]
            v *= self.momentum
            v += g
            p -= p.dtype.type(self.lr) * v
