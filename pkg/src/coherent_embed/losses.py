"""Temporal coherency objectives with closed-form gradients.

Every loss works on raw vectors and differentiates through the cosine
similarity, so gradients are valid whether or not the inputs already lie on
the unit sphere.  Gradients are returned by role name; ``combined_loss``
accumulates gradients that share a name, which is how the anchor and
positive receive contributions from both the first- and second-order terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import expit, log_softmax, logsumexp, softmax

from .core import EPS_NORM, DegenerateVectorError


class DegenerateSegmentError(DegenerateVectorError):
    """A difference vector in the second-order loss has (near) zero length."""


@dataclass
class LossConfig:
    temperature: float = 1.0
    n_negatives: int = 8192
    n_within_negatives: int = 100
    first_order_weight: float = 5.0
    second_order_weight: float = 1.0
    aux_weight: float = 1.0
    nce_mode: str = "exact-softmax"
    z_estimate: Union[float, str] = "auto"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.n_negatives < 1:
            raise ValueError("at least one negative is required")
        if min(self.first_order_weight, self.second_order_weight, self.aux_weight) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.nce_mode not in ("exact-softmax", "nce"):
            raise ValueError(f"unknown nce_mode {self.nce_mode!r}")
        if self.z_estimate != "auto" and float(self.z_estimate) <= 0:
            raise ValueError("z_estimate must be positive or 'auto'")


@dataclass
class LossResult:
    value: float
    gradients: dict = field(default_factory=dict)


def _unit(x):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / n, n


def _cos_and_grads(a, B):
    """Cosine of ``a`` (D,) against each row of ``B`` (M, D) and both partials."""
    a_hat, na = _unit(a)
    B_hat, nb = _unit(B)
    s = B_hat @ a_hat
    ds_da = (B_hat - s[:, None] * a_hat) / na
    ds_dB = (a_hat - s[:, None] * B_hat) / nb
    return np.clip(s, -1.0, 1.0), ds_da, ds_dB


def _check_nonzero(*arrays):
    for x in arrays:
        if np.any(np.linalg.norm(x, axis=-1) <= EPS_NORM):
            raise DegenerateVectorError("cosine similarity is undefined for a zero vector")


def first_order_loss(anchor, positive, negatives, temperature: float = 1.0) -> LossResult:
    """Cross-entropy of picking ``positive`` out of ``{positive} + negatives``.

    Logits are cosine similarities to the anchor divided by ``temperature``.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if negatives.size == 0 or negatives.shape[0] == 0:
        raise ValueError("first_order_loss needs at least one negative")
    _check_nonzero(anchor, positive, negatives)
    others = np.vstack([positive[None], negatives])
    s, ds_da, ds_dB = _cos_and_grads(anchor, others)
    z = s / temperature
    value = logsumexp(z) - z[0]
    g = softmax(z)
    g[0] -= 1.0
    g /= temperature
    grad_others = g[:, None] * ds_dB
    return LossResult(
        float(value),
        {"anchor": g @ ds_da, "positive": grad_others[0], "negatives": grad_others[1:]},
    )


def estimate_partition(negative_similarities, temperature: float, dataset_size: int) -> float:
    """Monte-Carlo partition estimate: dataset size times the mean of exp(s / tau)."""
    s = np.asarray(negative_similarities, dtype=np.float64)
    return float(dataset_size * np.mean(np.exp(s / temperature)))


def nce_loss(anchor, positive, negatives, temperature: float, dataset_size: int, partition: float) -> LossResult:
    """Binary data-vs-noise classification loss with uniform noise 1/K.

    With ``q(x) = exp(s(anchor, x) / tau) / Z`` and ``m`` noise samples the
    posterior of the data class is ``q / (q + m/K)``; both the data term and
    the noise terms enter as negative log-likelihoods.
    """
    if partition <= 0:
        raise ValueError("partition estimate Z must be positive")
    if dataset_size < 1:
        raise ValueError("dataset_size must be at least 1")
    anchor = np.asarray(anchor, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if negatives.shape[0] == 0:
        raise ValueError("nce_loss needs at least one negative")
    _check_nonzero(anchor, positive, negatives)
    m = negatives.shape[0]
    others = np.vstack([positive[None], negatives])
    s, ds_da, ds_dB = _cos_and_grads(anchor, others)
    # u = log q - log(m Pn) is the logit of the data-class posterior
    u = s / temperature - np.log(partition) - np.log(m / dataset_size)
    value = np.logaddexp(0.0, -u[0]) + np.logaddexp(0.0, u[1:]).sum()
    du = expit(u)
    du[0] -= 1.0
    g = du / temperature
    grad_others = g[:, None] * ds_dB
    return LossResult(
        float(value),
        {"anchor": g @ ds_da, "positive": grad_others[0], "negatives": grad_others[1:]},
    )


def second_order_loss(anchor, positive, second, within_negatives, temperature: float = 1.0) -> LossResult:
    """Cross-entropy over cosines between consecutive difference vectors.

    The positive logit compares ``positive - anchor`` with ``second - positive``;
    each negative ``n`` replaces the second step with ``n - positive``.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    second = np.asarray(second, dtype=np.float64)
    negs = np.atleast_2d(np.asarray(within_negatives, dtype=np.float64))
    if negs.shape[0] == 0:
        raise ValueError("second_order_loss needs at least one negative")
    step = positive - anchor
    nexts = np.vstack([second[None], negs]) - positive
    if np.linalg.norm(step) <= EPS_NORM or np.any(np.linalg.norm(nexts, axis=1) <= EPS_NORM):
        raise DegenerateSegmentError("repeated embedding gives a zero-length difference")
    s, ds_dstep, ds_dnext = _cos_and_grads(step, nexts)
    z = s / temperature
    value = logsumexp(z) - z[0]
    g = softmax(z)
    g[0] -= 1.0
    g /= temperature
    g_step = g @ ds_dstep
    g_next = g[:, None] * ds_dnext
    return LossResult(
        float(value),
        {
            "anchor": -g_step,
            "positive": g_step - g_next.sum(axis=0),
            "second": g_next[0],
            "within_negatives": g_next[1:],
        },
    )


def rotation_aux_loss(logits, target: int) -> LossResult:
    """Softmax cross-entropy over the four rotation classes.

    ``target`` is the rotation index k, meaning a counterclockwise turn of k * 90 degrees.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (4,):
        raise ValueError(f"expected 4 rotation logits, got shape {logits.shape}")
    if not 0 <= int(target) < 4:
        raise ValueError("rotation target must be in 0..3")
    value = -log_softmax(logits)[int(target)]
    g = softmax(logits)
    g[int(target)] -= 1.0
    return LossResult(float(value), {"logits": g})


def combined_loss(first: LossResult, second: Optional[LossResult] = None, aux: Optional[LossResult] = None,
                  config: Optional[LossConfig] = None) -> LossResult:
    """Weighted sum of the parts; gradients that share a role name are accumulated."""
    config = config or LossConfig()
    parts = [(first, config.first_order_weight), (second, config.second_order_weight), (aux, config.aux_weight)]
    value = 0.0
    grads: dict = {}
    for part, w in parts:
        if part is None:
            continue
        value += w * part.value
        for name, g in part.gradients.items():
            grads[name] = grads[name] + w * g if name in grads else w * g
    return LossResult(float(value), grads)
