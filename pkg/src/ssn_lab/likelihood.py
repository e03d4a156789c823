"""Label likelihoods, the Monte-Carlo logsumexp loss, and its gradients.

A single logit channel (num_classes == 1) means a Bernoulli likelihood via
the sigmoid, with labels in {0, 1}; two or more channels mean a categorical
likelihood via the softmax over each pixel's class block. Losses are
reported in nats per label map. Masked-out pixels are excluded from the
likelihood sum entirely, and their parameter rows receive exactly zero
gradient.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit, logsumexp

from .errors import OverflowSignal, ShapeError, ValidationError
from .lowrank import (
    LowRankGaussian,
    NoiseDraw,
    draw_noise,
    reconstruct_samples,
    stack_noise,
)


@dataclass(frozen=True)
class LabelMap:
    """Integer class assignment per pixel, with optional validity mask.

    ``num_classes == 1`` denotes a single-logit binary map whose labels are
    in {0, 1}; otherwise labels lie in {0, ..., num_classes - 1}. A mask
    entry of True means the pixel contributes to likelihoods and metrics.
    """

    labels: np.ndarray  # [num_pixels]
    num_classes: int
    mask: np.ndarray | None = None

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if self.num_classes < 1:
            raise ValidationError(f"num_classes must be >= 1, got {self.num_classes}")
        limit = self.effective_classes
        if labels.size and (labels.min() < 0 or labels.max() >= limit):
            raise ValidationError(
                f"labels must lie in [0, {limit}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        if self.mask is not None:
            mask = np.array(self.mask, dtype=bool, copy=True).reshape(-1)
            if mask.shape != labels.shape:
                raise ShapeError(
                    f"mask length {mask.size} does not match {labels.size} pixels"
                )
            mask.setflags(write=False)
            object.__setattr__(self, "mask", mask)

    @property
    def num_pixels(self) -> int:
        return int(self.labels.size)

    @property
    def effective_classes(self) -> int:
        """Distinct label values: 2 for single-logit binary maps."""
        return max(self.num_classes, 2)

    def active_mask(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.num_pixels, dtype=bool)
        return self.mask


@dataclass(frozen=True)
class LossValue:
    """Monte-Carlo loss with the parts needed to reproduce it exactly."""

    value: float
    per_sample_loglik: np.ndarray  # [num_samples]
    noise: list[NoiseDraw]


class ParamGrads(NamedTuple):
    mean: np.ndarray
    factor: np.ndarray
    diag_raw: np.ndarray


def _check_logits(logits, labels: LabelMap) -> np.ndarray:
    expected = labels.num_pixels * labels.num_classes
    x = np.asarray(logits, dtype=np.float64).reshape(-1)
    if x.size != expected:
        raise ShapeError(f"logits have {x.size} entries, expected {expected}")
    return x


def batch_label_loglik(logit_rows: np.ndarray, labels: LabelMap) -> np.ndarray:
    """Per-row label log-likelihood for a [n, num_pixels * num_classes] batch."""
    active = labels.active_mask()
    if not active.any():
        warnings.warn("all pixels masked out; log-likelihood is an empty sum")
        return np.zeros(logit_rows.shape[0])
    y = labels.labels[active]
    if labels.num_classes == 1:
        eta = logit_rows[:, active]
        # log sigmoid(eta) = -softplus(-eta); label 0 flips the sign of eta
        sign = np.where(y == 1, 1.0, -1.0)
        return -np.logaddexp(0.0, -sign[None, :] * eta).sum(axis=1)
    n = logit_rows.shape[0]
    eta = logit_rows.reshape(n, labels.num_pixels, labels.num_classes)[:, active, :]
    log_norm = logsumexp(eta, axis=2)
    picked = np.take_along_axis(eta, y[None, :, None], axis=2)[:, :, 0]
    return (picked - log_norm).sum(axis=1)


def label_log_likelihood(logits, labels: LabelMap) -> float:
    """Sum over unmasked pixels of log p(label | logit block)."""
    x = _check_logits(logits, labels)
    return float(batch_label_loglik(x[None, :], labels)[0])


def cross_entropy_loss(logits, labels: LabelMap) -> float:
    """Negative label log-likelihood: the deterministic baseline objective."""
    return -label_log_likelihood(logits, labels)


def _check_agreement(dist: LowRankGaussian, labels: LabelMap) -> None:
    if dist.num_pixels != labels.num_pixels or dist.num_classes != labels.num_classes:
        raise ShapeError(
            f"distribution is over {dist.num_pixels} pixels x {dist.num_classes} "
            f"classes, labels are {labels.num_pixels} x {labels.num_classes}"
        )


def mc_loss_parts(
    dist: LowRankGaussian,
    labels: LabelMap,
    eps_factor: np.ndarray,
    eps_diag: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Loss value and per-sample log-likelihoods for fixed noise."""
    samples = reconstruct_samples(dist, eps_factor, eps_diag)
    loglik = batch_label_loglik(samples, labels)
    if not np.all(np.isfinite(loglik)):
        raise OverflowSignal("non-finite per-sample log-likelihood")
    value = float(-logsumexp(loglik) + np.log(loglik.size))
    return value, loglik


def ssn_mc_loss(
    dist: LowRankGaussian, labels: LabelMap, num_samples: int, rng_seed: int
) -> LossValue:
    """Monte-Carlo negative log-likelihood of one label map.

    Draws ``num_samples`` logit maps, scores the labels under each, and
    reduces with a logsumexp in ascending sample order:
    ``-logsumexp_m(loglik_m) + log(num_samples)``. The noise draws are
    returned so the gradient can be evaluated on identical samples.
    """
    if num_samples < 1:
        raise ValidationError(f"num_samples must be >= 1, got {num_samples}")
    _check_agreement(dist, labels)
    eps_factor, eps_diag = draw_noise(dist, num_samples, rng_seed)
    value, loglik = mc_loss_parts(dist, labels, eps_factor, eps_diag)
    noise = [
        NoiseDraw(eps_factor=eps_factor[m], eps_diag=eps_diag[m], seed=int(rng_seed))
        for m in range(num_samples)
    ]
    return LossValue(value=value, per_sample_loglik=loglik, noise=noise)


def _per_sample_residual(
    samples: np.ndarray, labels: LabelMap, weights: np.ndarray
) -> np.ndarray:
    """softmax-weighted (predicted probability - one-hot label) per element.

    This is the derivative of the logsumexp loss with respect to each logit
    sample; masked pixels contribute exact zeros.
    """
    n = samples.shape[0]
    active = labels.active_mask()
    if labels.num_classes == 1:
        probs = expit(samples)
        residual = probs - labels.labels[None, :].astype(np.float64)
        residual[:, ~active] = 0.0
        return weights[:, None] * residual
    eta = samples.reshape(n, labels.num_pixels, labels.num_classes)
    shifted = eta - eta.max(axis=2, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=2, keepdims=True)
    one_hot = np.zeros((labels.num_pixels, labels.num_classes))
    one_hot[np.arange(labels.num_pixels), labels.labels] = 1.0
    residual = probs - one_hot[None, :, :]
    residual[:, ~active, :] = 0.0
    return (weights[:, None, None] * residual).reshape(n, -1)


def mc_loss_grads(
    dist: LowRankGaussian,
    labels: LabelMap,
    eps_factor: np.ndarray,
    eps_diag: np.ndarray,
) -> tuple[float, ParamGrads]:
    """Loss and its exact gradient for fixed noise, in one pass."""
    samples = reconstruct_samples(dist, eps_factor, eps_diag)
    loglik = batch_label_loglik(samples, labels)
    if not np.all(np.isfinite(loglik)):
        raise OverflowSignal("non-finite per-sample log-likelihood")
    value = float(-logsumexp(loglik) + np.log(loglik.size))
    shifted = loglik - loglik.max()
    weights = np.exp(shifted)
    weights /= weights.sum()
    residual = _per_sample_residual(samples, labels, weights)
    grad_mean = residual.sum(axis=0)
    grad_factor = residual.T @ eps_factor
    d = dist.effective_diag
    sqrt_d_deriv = 0.5 / np.sqrt(d) * expit(dist.diag_raw)
    grad_diag_raw = (residual * eps_diag).sum(axis=0) * sqrt_d_deriv
    return value, ParamGrads(grad_mean, grad_factor, grad_diag_raw)


def grad_ssn_mc_loss(
    dist: LowRankGaussian, labels: LabelMap, noise: list[NoiseDraw]
) -> ParamGrads:
    """Reparameterisation gradient of the Monte-Carlo loss, holding the
    recorded noise fixed.

    Chain: with w the softmax of the per-sample log-likelihoods, the
    per-sample logit gradient is w_m * (probs - one_hot); the mean picks it
    up directly, the factor through an outer product with the factor noise,
    and diag_raw through d sqrt(D)/d diag_raw = sigmoid(diag_raw)/(2 sqrt(D)).
    """
    _check_agreement(dist, labels)
    eps_factor, eps_diag = stack_noise(noise)
    if eps_factor.shape[1] != dist.rank or eps_diag.shape[1] != dist.dim:
        raise ShapeError(
            f"noise shaped {eps_factor.shape[1]}/{eps_diag.shape[1]} does not "
            f"match rank {dist.rank} / dim {dist.dim}"
        )
    _, grads = mc_loss_grads(dist, labels, eps_factor, eps_diag)
    return grads


def finite_diff_grad(loss_fn, params: dict[str, np.ndarray], h: float = 1e-5):
    """Central finite differences of a pure scalar function, per coordinate.

    ``loss_fn`` receives the params dict and must be deterministic (fix any
    noise beforehand). Step 1e-5 balances truncation against round-off for
    smooth non-quadratic objectives in 64-bit arithmetic.
    """
    grads = {}
    work = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    for name, value in work.items():
        grad = np.zeros_like(value)
        flat = value.reshape(-1)
        flat_grad = grad.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + h
            upper = loss_fn(work)
            flat[idx] = original - h
            lower = loss_fn(work)
            flat[idx] = original
            flat_grad[idx] = (upper - lower) / (2.0 * h)
        grads[name] = grad
    return grads


def fixed_noise_loss_fn(labels: LabelMap, num_pixels: int, num_classes: int,
                        rank: int, eps_factor: np.ndarray, eps_diag: np.ndarray):
    """Loss as a pure function of a params dict, with noise frozen."""

    def loss_fn(params: dict[str, np.ndarray]) -> float:
        dist = LowRankGaussian(
            mean=params["mean"],
            factor=params["factor"],
            diag_raw=params["diag_raw"],
            num_pixels=num_pixels,
            num_classes=num_classes,
            rank=rank,
        )
        value, _ = mc_loss_parts(dist, labels, eps_factor, eps_diag)
        return value

    return loss_fn


@dataclass(frozen=True)
class GradCheckResult:
    trials: int
    failures: int
    max_rel_error: float
    worst_trial: int


def gradient_check_suite(
    trials: int,
    seed: int,
    rel_tol: float = 1e-4,
    abs_floor: float = 1e-7,
    h: float = 1e-5,
) -> GradCheckResult:
    """Compare analytic gradients against central differences on random
    small instances (pixels <= 8, classes in {1, 3}, rank <= 3, samples <= 5).

    A coordinate passes when `|analytic - numeric|` is within
    ``max(abs_floor, rel_tol * max(|analytic|, |numeric|))``.
    """
    from .rng import PortableRng, mix_seed

    failures = 0
    max_rel = 0.0
    worst = -1
    for trial in range(trials):
        rng = PortableRng(mix_seed(seed, trial))
        num_pixels = int(rng.integers(1, 9))
        num_classes = 1 if int(rng.integers(0, 2)) == 0 else 3
        rank = int(rng.integers(1, 4))
        num_samples = int(rng.integers(1, 6))
        params = {
            "mean": rng.standard_normal(num_pixels * num_classes),
            "factor": rng.standard_normal((num_pixels * num_classes, rank)),
            "diag_raw": rng.standard_normal(num_pixels * num_classes),
        }
        labels_arr = np.asarray(
            rng.integers(0, max(num_classes, 2), size=num_pixels), dtype=np.int64
        )
        mask = None
        if int(rng.integers(0, 3)) == 0:
            mask = np.asarray(rng.integers(0, 2, size=num_pixels), dtype=bool)
            if not mask.any():
                mask[0] = True
        labels = LabelMap(labels=labels_arr, num_classes=num_classes, mask=mask)
        dist = LowRankGaussian(
            params["mean"], params["factor"], params["diag_raw"],
            num_pixels, num_classes, rank,
        )
        eps_factor, eps_diag = draw_noise(dist, num_samples, mix_seed(seed, trial, 1))
        _, analytic = mc_loss_grads(dist, labels, eps_factor, eps_diag)
        loss_fn = fixed_noise_loss_fn(
            labels, num_pixels, num_classes, rank, eps_factor, eps_diag
        )
        numeric = finite_diff_grad(loss_fn, params, h=h)
        trial_failed = False
        for name, a in zip(("mean", "factor", "diag_raw"), analytic):
            g = numeric[name]
            diff = np.abs(a - g)
            scale = np.maximum(np.abs(a), np.abs(g))
            rel = diff / np.maximum(scale, abs_floor)
            trial_max = float(rel.max()) if rel.size else 0.0
            if trial_max > max_rel:
                max_rel = trial_max
                worst = trial
            if np.any(diff > np.maximum(abs_floor, rel_tol * scale)):
                trial_failed = True
        if trial_failed:
            failures += 1
    return GradCheckResult(
        trials=trials, failures=failures, max_rel_error=max_rel, worst_trial=worst
    )
