"""Low-rank multivariate normal distributions over flattened logit maps.

The covariance is ``factor @ factor.T + diag(effective_diag)`` where the
effective diagonal is ``softplus(diag_raw) + DIAG_FLOOR``, strictly positive
for any finite parameters, so the covariance is always symmetric positive
definite. Elements are flattened pixel-major, class-minor: flat index
``i = pixel * num_classes + class``. Downstream code (patch stitching,
per-class scaling) relies on this convention.

The exact log-density is computed without materialising the covariance,
using the Woodbury identity and the matrix determinant lemma on the
rank-by-rank capacitance matrix ``I + factor.T @ D^-1 @ factor``. A dense
Cholesky route is provided as an independent oracle for verification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError, ShapeError, SizeGuardError, ValidationError
from .rng import PortableRng

DIAG_FLOOR = 1e-5
DENSE_SIZE_GUARD = 4096
_LOG_2PI = float(np.log(2.0 * np.pi))
# Jittered Cholesky retries on the capacitance matrix before giving up.
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8)


def softplus(x):
    """log(1 + exp(x)), stable on both tails."""
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of softplus for y > 0: log(exp(y) - 1)."""
    y = np.asarray(y, dtype=np.float64)
    small = np.log(np.expm1(np.minimum(y, 30.0)))
    large = y + np.log1p(-np.exp(-np.maximum(y, 30.0)))
    return np.where(y > 30.0, large, small)


def _as_locked_f64(arr, shape, name: str) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, order="C", copy=True)
    if out.shape != shape:
        raise ShapeError(f"{name} has shape {out.shape}, expected {shape}")
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{name} contains non-finite entries")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NoiseDraw:
    """Standard-normal variates behind one reparameterised sample.

    Recording these lets a loss evaluation and its gradient (or a
    finite-difference check) reuse exactly the same randomness.
    """

    eps_factor: np.ndarray  # [rank]
    eps_diag: np.ndarray  # [dim]
    seed: int


@dataclass(frozen=True)
class LowRankGaussian:
    """Immutable normal distribution N(mean, factor factor^T + D) on logits.

    ``D = softplus(diag_raw) + DIAG_FLOOR`` elementwise. Instances validate
    their shapes and finiteness on construction and lock the underlying
    arrays, so they are safe to share across threads.
    """

    mean: np.ndarray  # [dim], logit units
    factor: np.ndarray  # [dim, rank], logit units
    diag_raw: np.ndarray  # [dim], unconstrained reals
    num_pixels: int
    num_classes: int
    rank: int

    def __post_init__(self):
        if self.num_pixels < 1 or self.num_classes < 1 or self.rank < 1:
            raise ValidationError(
                "num_pixels, num_classes and rank must all be at least 1, got "
                f"({self.num_pixels}, {self.num_classes}, {self.rank})"
            )
        dim = self.num_pixels * self.num_classes
        object.__setattr__(self, "mean", _as_locked_f64(self.mean, (dim,), "mean"))
        object.__setattr__(
            self, "factor", _as_locked_f64(self.factor, (dim, self.rank), "factor")
        )
        object.__setattr__(
            self, "diag_raw", _as_locked_f64(self.diag_raw, (dim,), "diag_raw")
        )

    @property
    def dim(self) -> int:
        return self.num_pixels * self.num_classes

    @property
    def effective_diag(self) -> np.ndarray:
        """Positive covariance diagonal softplus(diag_raw) + DIAG_FLOOR."""
        return softplus(self.diag_raw) + DIAG_FLOOR

    def marginal_variance(self) -> np.ndarray:
        """Per-element variance: row norms of the factor plus the diagonal."""
        return np.einsum("ir,ir->i", self.factor, self.factor) + self.effective_diag

    def sample(self, n: int, seed: int):
        """Draw ``n`` reparameterised samples.

        Each sample is ``mean + factor @ eps_factor + sqrt(D) * eps_diag``.
        Per sample, the ``rank`` factor variates are drawn before the ``dim``
        diagonal variates; samples consume the stream in order. Returns the
        ``[n, dim]`` sample matrix and the noise draws behind it.
        """
        if n < 1:
            raise ValidationError(f"sample count must be >= 1, got {n}")
        eps_factor, eps_diag = draw_noise(self, n, seed)
        samples = reconstruct_samples(self, eps_factor, eps_diag)
        draws = [
            NoiseDraw(eps_factor=eps_factor[m], eps_diag=eps_diag[m], seed=int(seed))
            for m in range(n)
        ]
        return samples, draws

    def log_prob(self, logits) -> float:
        """Exact Gaussian log-density in O(dim * rank^2) time.

        Uses the Woodbury identity for the quadratic form and the matrix
        determinant lemma for the log-determinant, both through a Cholesky
        factorisation of the capacitance matrix ``I + P^T D^-1 P``. The
        covariance itself is never materialised.
        """
        x = np.asarray(logits, dtype=np.float64).reshape(-1)
        if x.shape != (self.dim,):
            raise ShapeError(f"logits have {x.size} entries, expected {self.dim}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("logits contain non-finite entries")
        d = self.effective_diag
        factor_over_d = self.factor / d[:, None]
        capacitance = np.eye(self.rank) + self.factor.T @ factor_over_d
        chol = _cholesky_with_jitter(capacitance)
        delta = x - self.mean
        weighted = delta / d
        projected = self.factor.T @ weighted
        solved = solve_triangular(chol, projected, lower=True)
        mahalanobis = float(delta @ weighted - solved @ solved)
        log_det = float(2.0 * np.sum(np.log(np.diag(chol))) + np.sum(np.log(d)))
        return -0.5 * (mahalanobis + log_det + self.dim * _LOG_2PI)

    def dense_covariance(self) -> np.ndarray:
        """Materialise the full covariance matrix (verification only).

        Refuses instances with more than DENSE_SIZE_GUARD elements to guard
        against accidental huge allocations.
        """
        if self.dim > DENSE_SIZE_GUARD:
            raise SizeGuardError(
                f"dense covariance refused: dim={self.dim} exceeds {DENSE_SIZE_GUARD}"
            )
        return self.factor @ self.factor.T + np.diag(self.effective_diag)

    def dense_log_prob(self, logits) -> float:
        """Oracle log-density via a full Cholesky of the dense covariance."""
        x = np.asarray(logits, dtype=np.float64).reshape(-1)
        if x.shape != (self.dim,):
            raise ShapeError(f"logits have {x.size} entries, expected {self.dim}")
        covariance = self.dense_covariance()
        chol = np.linalg.cholesky(covariance)
        solved = solve_triangular(chol, x - self.mean, lower=True)
        log_det = 2.0 * np.sum(np.log(np.diag(chol)))
        return float(-0.5 * (solved @ solved + log_det + self.dim * _LOG_2PI))


def draw_noise(dist: LowRankGaussian, n: int, seed: int):
    """Standard-normal noise for ``n`` samples: ([n, rank], [n, dim])."""
    rng = PortableRng(seed)
    block = rng.standard_normal((n, dist.rank + dist.dim))
    return np.ascontiguousarray(block[:, : dist.rank]), np.ascontiguousarray(
        block[:, dist.rank :]
    )


def reconstruct_samples(
    dist: LowRankGaussian, eps_factor: np.ndarray, eps_diag: np.ndarray
) -> np.ndarray:
    """Deterministic sample reconstruction from recorded noise.

    Shared by sampling, the loss, its gradient and the finite-difference
    oracle so all of them see bit-identical logit samples.
    """
    scale = np.sqrt(dist.effective_diag)
    return dist.mean[None, :] + eps_factor @ dist.factor.T + eps_diag * scale[None, :]


def stack_noise(noise) -> tuple[np.ndarray, np.ndarray]:
    """Pack a list of NoiseDraw back into ([n, rank], [n, dim]) arrays."""
    if len(noise) == 0:
        raise ValidationError("empty noise list")
    eps_factor = np.stack([draw.eps_factor for draw in noise])
    eps_diag = np.stack([draw.eps_diag for draw in noise])
    return eps_factor, eps_diag


def _cholesky_with_jitter(capacitance: np.ndarray) -> np.ndarray:
    last_error = None
    for jitter in _JITTERS:
        try:
            return np.linalg.cholesky(
                capacitance + jitter * np.eye(capacitance.shape[0])
            )
        except np.linalg.LinAlgError as err:  # pragma: no cover - defensive
            last_error = err
    eigenvalues = np.linalg.eigvalsh(capacitance)
    raise NumericalError(
        "capacitance matrix not positive definite after jitter retries "
        f"{_JITTERS[1:]}: eigenvalue range [{eigenvalues.min():.3e}, "
        f"{eigenvalues.max():.3e}], condition number "
        f"{abs(eigenvalues.max() / eigenvalues.min()):.3e}"
    ) from last_error
