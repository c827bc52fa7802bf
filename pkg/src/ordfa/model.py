"""Ordinal probit observation model.

A graded response with label ``y`` in ``{1..P}`` is modeled as a quantized
noisy slack value: ``y = quantize(z + noise)`` where ``z = w_i @ c_j + mu_i``
and the noise is zero-mean Gaussian with precision ``tau``.  Equivalently::

    P(y = p | z) = Phi(tau * (omega_p - z)) - Phi(tau * (omega_{p-1} - z))

with ``Phi`` the standard normal CDF and ``omega_0 < ... < omega_P`` the
quantizer bin boundaries.  This module holds the quantizer, the per-entry
likelihood, and the analytic gradient building blocks shared by the solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

# Interval probabilities are clamped at this floor before taking logs or
# dividing, so objectives stay finite and gradients stay NaN-free at
# extreme slack values.
LIKELIHOOD_FLOOR = 1e-12

_SQRT2 = math.sqrt(2.0)
_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class QuantizerSpec:
    """Ordered bin boundaries ``omega_0 < ... < omega_P`` defining the quantizer.

    The outer boundaries may be infinite (and usually are).  ``num_labels``
    is ``P >= 2``; label ``p`` covers the left-open interval
    ``(omega_{p-1}, omega_p]``.
    """

    __slots__ = ("boundaries",)

    def __init__(self, boundaries):
        b = np.asarray(boundaries, dtype=float)
        if b.ndim != 1 or b.size < 3:
            raise ValueError("need at least 3 boundaries (P >= 2)")
        if np.isnan(b).any():
            raise ValueError("boundaries must not contain NaN")
        if not np.all(np.diff(b) > 0):
            raise ValueError("boundaries must be strictly increasing")
        self.boundaries = b
        self.boundaries.setflags(write=False)

    @property
    def num_labels(self) -> int:
        return self.boundaries.size - 1

    def __eq__(self, other):
        return isinstance(other, QuantizerSpec) and np.array_equal(
            self.boundaries, other.boundaries
        )

    def __repr__(self):
        return f"QuantizerSpec({self.boundaries.tolist()})"


@dataclass(frozen=True)
class BoundsPair:
    """Lower/upper bin boundaries for one observed label."""

    lower: float
    upper: float


class ResponseMatrix:
    """Q x N grid of ordinal labels with an observation mask.

    ``labels[i, j]`` is meaningful only where ``mask[i, j]`` is True; masked-out
    entries are ignored everywhere.  Labels are 1-based.
    """

    __slots__ = ("labels", "mask")

    def __init__(self, labels, mask=None):
        labels = np.asarray(labels)
        if labels.ndim != 2:
            raise ValueError("labels must be a 2-D array")
        if mask is None:
            mask = np.ones(labels.shape, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != labels.shape:
            raise ValueError("mask shape must match labels shape")
        if not mask.any():
            raise ValueError("observation mask is empty")
        if not np.issubdtype(labels.dtype, np.integer):
            as_int = labels.astype(int)
            if not np.array_equal(as_int[mask], labels[mask]):
                raise ValueError("labels must be integers")
            labels = as_int
        if (labels[mask] < 1).any():
            raise ValueError("observed labels must be >= 1")
        self.labels = labels.astype(int)
        self.mask = mask

    @property
    def num_questions(self) -> int:
        return self.labels.shape[0]

    @property
    def num_learners(self) -> int:
        return self.labels.shape[1]

    @property
    def num_observed(self) -> int:
        return int(self.mask.sum())


@dataclass
class FactorModel:
    """Estimated factors: associations W (Q x K, nonnegative), difficulties mu
    (Q,), concept knowledge C (K x N), and observation precision tau.

    ``bins`` is populated by bin-learning fits: either a single
    :class:`QuantizerSpec` shared by all questions or a list with one spec per
    question row.
    """

    W: np.ndarray
    mu: np.ndarray
    C: np.ndarray
    tau: float
    bins: object = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        if self.W.ndim != 2 or self.C.ndim != 2 or self.mu.ndim != 1:
            raise ValueError("W and C must be 2-D, mu 1-D")
        q, k = self.W.shape
        if self.C.shape[0] != k:
            raise ValueError("W and C disagree on the number of concepts")
        if self.mu.shape[0] != q:
            raise ValueError("mu length must match the number of questions")
        if (self.W < 0).any():
            raise ValueError("W must be elementwise nonnegative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def num_concepts(self) -> int:
        return self.W.shape[1]

    def slack(self) -> np.ndarray:
        """The Q x N matrix of slack values ``W C + mu 1^T``."""
        return self.W @ self.C + self.mu[:, None]


def std_normal_cdf(x):
    """Standard normal CDF; accepts +-inf, rejects NaN."""
    x = np.asarray(x, dtype=float)
    if np.isnan(x).any():
        raise ValueError("NaN input to std_normal_cdf")
    out = special.ndtr(x)
    return float(out) if out.ndim == 0 else out

def std_normal_pdf(x):
    """Standard normal density ``exp(-x^2/2) / sqrt(2 pi)``."""
    x = np.asarray(x, dtype=float)
    if np.isnan(x).any():
        raise ValueError("NaN input to std_normal_pdf")
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return float(out) if out.ndim == 0 else out


def quantize(x, q: QuantizerSpec):
    """Map real values to labels: ``p`` such that ``omega_{p-1} < x <= omega_p``.

    Values at a boundary belong to the lower bin.  Raises for values outside
    ``(omega_0, omega_P]``.
    """
    b = q.boundaries
    x = np.asarray(x, dtype=float)
    if np.isnan(x).any():
        raise ValueError("NaN input to quantize")
    p = np.searchsorted(b, x, side="left")
    if (p < 1).any() or (p > q.num_labels).any():
        raise ValueError("value outside the quantizer domain")
    return int(p) if p.ndim == 0 else p


def label_bounds(y: int, q: QuantizerSpec) -> BoundsPair:
    """The (lower, upper) bin boundaries ``(omega_{y-1}, omega_y)`` for label y."""
    if not 1 <= y <= q.num_labels:
        raise ValueError(f"label {y} outside 1..{q.num_labels}")
    b = q.boundaries
    return BoundsPair(float(b[y - 1]), float(b[y]))


def bounds_for_labels(labels, mask, quantizer):
    """Per-entry (L, U) boundary arrays for a grid of labels.

    ``quantizer`` is a single QuantizerSpec or a sequence with one spec per
    question row.  Masked-out entries get valid placeholder bounds (label 1)
    so downstream array code never sees NaN; callers must still apply the mask.
    """
    labels = np.asarray(labels)
    safe = np.where(mask, labels, 1)
    if isinstance(quantizer, QuantizerSpec):
        p = quantizer.num_labels
        if (safe < 1).any() or (safe > p).any():
            raise ValueError("labels outside the quantizer range")
        lower = quantizer.boundaries[safe - 1]
        upper = quantizer.boundaries[safe]
        return lower, upper
    specs = list(quantizer)
    if len(specs) != labels.shape[0]:
        raise ValueError("need one quantizer per question row")
    lower = np.empty(labels.shape, dtype=float)
    upper = np.empty(labels.shape, dtype=float)
    for i, spec in enumerate(specs):
        row = safe[i]
        if (row < 1).any() or (row > spec.num_labels).any():
            raise ValueError(f"labels outside the quantizer range in row {i}")
        lower[i] = spec.boundaries[row - 1]
        upper[i] = spec.boundaries[row]
    return lower, upper


def interval_probability(z, lower, upper, tau):
    """``Phi(tau (U - z)) - Phi(tau (L - z))``, clipped to [LIKELIHOOD_FLOOR, 1]."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    prob = special.ndtr(tau * (upper - z)) - special.ndtr(tau * (lower - z))
    return np.clip(prob, LIKELIHOOD_FLOOR, 1.0)


def interval_ratio(a, b):
    """Stable ``(pdf(a) - pdf(b)) / (Phi(b) - Phi(a))`` for ``a < b``.

    This is the elementwise building block of the likelihood gradient.  Direct
    evaluation underflows to 0/0 when the interval sits far in a tail; there
    the computation is rescaled by ``exp(a^2/2)`` and expressed through the
    scaled complementary error function, which keeps the result accurate out
    to arbitrarily extreme arguments (it approaches the Mills ratio as the
    interval recedes).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    out = np.empty(a.shape, dtype=float)

    right = a >= 0.0
    left = b <= 0.0
    center = ~(right | left)

    if right.any():
        out[right] = _right_tail_ratio(a[right], b[right])
    if left.any():
        out[left] = -_right_tail_ratio(-b[left], -a[left])
    if center.any():
        ac, bc = a[center], b[center]
        num = _INV_SQRT_2PI * (np.exp(-0.5 * ac * ac) - np.exp(-0.5 * bc * bc))
        den = np.maximum(special.ndtr(bc) - special.ndtr(ac), LIKELIHOOD_FLOOR)
        out[center] = num / den
    return out if out.ndim else float(out)


def _right_tail_ratio(a, b):
    """interval_ratio restricted to 0 <= a < b (b may be +inf)."""
    with np.errstate(invalid="ignore"):
        decay = np.exp(0.5 * (a - b) * (a + b))
    decay = np.where(np.isinf(b), 0.0, decay)
    scaled_tail = special.erfcx(a / _SQRT2) - special.erfcx(np.where(np.isinf(b), 0.0, b) / _SQRT2) * decay
    return (1.0 - decay) / (_SQRT_HALF_PI * scaled_tail)


def ordinal_likelihood(z: float, y: int, tau: float, q: QuantizerSpec) -> float:
    """Probability of observing label ``y`` given slack ``z`` and precision ``tau``."""
    bounds = label_bounds(y, q)
    return float(interval_probability(float(z), bounds.lower, bounds.upper, tau))


def likelihood_ratio_term(z: float, y: int, tau: float, q: QuantizerSpec) -> float:
    """Gradient kernel ``(pdf(tau(L-z)) - pdf(tau(U-z))) / P(y | z)``.

    The per-entry derivative of the negative log-likelihood with respect to
    ``z`` is ``-tau`` times this value.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    bounds = label_bounds(y, q)
    return float(interval_ratio(tau * (bounds.lower - z), tau * (bounds.upper - z)))


def nll_terms(Z, lower, upper, tau, mask):
    """Per-entry negative log-likelihoods, zeroed outside the mask."""
    terms = -np.log(interval_probability(Z, lower, upper, tau))
    return np.where(mask, terms, 0.0)


def ratio_matrix(Z, lower, upper, tau, mask):
    """interval_ratio evaluated entrywise at ``tau (L - Z), tau (U - Z)``, zeroed off-mask."""
    r = interval_ratio(tau * (lower - Z), tau * (upper - Z))
    return np.where(mask, r, 0.0)


def negative_log_likelihood(model: FactorModel, Y: ResponseMatrix, q) -> float:
    """Total ``-sum log P(Y_ij | z_ij)`` over the observed entries."""
    if model.W.shape[0] != Y.num_questions or model.C.shape[1] != Y.num_learners:
        raise ValueError("model dimensions do not match the response matrix")
    lower, upper = bounds_for_labels(Y.labels, Y.mask, q)
    return float(nll_terms(model.slack(), lower, upper, model.tau, Y.mask).sum())


def gradient_row(w_i, mu_i, C, y_row, mask_row, tau, q):
    """Gradient of the row negative log-likelihood with respect to ``w_i``.

    Equals ``-tau * C_obs @ p`` where ``p`` stacks ``likelihood_ratio_term``
    over the observed entries of the row.
    """
    w_i = np.asarray(w_i, dtype=float)
    C = np.asarray(C, dtype=float)
    if C.shape[0] != w_i.shape[0]:
        raise ValueError("w_i and C disagree on the number of concepts")
    y_row = np.asarray(y_row)
    if mask_row is None:
        mask_row = np.ones(y_row.shape, dtype=bool)
    mask_row = np.asarray(mask_row, dtype=bool)
    if y_row.shape[0] != C.shape[1] or mask_row.shape != y_row.shape:
        raise ValueError("row length must match the number of learners")
    lower, upper = bounds_for_labels(y_row[None, :], mask_row[None, :], q)
    z = w_i @ C + mu_i
    r = ratio_matrix(z[None, :], lower, upper, tau, mask_row[None, :])[0]
    return -tau * (C @ r)
