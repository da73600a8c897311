"""Fixed-support histograms for the distributional edge estimators.

Two supports are used throughout: 16 evenly spaced value atoms on [0, 1], and
the distance support ``1, 2, ..., 15, OVERFLOW`` whose last bin means "more
than 15 steps, or never".
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_BINS = 16
D_MAX = 15
OVERFLOW = N_BINS - 1  # bin index of the overflow outcome
VALUE_SUPPORT = np.linspace(0.0, 1.0, N_BINS)
DISTANCE_SUPPORT = np.append(np.arange(1.0, D_MAX + 1.0), np.inf)
FINITE_DISTANCES = DISTANCE_SUPPORT[:OVERFLOW]


@dataclass(frozen=True)
class Histogram:
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if support.shape != probs.shape or support.ndim != 1:
            raise ValueError("support and probs must be 1-D of equal length")
        if np.any(np.diff(support) <= 0):
            raise ValueError("support must be strictly ascending")
        if np.any(probs < -1e-12) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probs must be nonnegative and sum to 1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def point_mass(cls, support, value) -> "Histogram":
        support = np.asarray(support, dtype=float)
        probs = np.zeros(len(support))
        probs[int(np.flatnonzero(support == value)[0])] = 1.0
        return cls(support, probs)


def project_batch(atoms: np.ndarray, probs: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Categorical projection of weighted atoms onto a finite ascending support.

    ``atoms`` and ``probs`` have shape ``(n, m)``; the result is ``(n, len(support))``.
    Each atom's mass is split between its two neighbouring bins in proportion
    to proximity; atoms outside the support are clamped to its ends.
    """
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    n, k = atoms.shape[0], len(support)
    x = np.clip(atoms, support[0], support[-1])
    lo = np.clip(np.searchsorted(support, x, side="right") - 1, 0, k - 2)
    width = support[lo + 1] - support[lo]
    w_hi = (x - support[lo]) / width
    rows = np.repeat(np.arange(n), atoms.shape[1]).reshape(atoms.shape)
    out = np.bincount((rows * k + lo).ravel(), (probs * (1.0 - w_hi)).ravel(), minlength=n * k)
    out += np.bincount((rows * k + lo + 1).ravel(), (probs * w_hi).ravel(), minlength=n * k)
    return out.reshape(n, k)


def project(target_values, target_probs, support) -> Histogram:
    """Project a discrete target distribution onto ``support``."""
    support = np.asarray(support, dtype=float)
    probs = project_batch(np.asarray(target_values)[None, :], np.asarray(target_probs)[None, :],
                          support)[0]
    return Histogram(support, probs)


def shift_distances(probs: np.ndarray) -> np.ndarray:
    """Distribution of ``1 + D`` on the distance support; 16+ folds into OVERFLOW."""
    out = np.zeros_like(probs)
    out[..., 1:OVERFLOW] = probs[..., :OVERFLOW - 1]
    out[..., OVERFLOW] = probs[..., OVERFLOW - 1] + probs[..., OVERFLOW]
    return out


def discount_weights(gamma: float) -> np.ndarray:
    """Discount attached to each distance bin: ``gamma**d``, and 0 for OVERFLOW."""
    return np.append(gamma ** FINITE_DISTANCES, 0.0)


def transplant_batch(probs: np.ndarray, gamma: float) -> np.ndarray:
    return probs @ discount_weights(gamma)


def transplant_discount(dist: Histogram, gamma: float) -> float:
    """``E[gamma**D]`` read off a distance histogram, with OVERFLOW worth nothing.

    This is not ``gamma**E[D]``; the two differ whenever D is spread out.
    """
    return float(transplant_batch(dist.probs, gamma))


def expectation(dist: Histogram, overflow: float | None = None) -> float:
    """Mean of a histogram.

    An infinite support atom is replaced by ``overflow`` when given; otherwise
    any mass on it makes the mean infinite.
    """
    support = dist.support
    inf = np.isinf(support)
    if inf.any():
        if overflow is None:
            if dist.probs[inf].sum() > 0:
                return float("inf")
            return float(dist.probs[~inf] @ support[~inf])
        support = np.where(inf, overflow, support)
    return float(dist.probs @ support)


def finite_distance_batch(probs: np.ndarray, overflow: float = D_MAX) -> np.ndarray:
    return probs @ np.append(FINITE_DISTANCES, overflow)
