"""Rule-regularized teacher distribution.

The teacher minimizes ``KL(t || p) + C * E_t[penalty]``; its closed form is
``t(y) ∝ p(y) * exp(-C * penalty(y))``.
"""

from __future__ import annotations

import numpy as np

DEFAULT_C = 1.0


def project(p: np.ndarray, penalties: np.ndarray, C: float = DEFAULT_C) -> np.ndarray:
    """Project one or more label distributions (last axis) onto the rule-regularized subspace."""
    p = np.asarray(p, dtype=float)
    penalties = np.asarray(penalties, dtype=float)
    if C < 0:
        raise ValueError("C must be nonnegative")
    if penalties.shape != p.shape:
        penalties = np.broadcast_to(penalties, p.shape)
    if np.any(penalties < 0):
        raise ValueError("penalties must be nonnegative")
    scaled = C * penalties
    if not np.any(scaled):
        return p.copy()
    with np.errstate(divide="ignore"):
        logits = np.log(p) - scaled
    top = logits.max(axis=-1, keepdims=True)
    if np.any(~np.isfinite(top)):
        raise ValueError("teacher numerator is zero for every label")
    t = np.exp(logits - top)
    return t / t.sum(axis=-1, keepdims=True)
