"""P-value adjustment: Bonferroni, Holm, Hochberg, Hommel, BH and BY.

All procedures work on 2-D arrays row-wise (one row per family) so the Monte
Carlo engine can adjust thousands of replications in one call;
:func:`adjust` is the single-family entry point.

Multipliers are written as ``(m / i) * p`` rather than ``m * p / i`` so that
the i == m and i == 1 cases reproduce ``p`` and ``m * p`` exactly. That keeps
the dominance chains between methods exact in floating point.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from shipgate.errors import ValidationError


class AdjustMethod(str, enum.Enum):
    NONE = "none"
    BONFERRONI = "bonferroni"
    HOLM = "holm"
    HOCHBERG = "hochberg"
    HOMMEL = "hommel"
    BH = "bh"
    BY = "by"

    @classmethod
    def parse(cls, value: "AdjustMethod | str") -> "AdjustMethod":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ValidationError(f"unknown adjustment method {value!r} (choose from {names})") from None


FWER_METHODS = (AdjustMethod.BONFERRONI, AdjustMethod.HOLM, AdjustMethod.HOCHBERG, AdjustMethod.HOMMEL)


def harmonic(m: int) -> float:
    """c(m) = sum_{k=1..m} 1/k, the Benjamini-Yekutieli constant."""
    return float(np.sum(1.0 / np.arange(1, m + 1)))


@dataclass(frozen=True)
class AdjustedPValues:
    raw: np.ndarray
    adjusted: np.ndarray
    method: AdjustMethod
    family_size: int

    def reject(self, alpha: float) -> set[int]:
        return reject_set(self, alpha)


def _check(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.size == 0 or p.shape[-1] == 0:
        raise ValidationError("no p-values")
    if np.any(np.isnan(p)) or np.any((p < 0.0) | (p > 1.0)):
        raise ValidationError("p-values must lie in [0, 1]")
    return p


def _sort_rows(p: np.ndarray):
    order = np.argsort(p, axis=1, kind="stable")
    return order, np.take_along_axis(p, order, axis=1)


def _unsort(sorted_vals: np.ndarray, order: np.ndarray) -> np.ndarray:
    out = np.empty_like(sorted_vals)
    np.put_along_axis(out, order, sorted_vals, axis=1)
    return out


def _cummin_rev(x: np.ndarray) -> np.ndarray:
    return np.minimum.accumulate(x[:, ::-1], axis=1)[:, ::-1]


def _bonferroni(p):
    return np.minimum(1.0, p.shape[1] * p)


def _holm(p):
    m = p.shape[1]
    order, ps = _sort_rows(p)
    mult = (m - np.arange(m)).astype(float)
    adj = np.minimum(1.0, np.maximum.accumulate(mult * ps, axis=1))
    return _unsort(adj, order)


def _hochberg(p):
    m = p.shape[1]
    order, ps = _sort_rows(p)
    mult = (m - np.arange(m)).astype(float)
    adj = np.minimum(1.0, _cummin_rev(mult * ps))
    return _unsort(adj, order)


def _bh_unclipped(p):
    m = p.shape[1]
    order, ps = _sort_rows(p)
    mult = m / np.arange(1, m + 1)
    return order, _cummin_rev(mult * ps)


def _bh(p):
    order, adj = _bh_unclipped(p)
    return _unsort(np.minimum(1.0, adj), order)


def _by(p):
    order, adj = _bh_unclipped(p)
    return _unsort(np.minimum(1.0, harmonic(p.shape[1]) * adj), order)


def _hommel(p):
    """Closed testing with Simes local tests, O(m^2) per row.

    For each intersection size j (from m down to 2) the largest Simes p-value
    over intersections of size j containing a given hypothesis is tracked, and
    the adjusted value is the running maximum over j.
    """
    n_rows, m = p.shape
    order, ps = _sort_rows(p)
    ranks = np.arange(1, m + 1)
    q = np.repeat(np.min((m / ranks) * ps, axis=1, keepdims=True), m, axis=1)
    pa = q.copy()
    for j in range(m - 1, 1, -1):
        head = slice(0, m - j + 1)
        tail = slice(m - j + 1, m)
        q1 = np.min((j / np.arange(2, j + 1)) * ps[:, tail], axis=1, keepdims=True)
        q[:, head] = np.minimum(j * ps[:, head], q1)
        q[:, tail] = q[:, m - j : m - j + 1]
        pa = np.maximum(pa, q)
    adj = np.minimum(1.0, np.maximum(pa, ps))
    return _unsort(adj, order)


_DISPATCH = {
    AdjustMethod.NONE: lambda p: p.copy(),
    AdjustMethod.BONFERRONI: _bonferroni,
    AdjustMethod.HOLM: _holm,
    AdjustMethod.HOCHBERG: _hochberg,
    AdjustMethod.HOMMEL: _hommel,
    AdjustMethod.BH: _bh,
    AdjustMethod.BY: _by,
}


def adjust_many(pvalues, method: AdjustMethod | str) -> np.ndarray:
    """Adjust each row of a 2-D array as its own family."""
    p = _check(pvalues)
    if p.ndim != 2:
        raise ValidationError("adjust_many expects a 2-D array")
    return _DISPATCH[AdjustMethod.parse(method)](p)


def adjust(pvalues, method: AdjustMethod | str) -> AdjustedPValues:
    """Adjusted p-values for one family, in input order.

    Args:
        pvalues: Raw p-values, each in [0, 1].
        method: One of ``none, bonferroni, holm, hochberg, hommel, bh, by``.

    Raises:
        ValidationError: Empty input, NaN, or a value outside [0, 1].
    """
    method = AdjustMethod.parse(method)
    p = _check(np.atleast_1d(np.asarray(pvalues, dtype=float)))
    if p.ndim != 1:
        raise ValidationError("adjust expects a 1-D sequence of p-values")
    adj = _DISPATCH[method](p[None, :])[0]
    return AdjustedPValues(raw=p, adjusted=adj, method=method, family_size=p.size)


def reject_set(adj: AdjustedPValues, alpha: float) -> set[int]:
    """Indices whose adjusted p-value is strictly below ``alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    return {int(i) for i in np.flatnonzero(adj.adjusted < alpha)}


MAX_ORACLE_M = 16


def closure_oracle(pvalues, local_test: str, alpha: float) -> set[int]:
    """Brute-force closed testing over all 2^m - 1 intersection hypotheses.

    H_i is rejected iff every intersection containing i is rejected by the
    local test at level ``alpha``. ``local_test="bonferroni"`` gives Holm's
    rejections, ``"simes"`` gives Hommel's. Exponential; meant as a test oracle.
    """
    p = _check(np.atleast_1d(np.asarray(pvalues, dtype=float)))
    m = p.size
    if m > MAX_ORACLE_M:
        raise ValidationError(f"closure_oracle enumerates 2^m subsets; m={m} exceeds {MAX_ORACLE_M}")
    if local_test not in ("bonferroni", "simes"):
        raise ValidationError(f"unknown local test {local_test!r}")
    order = np.argsort(p, kind="stable")
    ps = p[order]
    # bits[s, r] says whether the hypothesis with sorted rank r is in subset s
    bits = np.array(list(itertools.product((False, True), repeat=m))[1:])[:, ::-1]
    rank_in_subset = np.cumsum(bits, axis=1)
    size = rank_in_subset[:, -1:].astype(float)
    if local_test == "bonferroni":
        terms = np.where(bits, size * ps, np.inf)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(bits, (size / rank_in_subset) * ps, np.inf)
    rejected = terms.min(axis=1) < alpha
    out = set()
    for rank, idx in enumerate(order):
        if rejected[bits[:, rank]].all():
            out.add(int(idx))
    return out


def effective_count(corr) -> float:
    """Nyholt's effective number of independent tests, clamped to [1, m].

    m_eff = 1 + (m - 1) * (1 - var(eigenvalues) / m), variance with ddof=1.
    Informational only; nothing in the package swaps it in for a family size.
    """
    c = np.asarray(corr, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValidationError("effective_count expects a square correlation matrix")
    if not np.allclose(c, c.T, atol=1e-10) or not np.allclose(np.diag(c), 1.0, atol=1e-10):
        raise ValidationError("effective_count expects a symmetric matrix with unit diagonal")
    m = c.shape[0]
    lam = np.linalg.eigvalsh(c)
    if lam.min() < -1e-10:
        raise ValidationError(f"correlation matrix is not PSD (min eigenvalue {lam.min():.3g})")
    if m == 1:
        return 1.0
    m_eff = 1.0 + (m - 1) * (1.0 - np.var(lam, ddof=1) / m)
    return float(np.clip(m_eff, 1.0, m))
