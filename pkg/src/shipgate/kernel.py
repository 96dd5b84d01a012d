"""Numerical primitives: Gaussian CDF/quantile, chi-square tail, Cholesky, MVN sampling.

Gaussian and chi-square functions are thin wrappers over ``scipy.special``
(``ndtr``/``ndtri``/``gammaincc``), which are accurate to a few ulp. The
Cholesky factorization is written out so that failures can name the pivot
and near-singular correlation matrices can be repaired instead of rejected.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from shipgate.errors import DomainError, FactorizationError, NumericWarning, ValidationError

NEG_PIVOT_TOL = 1e-10
RIDGE = 1e-8


def std_normal_cdf(x):
    """Standard normal CDF. Accepts scalars or arrays; saturates for |x| > 40."""
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x) & ~np.isinf(x)):
        raise DomainError("std_normal_cdf: NaN input")
    out = special.ndtr(np.clip(x, -40.0, 40.0))
    out = np.where(x < -40.0, 0.0, np.where(x > 40.0, 1.0, out))
    return float(out) if out.ndim == 0 else out


def std_normal_sf(x):
    """Upper tail 1 - Phi(x), computed without cancellation."""
    return std_normal_cdf(-np.asarray(x, dtype=float))


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open interval (0, 1).

    ``ndtri`` is followed by one Newton step against ``ndtr``; in practice the
    step changes the result by at most an ulp or two.
    """
    p = np.asarray(p, dtype=float)
    if np.any(np.isnan(p)) or np.any((p <= 0.0) | (p >= 1.0)):
        raise DomainError("std_normal_quantile: p must lie strictly inside (0, 1)")
    x = special.ndtri(p)
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(pdf > 1e-300, (special.ndtr(x) - p) / pdf, 0.0)
    x = x - step
    return float(x) if x.ndim == 0 else x


def chisq_sf(x: float, df: int) -> float:
    """Chi-square survival function via the regularized upper incomplete gamma."""
    if df < 1 or int(df) != df:
        raise DomainError(f"chisq_sf: df must be a positive integer, got {df}")
    if x < 0 or math.isnan(x):
        raise DomainError(f"chisq_sf: x must be non-negative, got {x}")
    if x == 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


def cholesky(matrix) -> np.ndarray:
    """Lower-triangular L with L @ L.T == matrix, tolerating semi-definite input.

    A pivot in [-1e-10, 0] is treated as an exact zero (the column is set to
    zero and a :class:`NumericWarning` is issued). Anything more negative
    raises :class:`FactorizationError` naming the pivot.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"cholesky: expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, atol=1e-12, rtol=0):
        raise ValidationError("cholesky: matrix is not symmetric")
    n = a.shape[0]
    L = np.zeros_like(a)
    degenerate = False
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if d < -NEG_PIVOT_TOL:
            raise FactorizationError(j, d)
        if d <= NEG_PIVOT_TOL * max(1.0, abs(a[j, j])):
            degenerate = True
            continue
        L[j, j] = math.sqrt(d)
        L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    if degenerate:
        warnings.warn("cholesky: matrix is singular; using a semi-definite factor", NumericWarning, stacklevel=2)
    return L


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Each stream is a Philox generator keyed by a ``SeedSequence`` whose spawn
    key is the stream id, so replication *i* always sees the same numbers no
    matter how replications are scheduled across workers.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= v < 2**64:
                raise ValidationError(f"RngStream.{name} must be a 64-bit unsigned int, got {v!r}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise ValidationError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def mvn_sample(mean, chol, rng, size: int | None = None) -> np.ndarray:
    """Draw from N(mean, chol @ chol.T).

    ``rng`` may be an :class:`RngStream` (a fresh generator is built, so the
    same stream always yields the same draw) or a live numpy ``Generator``.
    Returns shape ``(m,)`` when ``size`` is None, else ``(size, m)``.
    """
    mean = np.asarray(mean, dtype=float)
    chol = np.asarray(chol, dtype=float)
    if chol.ndim != 2 or chol.shape[0] != chol.shape[1] or chol.shape[0] != mean.shape[-1]:
        raise ValidationError(f"mvn_sample: mean has length {mean.shape[-1]} but factor is {chol.shape}")
    gen = _as_generator(rng)
    m = mean.shape[-1]
    if size is None:
        return mean + chol @ gen.standard_normal(m)
    return mean + gen.standard_normal((size, m)) @ chol.T


@dataclass(frozen=True)
class CorrelationSpec:
    """Correlation structure for m metrics.

    kinds:
      * ``independent``
      * ``equicorrelated`` with a single ``rho``
      * ``block`` with ``block_sizes`` and ``within_rho`` (one value for every
        block, or one per block; a block with rho 0 is a set of independent
        metrics)
      * ``explicit`` with a full ``matrix``
    """

    kind: str = "independent"
    rho: float = 0.0
    block_sizes: tuple[int, ...] = ()
    within_rho: tuple[float, ...] | float = 0.0
    matrix: tuple[tuple[float, ...], ...] | None = field(default=None, repr=False)

    @classmethod
    def independent(cls) -> "CorrelationSpec":
        return cls("independent")

    @classmethod
    def equicorrelated(cls, rho: float) -> "CorrelationSpec":
        if not 0.0 <= rho < 1.0:
            raise ValidationError(f"equicorrelated rho must be in [0, 1), got {rho}")
        return cls("equicorrelated", rho=float(rho))

    @classmethod
    def block(cls, block_sizes: Sequence[int], within_rho: float | Sequence[float]) -> "CorrelationSpec":
        sizes = tuple(int(b) for b in block_sizes)
        if not sizes or any(b < 1 for b in sizes):
            raise ValidationError("block sizes must be positive integers")
        if isinstance(within_rho, (int, float)):
            rhos: tuple[float, ...] | float = float(within_rho)
        else:
            rhos = tuple(float(r) for r in within_rho)
            if len(rhos) != len(sizes):
                raise ValidationError("need one within_rho per block")
        return cls("block", block_sizes=sizes, within_rho=rhos)

    @classmethod
    def explicit(cls, matrix) -> "CorrelationSpec":
        a = np.asarray(matrix, dtype=float)
        return cls("explicit", matrix=tuple(tuple(row) for row in a))

    @classmethod
    def from_dict(cls, d: dict) -> "CorrelationSpec":
        kind = d.get("kind", "independent")
        if kind == "independent":
            return cls.independent()
        if kind == "equicorrelated":
            return cls.equicorrelated(d["rho"])
        if kind == "block":
            return cls.block(d["block_sizes"], d["within_rho"])
        if kind == "explicit":
            return cls.explicit(d["matrix"])
        raise ValidationError(f"unknown correlation kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "equicorrelated":
            return {"kind": self.kind, "rho": self.rho}
        if self.kind == "block":
            rhos = self.within_rho if isinstance(self.within_rho, float) else list(self.within_rho)
            return {"kind": self.kind, "block_sizes": list(self.block_sizes), "within_rho": rhos}
        if self.kind == "explicit":
            return {"kind": self.kind, "matrix": [list(r) for r in self.matrix]}
        return {"kind": "independent"}

    def realize(self, m: int) -> np.ndarray:
        """The m x m correlation matrix."""
        if self.kind == "independent":
            return np.eye(m)
        if self.kind == "equicorrelated":
            c = np.full((m, m), self.rho)
            np.fill_diagonal(c, 1.0)
            return c
        if self.kind == "block":
            if sum(self.block_sizes) != m:
                raise ValidationError(f"block sizes {self.block_sizes} do not sum to m={m}")
            rhos = self.within_rho
            if isinstance(rhos, float):
                rhos = (rhos,) * len(self.block_sizes)
            c = np.eye(m)
            start = 0
            for size, rho in zip(self.block_sizes, rhos):
                c[start : start + size, start : start + size] = rho
                start += size
            np.fill_diagonal(c, 1.0)
            return c
        if self.kind == "explicit":
            c = np.asarray(self.matrix, dtype=float)
            if c.shape != (m, m):
                raise ValidationError(f"explicit matrix has shape {c.shape}, expected {(m, m)}")
            if not np.allclose(c, c.T, atol=1e-12) or not np.allclose(np.diag(c), 1.0, atol=1e-12):
                raise ValidationError("explicit correlation must be symmetric with unit diagonal")
            return c
        raise ValidationError(f"unknown correlation kind {self.kind!r}")

    def factor(self, m: int) -> np.ndarray:
        """Cholesky factor of :meth:`realize`, ridge-repairing borderline matrices."""
        return correlation_factor(self.realize(m))


def correlation_factor(c: np.ndarray) -> np.ndarray:
    """Cholesky factor of a correlation matrix.

    Minimum eigenvalue below -1e-10 is an error; in [-1e-10, 1e-8] the
    diagonal gets a 1e-8 ridge and a warning.
    """
    lam_min = float(np.linalg.eigvalsh(c).min())
    if lam_min < -NEG_PIVOT_TOL:
        raise ValidationError(f"correlation matrix is not PSD (min eigenvalue {lam_min:.3g})")
    if lam_min < RIDGE:
        warnings.warn(
            f"near-singular correlation matrix (min eigenvalue {lam_min:.3g}); adding {RIDGE:g} ridge",
            NumericWarning,
            stacklevel=2,
        )
        c = c + RIDGE * np.eye(c.shape[0])
    return cholesky(c)
