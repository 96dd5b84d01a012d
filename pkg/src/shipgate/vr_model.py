"""Cross-metric correlation before and after regression adjustment on pre-period values.

Two metrics follow

    A = mu_A + gamma_A * A0 + tau_A * T + eps_A
    B = mu_B + gamma_B * B0 + tau_B * T + eps_B

with (A0, B0) correlated at rho0, (eps_A, eps_B) at rho_eps, and the two pairs
independent. With a shared gamma and shared variances the raw correlation is
the weighted average

    (gamma^2 s0 rho0 + s_eps rho_eps) / (gamma^2 s0 + s_eps)

and adjusting each metric on its own pre-period value leaves rho_eps, so the
adjustment decorrelates the metrics exactly when rho_eps < rho0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from shipgate.errors import ValidationError
from shipgate.kernel import RngStream, _as_generator


@dataclass(frozen=True)
class VrDgpParams:
    gamma: float = 1.0
    sigma0_sq: float = 1.0
    sigma_eps_sq: float = 1.0
    rho0: float = 0.5
    rho_eps: float = 0.0
    tau_a: float = 0.0
    tau_b: float = 0.0
    mu_a: float = 0.0
    mu_b: float = 0.0
    gamma_b: float | None = None  # asymmetric case; no closed form

    def __post_init__(self):
        if not self.sigma0_sq > 0 or not self.sigma_eps_sq > 0:
            raise ValidationError("variances must be positive")
        for name in ("rho0", "rho_eps"):
            r = getattr(self, name)
            if not -1.0 <= r <= 1.0:
                raise ValidationError(f"{name} must be in [-1, 1], got {r}")

    @property
    def pre_weight(self) -> float:
        """Share of outcome variance explained by the pre-period value (the R^2 of the adjustment)."""
        v0 = self.gamma**2 * self.sigma0_sq
        return v0 / (v0 + self.sigma_eps_sq)

    def covariance(self) -> np.ndarray:
        """4x4 covariance of (A0, B0, eps_A, eps_B)."""
        s0, se = self.sigma0_sq, self.sigma_eps_sq
        c = np.zeros((4, 4))
        c[:2, :2] = [[s0, self.rho0 * s0], [self.rho0 * s0, s0]]
        c[2:, 2:] = [[se, self.rho_eps * se], [self.rho_eps * se, se]]
        return c


def unadjusted_corr(p: VrDgpParams) -> float:
    """Correlation of the raw outcomes within an arm."""
    v0 = p.gamma**2 * p.sigma0_sq
    return (v0 * p.rho0 + p.sigma_eps_sq * p.rho_eps) / (v0 + p.sigma_eps_sq)


def decorrelation_gap(p: VrDgpParams) -> float:
    """Raw correlation minus adjusted correlation (rho_eps); positive iff rho_eps < rho0 and gamma != 0."""
    return unadjusted_corr(p) - p.rho_eps


class DgpEstimate(NamedTuple):
    raw_corr: float
    residual_corr: float
    gamma_a_hat: float
    gamma_b_hat: float


def _pair(gen: np.random.Generator, n: int, var: float, rho: float) -> np.ndarray:
    z = gen.standard_normal((n, 2))
    x = z[:, 0]
    y = rho * z[:, 0] + math.sqrt(max(0.0, 1.0 - rho * rho)) * z[:, 1]
    return math.sqrt(var) * np.column_stack([x, y])


def _within_arm(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = x.astype(float).copy()
    for arm in (0, 1):
        sel = t == arm
        out[sel] -= out[sel].mean(axis=0)
    return out


def simulate_dgp(p: VrDgpParams, n: int, rng: RngStream | np.random.Generator) -> DgpEstimate:
    """Simulate n units with 50/50 assignment and estimate raw and adjusted correlations.

    Each metric is regressed on its own pre-period value and the treatment
    indicator (gamma estimated in-sample); correlations are computed on
    arm-demeaned outcomes so the treatment effect does not leak in.
    """
    if n < 100:
        raise ValidationError(f"n must be >= 100, got {n}")
    gen = _as_generator(rng)
    pre = _pair(gen, n, p.sigma0_sq, p.rho0)
    eps = _pair(gen, n, p.sigma_eps_sq, p.rho_eps)
    t = gen.integers(0, 2, size=n)
    gamma_b = p.gamma if p.gamma_b is None else p.gamma_b
    a = p.mu_a + p.gamma * pre[:, 0] + p.tau_a * t + eps[:, 0]
    b = p.mu_b + gamma_b * pre[:, 1] + p.tau_b * t + eps[:, 1]

    y = _within_arm(np.column_stack([a, b]), t)
    x = _within_arm(pre, t)
    g_hat = (x * y).sum(axis=0) / (x * x).sum(axis=0)
    resid = y - g_hat * x
    raw = float(np.corrcoef(y[:, 0], y[:, 1])[0, 1])
    adj = float(np.corrcoef(resid[:, 0], resid[:, 1])[0, 1])
    return DgpEstimate(raw, adj, float(g_hat[0]), float(g_hat[1]))
