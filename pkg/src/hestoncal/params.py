"""Parameter vectors, admissible boxes and payoff helpers for the Heston model."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

#: Numerical margin used when the Feller condition is enforced.
FELLER_EPS = 1e-8

#: |rho| is kept strictly below this to preserve a positive definite diffusion.
RHO_CAP = 0.9999


def feller_margin(xi: float, gamma: float, kappa: float) -> float:
    """Return 2*kappa*gamma - xi**2; positive iff the Feller condition holds."""
    return 2.0 * kappa * gamma - xi * xi


def put_payoff_log(K: float, x) -> np.ndarray | float:
    """Put payoff in log-moneyness coordinates, max(K - K*exp(x), 0)."""
    return np.maximum(K - K * np.exp(x), 0.0)


@dataclass(frozen=True)
class ModelParams:
    """PDE parameter vector mu = (xi, rho, gamma, kappa, r).

    xi: volatility of volatility (> 0)
    rho: correlation between asset and variance noise, in (-1, 1)
    gamma: long-run variance (> 0)
    kappa: mean-reversion rate (> 0)
    r: risk-free rate (>= 0, per year)
    """

    xi: float
    rho: float
    gamma: float
    kappa: float
    r: float

    def __post_init__(self):
        if self.xi <= 0.0:
            raise ValueError(f"xi must be positive, got {self.xi}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.kappa <= 0.0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie strictly in (-1, 1), got {self.rho}")
        if self.r < 0.0:
            raise ValueError(f"r must be nonnegative, got {self.r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.xi, self.rho, self.gamma, self.kappa, self.r])


@dataclass(frozen=True)
class CalibParams:
    """Calibration vector Theta = (xi, rho, gamma, kappa, nu0)."""

    xi: float
    rho: float
    gamma: float
    kappa: float
    nu0: float

    def __post_init__(self):
        if self.nu0 <= 0.0:
            raise ValueError(f"nu0 must be positive, got {self.nu0}")

    def as_array(self) -> np.ndarray:
        return np.array([self.xi, self.rho, self.gamma, self.kappa, self.nu0])

    def to_model(self, r: float) -> ModelParams:
        """Drop nu0 and attach the (externally fixed) interest rate."""
        return ModelParams(self.xi, self.rho, self.gamma, self.kappa, r)

    def feller_margin(self) -> float:
        return feller_margin(self.xi, self.gamma, self.kappa)

    def satisfies_feller(self, eps: float = FELLER_EPS) -> bool:
        return self.feller_margin() >= eps

    @staticmethod
    def from_array(theta) -> "CalibParams":
        xi, rho, gamma, kappa, nu0 = (float(v) for v in theta)
        return CalibParams(xi, rho, gamma, kappa, nu0)


@dataclass(frozen=True)
class ParamBox:
    """Componentwise box for a 5-dimensional parameter vector.

    Correlation bounds reaching +-1 are shrunk to +-RHO_CAP so the diffusion
    matrix stays positive definite everywhere in the box.
    """

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != (5,) or hi.shape != (5,):
            raise ValueError("box bounds must have 5 entries each")
        lo = lo.copy()
        hi = hi.copy()
        lo[1] = max(lo[1], -RHO_CAP)
        hi[1] = min(hi[1], RHO_CAP)
        if not np.all(lo < hi):
            raise ValueError("box requires lower < upper componentwise")
        object.__setattr__(self, "lower", tuple(lo))
        object.__setattr__(self, "upper", tuple(hi))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    def contains(self, theta, tol: float = 0.0) -> bool:
        t = np.asarray(theta, dtype=float)
        return bool(np.all(t >= self.lo - tol) and np.all(t <= self.hi + tol))

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)


#: Box used for the PDE parameter mu during reduced-basis training.
DEFAULT_PARAM_BOX = ParamBox(
    lower=(0.1, -0.95, 0.01, 0.1, 0.0001),
    upper=(0.9, 0.95, 0.5, 5.0, 0.8),
)

#: Box used for the calibration vector Theta.
DEFAULT_CALIB_BOX = ParamBox(
    lower=(0.1, -0.95, 0.01, 0.1, 1e-5),
    upper=(0.9, 0.3, 0.5, 5.0, 1.0),
)


def clamp_to_box(theta, box: ParamBox) -> np.ndarray:
    """Componentwise projection of theta onto the box."""
    return np.clip(np.asarray(theta, dtype=float), box.lo, box.hi)


@dataclass(frozen=True)
class OptionSpec:
    """A single put option contract."""

    spot: float
    strike: float
    maturity: float
    style: str = "european"  # "european" | "american"

    def __post_init__(self):
        if self.spot <= 0 or self.strike <= 0 or self.maturity <= 0:
            raise ValueError("spot, strike and maturity must be positive")
        if self.style not in ("european", "american"):
            raise ValueError(f"unknown exercise style {self.style!r}")

    def with_strike(self, strike: float) -> "OptionSpec":
        return replace(self, strike=strike)

    @property
    def log_moneyness(self) -> float:
        return float(np.log(self.spot / self.strike))
