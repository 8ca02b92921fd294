"""Full-order time stepping for European and American put surfaces.

The European problem is a theta-scheme linear solve per step; the American
problem couples it with the componentwise obstacle through a diagonal
biorthogonal pairing and is solved per step by a primal-dual active set
iteration (semismooth Newton on the complementarity system).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .heston_operator import (
    assemble_operator,
    boundary_data,
    garding_shift_estimate,
    lift_and_rhs,
    obstacle_vector,
)
from .mesh import AssemblyBlocks, FemSpace, evaluate_p1
from .params import ModelParams, put_payoff_log

ACTIVE_SET_MAX_ITER = 50

#: Relative tolerance for accepting a KKT-satisfying iterate whose active
#: set still flickers on round-off ties.
KKT_TOL = 1e-11
SOLVER_TOL = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid of the theta-scheme; t runs from 0 to the horizon."""

    T: float
    I: int
    theta: float = 0.5

    def __post_init__(self):
        if self.T <= 0 or self.I < 1:
            raise ValueError("require T > 0 and I >= 1")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")

    @property
    def dt(self) -> float:
        return self.T / self.I

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.I + 1)

    def step_of(self, maturity: float, tol: float = 1e-9, snap: bool = False) -> int:
        """Grid index of a maturity.

        Maturities must land on grid points unless snap is set, in which case
        the nearest step is used (observed and model prices must then share
        the same grid for the snapping to be consistent).
        """
        k = maturity / self.dt
        k_round = int(round(k))
        if not snap and abs(k - k_round) > tol * max(1.0, abs(k)):
            raise ValueError(
                f"maturity {maturity} is not an integer multiple of dt={self.dt}"
            )
        if not 0 <= k_round <= self.I:
            raise ValueError(f"maturity {maturity} outside the grid horizon")
        return k_round


@dataclass
class PriceSurface:
    """Coefficient trajectories of one unit-strike solve.

    U[k] holds the free-DOF coefficients at time t_k; lam[k] the multiplier
    (American only, lam[0] = 0).  Full nodal values add the Dirichlet lift.
    """

    space: FemSpace
    grid: TimeGrid
    mu: ModelParams
    K: float
    style: str
    U: np.ndarray = field(repr=False)  # (I+1, n_free)
    lam: np.ndarray | None = field(default=None, repr=False)
    boundary: object = None

    def full_values(self, k: int) -> np.ndarray:
        w = self.boundary.lift(self.grid.times()[k])
        w[self.space.free] += self.U[k]
        return w

    def price(self, S0: float, K_i: float, nu0: float, T_i: float) -> float:
        return price_at(self, S0, K_i, nu0, T_i)


def _check_time_step(mu: ModelParams, grid: TimeGrid) -> None:
    lam_a = garding_shift_estimate(mu)
    if grid.theta > 0 and grid.dt >= 1.0 / (grid.theta * lam_a):
        warnings.warn(
            f"time step dt={grid.dt:g} may violate the stability bound "
            f"1/(theta*lambda_a)={1.0 / (grid.theta * lam_a):g}",
            stacklevel=3,
        )


def _initial_condition(space: FemSpace, boundary, K: float) -> np.ndarray:
    """Nodal interpolant of payoff minus lift on the free DOFs.

    The interpolant already lies in the discrete space, so it coincides with
    its V-orthogonal projection.
    """
    payoff = put_payoff_log(K, space.coords[:, 1])
    return (payoff - boundary.lift(0.0))[space.free]


def solve_european(
    mu: ModelParams,
    space: FemSpace,
    blocks: AssemblyBlocks,
    grid: TimeGrid,
    K: float = 1.0,
    boundary=None,
) -> PriceSurface:
    """theta-scheme solve of the European put on the free DOFs.

    boundary overrides the default Dirichlet data (used to study the wall
    truncation convention; production callers leave it at None).
    """
    _check_time_step(mu, grid)
    bnd = boundary if boundary is not None else boundary_data(space, "european", K, mu.r)
    a_free = blocks.restrict(assemble_operator(mu, blocks))
    m_free = blocks.mass_free
    dt, th = grid.dt, grid.theta
    lhs = (m_free / dt + th * a_free).tocsc()
    rhs_op = (m_free / dt - (1.0 - th) * a_free).tocsr()
    lu = spla.splu(lhs)

    U = np.empty((grid.I + 1, space.n_free))
    U[0] = _initial_condition(space, bnd, K)
    for k in range(grid.I):
        f = lift_and_rhs(mu, blocks, bnd, dt, k * dt, th)
        u_next = lu.solve(rhs_op @ U[k] + f)
        if not np.all(np.isfinite(u_next)):
            raise FloatingPointError(f"non-finite European solution at step {k + 1}")
        U[k + 1] = u_next
    return PriceSurface(space=space, grid=grid, mu=mu, K=K, style="european", U=U, boundary=bnd)


def _pdas_step(lhs, rhs, g, d, u0, active0):
    """One backward-Euler-in-k complementarity solve by primal-dual active set.

    Solves lhs @ u - diag(d) lam = rhs, u >= g, lam >= 0, lam.(u - g) = 0.
    Returns (u, lam, active, n_iter); raises on non-convergence.
    """
    n = rhs.size
    active = active0.copy()
    lhs_csr = lhs.tocsr()
    seen: set[bytes] = set()
    merged = False
    for it in range(ACTIVE_SET_MAX_ITER):
        # replace active rows by identity equations u_p = g_p
        inact_d = sp.diags((~active).astype(float))
        act_d = sp.diags(active.astype(float))
        mod = (inact_d @ lhs_csr + act_d).tocsc()
        rhs_mod = np.where(active, g, rhs)
        u = spla.splu(mod).solve(rhs_mod)
        lam = np.zeros(n)
        if active.any():
            resid = (lhs_csr @ u - rhs)[active]
            lam[active] = resid / d[active]
        new_active = (lam + (g - u)) > 0
        if np.array_equal(new_active, active):
            return u, lam, active, it + 1
        # ties at round-off level flip indefinitely; accept once the KKT
        # conditions hold to tolerance even if the set itself still flickers
        scale = max(1.0, np.abs(u).max(), np.abs(g).max())
        if (g - u).max() <= KKT_TOL * scale and lam.min() >= -KKT_TOL * scale:
            return u, np.maximum(lam, 0.0), active, it + 1
        key = new_active.tobytes()
        if key in seen:
            if not merged:
                # break short cycles by restarting from the union of the
                # two competing active sets
                new_active = new_active | active
                merged = True
                seen.clear()
            else:
                return _psor_fallback(lhs_csr, rhs, g, d, u)
        seen.add(key)
        active = new_active
    raise RuntimeError("active-set iteration did not converge")


def _psor_fallback(lhs_csr, rhs, g, d, u_start):
    """Resolve a cycling active-set step with projected SOR."""
    u = psor_step(lhs_csr, rhs, g, u0=np.maximum(u_start, g))
    lam = np.maximum(lhs_csr @ u - rhs, 0.0) / d
    active = (u - g) <= 1e-12 * (1.0 + np.abs(g))
    lam[~active] = 0.0
    return u, lam, active, -1


def solve_american(
    mu: ModelParams,
    space: FemSpace,
    blocks: AssemblyBlocks,
    grid: TimeGrid,
    K: float = 1.0,
) -> PriceSurface:
    """Per-step primal-dual active set solve of the American put system."""
    _check_time_step(mu, grid)
    bnd = boundary_data(space, "american", K, mu.r)
    a_free = blocks.restrict(assemble_operator(mu, blocks))
    m_free = blocks.mass_free
    dt, th = grid.dt, grid.theta
    lhs = (m_free / dt + th * a_free).tocsr()
    rhs_op = (m_free / dt - (1.0 - th) * a_free).tocsr()
    g = obstacle_vector(space, bnd, K)
    d = blocks.d_b_free

    # American lift is static, so f^{k+theta} is time independent
    f = lift_and_rhs(mu, blocks, bnd, dt, 0.0, th)

    n = space.n_free
    U = np.empty((grid.I + 1, n))
    lam_arr = np.zeros((grid.I + 1, n))
    U[0] = _initial_condition(space, bnd, K)
    active = np.zeros(n, dtype=bool)
    for k in range(grid.I):
        rhs = rhs_op @ U[k] + f
        try:
            u, lam, active, _ = _pdas_step(lhs, rhs, g, d, U[k], active)
        except RuntimeError as exc:
            raise RuntimeError(f"active-set non-convergence at step {k + 1}") from exc
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite American solution at step {k + 1}")
        U[k + 1] = u
        lam_arr[k + 1] = lam
    return PriceSurface(
        space=space, grid=grid, mu=mu, K=K, style="american", U=U, lam=lam_arr, boundary=bnd
    )


def psor_step(lhs, rhs, g, omega: float = 1.5, tol: float = 1e-10, max_iter: int = 20000, u0=None):
    """Projected SOR solve of lhs u >= rhs-complementarity with obstacle g.

    Fallback and coarse-scale cross-check for the active set solver; dense
    iteration, use on small systems only.
    """
    A = lhs.toarray()
    n = rhs.size
    u = np.maximum(rhs / np.diag(A), g) if u0 is None else np.maximum(u0, g).copy()
    for _ in range(max_iter):
        u_old = u.copy()
        for i in range(n):
            s = rhs[i] - A[i] @ u + A[i, i] * u[i]
            u[i] = max(u[i] + omega * (s / A[i, i] - u[i]), g[i])
        if np.abs(u - u_old).max() < tol:
            break
    return u


def price_at(
    surface: PriceSurface, S0: float, K_i: float, nu0: float, T_i: float, snap: bool = False
) -> float:
    """Price one quote by point evaluation and strike homogeneity.

    Evaluates the stored unit-strike surface at (nu0, log(S0/K_i)) and the
    step index of T_i, scaled by K_i / K_solve.
    """
    x = float(np.log(S0 / K_i))
    if T_i == 0.0:
        return float(max(K_i - S0, 0.0))
    k = surface.grid.step_of(T_i, snap=snap)
    w = surface.full_values(k)
    value = evaluate_p1(surface.space, w, (nu0, x))
    return value * K_i / surface.K
