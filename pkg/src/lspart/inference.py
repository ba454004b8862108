"""Heteroskedasticity-robust variances, pointwise intervals, uniform bands.

All inference runs through the sandwich pieces

    Sigma_j = (1/n) sum_i w_i(hc) epshat_{i,j}^2 Pi_j(x_i) Pi_j(x_i)'
    Omega_j(x) = gamma_j(x)' Sigma_j gamma_j(x)

with gamma and Pi matching the estimator kind j. Pointwise intervals use
normal quantiles. Uniform bands calibrate the supremum of the studentized
process over a grid, either by simulating Gaussian vectors through a square
root of Sigma_j (plug-in) or by wild-bootstrap resampling of residuals.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.special

from .errors import (
    ConfigError,
    InvalidGrid,
    LeverageOverflow,
    NonPositiveVariance,
    OutOfSupport,
)

_LEVERAGE_TOL = 1e-8


class HCKind(enum.Enum):
    HC0 = "hc0"
    HC1 = "hc1"
    HC2 = "hc2"
    HC3 = "hc3"


def normal_quantile(p):
    """Inverse standard-normal CDF."""
    return float(scipy.special.ndtri(p))


class VarianceEstimate:
    """Sandwich variance pieces for one estimator kind.

    Binds the fit, the kind j, and the HC residual weighting. The dense
    Sigma matrix is formed lazily; the production Omega route never needs
    it (it accumulates per-observation squares through the sparse design).
    """

    def __init__(self, fit, j, hc=HCKind.HC0):
        self.fit = fit
        self.j = fit.kind.require_j(j)
        self.hc = HCKind(hc)
        self.design = fit.design_for(self.j)
        resid = fit.residuals(self.j)
        n = fit.n
        if self.hc is HCKind.HC0:
            w = np.ones(n)
        elif self.hc is HCKind.HC1:
            K_j = self.design.K
            if n <= K_j:
                raise ConfigError(f"HC1 needs n > K_j = {K_j}")
            w = np.full(n, n / (n - K_j))
        else:
            lev = fit.leverage(self.j)
            if np.any(lev >= 1.0 - _LEVERAGE_TOL):
                i = int(np.argmax(lev))
                raise LeverageOverflow(
                    f"observation {i} has leverage {lev[i]:.6f}; "
                    "HC2/HC3 weights undefined"
                )
            w = 1.0 / (1.0 - lev)
            if self.hc is HCKind.HC3:
                w = w**2
        self.weights = w
        self.wre2 = w * resid**2
        self._sigma = None

    @property
    def sigma_mat(self):
        """Dense Sigma_j, (K_j, K_j); symmetric by construction."""
        if self._sigma is None:
            idx, val = self.design.indices, self.design.values
            K = self.design.K
            out = np.zeros(K * K)
            chunk = 4096
            for s in range(0, self.fit.n, chunk):
                i = idx[s : s + chunk]
                v = val[s : s + chunk] * self.wre2[s : s + chunk, None]
                flat = (i[:, :, None] * K + i[:, None, :]).ravel()
                vals = (v[:, :, None] * val[s : s + chunk][:, None, :]).ravel()
                out += np.bincount(flat, weights=vals, minlength=K * K)
            sig = out.reshape(K, K) / self.fit.n
            self._sigma = 0.5 * (sig + sig.T)  # kill roundoff asymmetry
        return self._sigma

    def scores(self, gamma):
        """s[g, i] = gamma_g' Pi_j(x_i): the band's score matrix, (G, n)."""
        return self.design.rows_times(np.asarray(gamma).T).T

    def omega_from_scores(self, scores):
        """Omega for precomputed scores: (1/n) sum_i wre2_i s_{gi}^2."""
        return (scores**2) @ self.wre2 / self.fit.n

    def omega_many(self, pts, q=None, check=True):
        """Omega_j at many points via the per-observation sparse route."""
        gamma = self.fit.gamma_many(pts, q, self.j)
        omega = self.omega_from_scores(self.scores(gamma))
        if check and np.any(omega <= 0):
            raise NonPositiveVariance(
                "variance estimate is not positive at an evaluation point"
            )
        return omega

    def omega(self, x, q=None):
        return float(self.omega_many(np.atleast_2d(x), q)[0])


def sigma_hat(fit, j, hc=HCKind.HC0):
    """Build the variance pieces for kind ``j``; see VarianceEstimate."""
    return VarianceEstimate(fit, j, hc)


def quadratic_form(gamma, sigma):
    """Row-wise gamma' Sigma gamma for dense inputs; the oracle route."""
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    return np.sum((gamma @ sigma) * gamma, axis=1)


def omega_hat(var, fit, x, q=None, j=None):
    """Omega_j(x) as a scalar; ``fit``/``j`` must match ``var``."""
    if fit is not var.fit:
        raise ConfigError("variance estimate belongs to a different fit")
    if j is not None and int(j) != var.j:
        raise ConfigError(f"variance estimate is for j = {var.j}, got j = {j}")
    return var.omega(x, q)


@dataclass(frozen=True)
class PointwiseResult:
    """Point estimates with standard errors and normal CIs on shared points."""

    points: np.ndarray
    estimates: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    alpha: float

    def t_stat(self, reference=0.0):
        """Studentized distance from a reference value (array-broadcast)."""
        return (self.estimates - reference) / self.se


def pointwise_ci(fit, var, pts, q=None, alpha=0.05, j=None):
    """Normal-quantile pointwise confidence intervals at ``pts``.

    ``j`` defaults to the kind bound into ``var``; passing a different one
    is an error. Raises NonPositiveVariance if any Omega is nonpositive.
    """
    if j is not None and int(j) != var.j:
        raise ConfigError(f"variance estimate is for j = {var.j}, got j = {j}")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    est = fit.estimate_many(pts, q, var.j)
    omega = var.omega_many(pts, q)
    se = np.sqrt(omega / fit.n)
    zq = normal_quantile(1.0 - alpha / 2.0)
    return PointwiseResult(
        points=pts,
        estimates=est,
        se=se,
        ci_lo=est - zq * se,
        ci_hi=est + zq * se,
        alpha=alpha,
    )


@dataclass(frozen=True)
class BandResult:
    """Uniform confidence band over a grid."""

    grid: np.ndarray
    estimates: np.ndarray
    half_widths: np.ndarray
    quantile: float
    alpha: float
    method: str
    draws: int

    @property
    def lo(self):
        return self.estimates - self.half_widths

    @property
    def hi(self):
        return self.estimates + self.half_widths

    def covers(self, truth):
        """Pointwise boolean cover indicators against a truth vector."""
        truth = np.asarray(truth, dtype=float)
        return (self.lo <= truth) & (truth <= self.hi)


def make_grid(bounds, points_per_dim=None):
    """Evenly spaced product grid over the support, endpoints included.

    Default 100 points for d = 1, 20 per axis for d >= 2.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    d = bounds.shape[0]
    if points_per_dim is None:
        points_per_dim = 100 if d == 1 else 20
    g = int(points_per_dim)
    if g < 2:
        raise InvalidGrid(f"need at least 2 grid points per axis, got {g}")
    axes = [np.linspace(bounds[ell, 0], bounds[ell, 1], g) for ell in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _prep_band(fit, var, grid, q, alpha, draws):
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    if int(draws) < 100:
        raise ConfigError(f"need at least 100 draws, got {draws}")
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.shape[0] < 1:
        raise InvalidGrid("empty evaluation grid")
    part = fit.kind.main_spec.partition
    try:
        part.locate(grid)
    except OutOfSupport as exc:
        raise InvalidGrid(str(exc)) from exc
    _warn_grid_spacing(part, grid)
    gamma = fit.gamma_many(grid, q, var.j)
    est = fit.estimate_many(grid, q, var.j)
    scores = var.scores(gamma)
    omega = var.omega_from_scores(scores)
    if np.any(omega <= 0):
        raise NonPositiveVariance("variance not positive somewhere on the grid")
    return grid, gamma, est, scores, omega


def _warn_grid_spacing(part, grid):
    stats = part.mesh_stats()
    for ell in range(part.dim):
        coords = np.unique(grid[:, ell])
        if coords.shape[0] < 2:
            continue
        spacing = float(np.max(np.diff(coords)))
        if spacing > stats["width_max"][ell] / 2 + 1e-12:
            warnings.warn(
                f"grid spacing {spacing:.4g} on axis {ell} exceeds half the "
                f"largest cell width {stats['width_max'][ell]:.4g}; the "
                "supremum may be under-resolved",
                RuntimeWarning,
                stacklevel=3,
            )


def _draw_key(seed, b):
    # one key per draw; a sequence seed lets callers nest (master, rep, ...)
    if np.ndim(seed) == 0:
        return [int(seed), int(b)]
    return [int(s) for s in seed] + [int(b)]


def _sup_quantile(sups, alpha):
    # upper order statistic at rank ceil(B(1-alpha)), 1-based
    sups = np.sort(sups)
    B = sups.shape[0]
    rank = min(max(math.ceil(B * (1.0 - alpha)), 1), B)
    return float(sups[rank - 1])


def band_plugin(fit, var, grid, q=None, alpha=0.05, draws=1000, seed=0, j=None):
    """Uniform band via simulated Gaussian suprema through Sigma^(1/2).

    The square root uses a symmetric eigendecomposition with negative
    eigenvalues clamped to zero: the stacked-basis Sigma of j >= 2 is
    singular by construction, so a Cholesky factor does not exist.
    """
    if j is not None and int(j) != var.j:
        raise ConfigError(f"variance estimate is for j = {var.j}, got j = {j}")
    grid, gamma, est, scores, omega = _prep_band(fit, var, grid, q, alpha, draws)
    evals, evecs = np.linalg.eigh(var.sigma_mat)
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    M = (gamma @ root) / np.sqrt(omega)[:, None]
    K_j = M.shape[1]
    draws = int(draws)
    normals = np.empty((K_j, draws))
    for b in range(draws):
        normals[:, b] = np.random.default_rng(_draw_key(seed, b)).standard_normal(K_j)
    sups = np.max(np.abs(M @ normals), axis=0)
    qhat = _sup_quantile(sups, alpha)
    return BandResult(
        grid=grid,
        estimates=est,
        half_widths=qhat * np.sqrt(omega / fit.n),
        quantile=qhat,
        alpha=alpha,
        method="plugin",
        draws=draws,
    )


def band_bootstrap(
    fit,
    var,
    grid,
    q=None,
    alpha=0.05,
    draws=1000,
    seed=0,
    j=None,
    _weight_hook=None,
):
    """Uniform band via the wild bootstrap with Rademacher weights.

    Each draw reweights residuals by independent signs, restudentizes by
    the redrawn variance, and records the grid supremum. ``_weight_hook``
    replaces the weight sampler in tests (e.g. all-ones reduces the
    statistic to a deterministic direct evaluation).
    """
    if j is not None and int(j) != var.j:
        raise ConfigError(f"variance estimate is for j = {var.j}, got j = {j}")
    grid, gamma, est, scores, omega = _prep_band(fit, var, grid, q, alpha, draws)
    n = fit.n
    resid = fit.residuals(var.j)
    draws = int(draws)
    W = np.empty((n, draws))
    for b in range(draws):
        rng = np.random.default_rng(_draw_key(seed, b))
        if _weight_hook is not None:
            W[:, b] = _weight_hook(rng, n)
        else:
            W[:, b] = rng.integers(0, 2, size=n) * 2.0 - 1.0
    nums = scores @ (W * resid[:, None]) / np.sqrt(n)  # (G, draws)
    if _weight_hook is None:
        # Rademacher squares to one, so the redrawn variance equals omega
        om_star = np.broadcast_to(omega[:, None], nums.shape)
    else:
        om_star = (scores**2) @ (W**2 * var.wre2[:, None]) / n
        if np.any(om_star <= 0):
            raise NonPositiveVariance("bootstrap variance not positive")
    sups = np.max(np.abs(nums) / np.sqrt(om_star), axis=0)
    qhat = _sup_quantile(sups, alpha)
    return BandResult(
        grid=grid,
        estimates=est,
        half_widths=qhat * np.sqrt(omega / fit.n),
        quantile=qhat,
        alpha=alpha,
        method="bootstrap",
        draws=draws,
    )
