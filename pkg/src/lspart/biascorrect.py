"""Leading approximation-error shapes and plug-in bias estimates.

On a cell with lower corner t_L and widths b, write z = (x - t_L) / b for
the unit-cell coordinate. The leading error of the order-m least-squares
fit takes the family-specific form

    lead_{m,q}(x) = - sum_{u in Lambda_m} d^u mu(x) * b^(u-q) * shape(u, q, z)

where shape is a fixed polynomial product on [0,1]^d (Bernoulli factors for
B-splines, scaled shifted-Legendre factors for piecewise polynomials) and
vanishes whenever u - q has a negative entry. Plug-in correction and the
direct-plug-in partition-size selector both consume this module.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .basis import BasisFamily
from .errors import ConfigError, UnsupportedFamily

_MAX_ORDER = 12


@lru_cache(maxsize=None)
def _bernoulli_coeffs(k):
    # ascending-power coefficients, exact: B_k' = k B_{k-1}, int_0^1 B_k = 0
    if k == 0:
        return (Fraction(1),)
    prev = _bernoulli_coeffs(k - 1)
    tail = [Fraction(0)] * (k + 1)
    for j in range(1, k + 1):
        tail[j] = Fraction(k) * prev[j - 1] / j
    tail[0] = -sum(c / (j + 1) for j, c in enumerate(tail) if j > 0)
    return tuple(tail)


def bernoulli_poly(k, z):
    """k-th Bernoulli polynomial, vectorized in ``z``; 0 <= k <= 12."""
    if not 0 <= k <= _MAX_ORDER:
        raise ConfigError(f"Bernoulli order must be in [0, {_MAX_ORDER}], got {k}")
    coeffs = [float(c) for c in reversed(_bernoulli_coeffs(k))]
    return np.polyval(coeffs, np.asarray(z, dtype=float))


def shifted_legendre(k, z):
    """Legendre polynomial rescaled to [0, 1]: P_k(2z - 1); 0 <= k <= 12.

    Evaluated by the three-term recurrence, so values are exact at the
    endpoints (P_k(1) = 1) and stable for all admissible orders.
    """
    if not 0 <= k <= _MAX_ORDER:
        raise ConfigError(f"Legendre order must be in [0, {_MAX_ORDER}], got {k}")
    t = 2.0 * np.asarray(z, dtype=float) - 1.0
    if k == 0:
        return np.ones_like(t)
    prev = np.ones_like(t)
    cur = t.copy()
    for i in range(1, k):
        prev, cur = cur, ((2 * i + 1) * t * cur - i * prev) / (i + 1)
    return cur


@dataclass(frozen=True)
class LeadingErrorModel:
    """Family- and order-specific leading-error shapes.

    ``lambda_set`` holds the derivative multi-indices u with [u] = m whose
    terms survive in the leading error: the axis directions (m, 0, ..),
    (0, m, ..) for B-splines, all compositions of m for piecewise
    polynomials. Haar (order 1) coincides with the piecewise-polynomial
    case; both reduce to the same shapes at m = 1.
    """

    family: BasisFamily
    m: int
    dim: int

    @classmethod
    def for_spec(cls, spec):
        return cls(spec.family, spec.m, spec.dim)

    @property
    def lambda_set(self):
        if self.family is BasisFamily.BSPLINE:
            out = []
            for ell in range(self.dim):
                u = [0] * self.dim
                u[ell] = self.m
                out.append(tuple(u))
            return out
        return [
            u
            for u in itertools.product(range(self.m + 1), repeat=self.dim)
            if sum(u) == self.m
        ]

    def shape_values(self, u, q, z):
        """shape(u, q, z) for unit-cell points ``z`` of shape (n, d)."""
        u = tuple(int(v) for v in u)
        q = (0,) * self.dim if q is None else tuple(int(v) for v in np.atleast_1d(q))
        if sum(u) != self.m:
            raise ConfigError(f"index {u} has total order {sum(u)}, expected {self.m}")
        if self.family is BasisFamily.HAAR and sum(q) > 0:
            raise UnsupportedFamily("Haar leading error has no derivatives")
        if sum(q) > self.m - 1:
            raise ConfigError(f"derivative {q} too high for order {self.m}")
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if any(u[ell] < q[ell] for ell in range(self.dim)):
            return np.zeros(z.shape[0])  # convention: negative index kills term
        out = np.ones(z.shape[0])
        for ell in range(self.dim):
            k = u[ell] - q[ell]
            if self.family is BasisFamily.BSPLINE:
                out *= bernoulli_poly(k, z[:, ell]) / math.factorial(k)
            else:
                out *= shifted_legendre(k, z[:, ell]) / (
                    math.comb(2 * k, k) * math.factorial(k)
                )
        return out

    def weight_values(self, u, q, z, width):
        """b^(u-q) * shape(u, q, z) with per-point cell widths (n, d)."""
        u = tuple(int(v) for v in u)
        q = (0,) * self.dim if q is None else tuple(int(v) for v in np.atleast_1d(q))
        shape = self.shape_values(u, q, z)
        if not np.any(shape):
            return shape
        width = np.atleast_2d(np.asarray(width, dtype=float))
        expo = np.asarray(u, dtype=float) - np.asarray(q, dtype=float)
        return shape * np.prod(width**expo, axis=1)


def shape_fn(model, u, q, z):
    """Scalar convenience wrapper over :meth:`LeadingErrorModel.shape_values`."""
    return float(model.shape_values(u, q, np.atleast_2d(z))[0])


def leading_bias_many(fit, pts, q=None):
    """Plug-in leading error of the order-m fit at many points, (G,).

    Derivatives of the regression function are read off the order-mtilde
    fit; cell geometry comes from the main partition.
    """
    model = fit.leading_error_model
    part = fit.kind.main_spec.partition
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    q = (0,) * part.dim if q is None else tuple(int(v) for v in np.atleast_1d(q))
    cells = part.locate(pts)
    lower, width = part.geometry(cells)
    z = (pts - lower) / width
    out = np.zeros(pts.shape[0])
    for u in model.lambda_set:
        w_u = model.weight_values(u, q, z, width)
        if not np.any(w_u):
            continue
        du_rows = fit.kind.bc_spec.eval_many(pts, u)
        out -= w_u * du_rows.row_dot(fit.beta_bc)
    return out


def leading_bias(fit, x, q=None):
    """Single-point version of :func:`leading_bias_many`."""
    return float(leading_bias_many(fit, np.atleast_2d(x), q)[0])


def projected_bias_term_many(fit, pts, q=None):
    """gamma_{q,0}(pts)' E_n[p(x_i) leadhat_{m,0}(x_i)], vectorized (G,)."""
    rows = fit.kind.main_spec.eval_many(np.atleast_2d(pts), q)
    return rows.row_dot(fit.proj_coef_bias())


def projected_bias_term(fit, x, q=None):
    """Single-point version of :func:`projected_bias_term_many`."""
    return float(projected_bias_term_many(fit, np.atleast_2d(x), q)[0])
