"""Probability primitives: standard-normal maps, marginals, Nataf transform, samplers.

Everything here is pure and seed-explicit: samplers take an integer seed and
return identical arrays for identical seeds, so they are safe to call from
concurrent workers with distinct seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr, ndtri


class ConfigurationError(ValueError):
    """Invalid model or configuration input."""


def std_normal_cdf(x):
    """Standard normal CDF, vectorized."""
    return ndtr(x)


def std_normal_inv_cdf(p):
    """Inverse standard normal CDF for p strictly inside (0, 1).

    Accurate to well below 1e-10 absolute error, which keeps indices
    meaningful out to magnitudes of 8 and beyond.
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("probability must lie strictly inside (0, 1)")
    out = ndtri(arr)
    return float(out) if np.isscalar(p) or arr.ndim == 0 else out


def beta_from_prob(p, allow_degenerate=False):
    """Map an event probability to a reliability-style index -Phi^{-1}(p).

    With ``allow_degenerate=True``, p == 0 returns +inf and p == 1 returns
    -inf (flagged unbounded index); otherwise degenerate p raises.
    """
    p = float(p)
    if p == 0.0 or p == 1.0:
        if allow_degenerate:
            return math.inf if p == 0.0 else -math.inf
        raise ValueError("degenerate probability; pass allow_degenerate=True for an unbounded index")
    return -std_normal_inv_cdf(p)


@dataclass(frozen=True)
class Marginal:
    """One-dimensional marginal distribution given by mean and c.o.v.

    kind is "normal" or "lognormal"; mean and cov are in physical units.
    Lognormal parameters satisfy exp(mu_ln + sigma_ln^2 / 2) = mean.
    """

    kind: str
    mean: float
    cov: float

    def __post_init__(self):
        if self.kind not in ("normal", "lognormal"):
            raise ConfigurationError(f"unsupported marginal kind {self.kind!r}")
        if not self.cov > 0.0:
            raise ConfigurationError("cov must be positive")
        if self.kind == "lognormal" and not self.mean > 0.0:
            raise ConfigurationError("lognormal mean must be positive")

    @property
    def std(self):
        return abs(self.mean) * self.cov

    @property
    def sigma_ln(self):
        return math.sqrt(math.log1p(self.cov ** 2))

    @property
    def mu_ln(self):
        return math.log(self.mean) - 0.5 * math.log1p(self.cov ** 2)

    def from_standard(self, z):
        """Map standard-normal values to physical space (exact, no CDF round trip)."""
        z = np.asarray(z, dtype=float)
        if self.kind == "normal":
            return self.mean + self.std * z
        return np.exp(self.mu_ln + self.sigma_ln * z)

    def to_standard(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "normal":
            return (x - self.mean) / self.std
        return (np.log(x) - self.mu_ln) / self.sigma_ln

    def cdf(self, x):
        return ndtr(self.to_standard(x))

    def ppf(self, p):
        return self.from_standard(std_normal_inv_cdf(p))


def _warped_pair_correlation(mi: Marginal, mj: Marginal, rho: float) -> float:
    """Normal-space correlation reproducing physical correlation rho for a pair.

    Closed forms for the three pair kinds used here (no quadrature needed):
    normal-normal is the identity; for a lognormal pair the exact relation is
    ln(1 + rho*d_i*d_j) / (sigma_ln_i * sigma_ln_j); a mixed pair scales by
    d / sqrt(ln(1 + d^2)) on the lognormal side.
    """
    if rho == 0.0:
        return 0.0
    kinds = (mi.kind, mj.kind)
    if kinds == ("normal", "normal"):
        return rho
    if kinds == ("lognormal", "lognormal"):
        return math.log1p(rho * mi.cov * mj.cov) / (mi.sigma_ln * mj.sigma_ln)
    logn = mi if mi.kind == "lognormal" else mj
    return rho * logn.cov / logn.sigma_ln


class RandomModel:
    """Joint input distribution: marginals plus physical-space correlation.

    Maps between physical space and independent standard-normal space through
    the warped (normal-space) correlation matrix and its Cholesky factor.
    """

    def __init__(self, marginals, correlation=None):
        self.marginals = tuple(marginals)
        d = len(self.marginals)
        if d == 0:
            raise ConfigurationError("at least one marginal required")
        if correlation is None:
            correlation = np.eye(d)
        corr = np.asarray(correlation, dtype=float)
        if corr.shape != (d, d):
            raise ConfigurationError(f"correlation must be {d}x{d}")
        if not np.allclose(corr, corr.T, atol=1e-12):
            raise ConfigurationError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise ConfigurationError("correlation matrix must have unit diagonal")
        off = corr[~np.eye(d, dtype=bool)]
        if np.any(np.abs(off) >= 1.0):
            raise ConfigurationError("off-diagonal correlations must satisfy |rho| < 1")
        self.correlation = corr
        warped = np.eye(d)
        for i in range(d):
            for j in range(i + 1, d):
                r = _warped_pair_correlation(self.marginals[i], self.marginals[j], corr[i, j])
                warped[i, j] = warped[j, i] = r
        self.warped_correlation = warped
        try:
            self._chol = np.linalg.cholesky(warped)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError("warped correlation matrix is not positive definite") from exc

    @classmethod
    def independent(cls, marginals):
        return cls(marginals, None)

    @property
    def dim(self):
        return len(self.marginals)

    def to_physical(self, u):
        """Map independent standard-normal u (d,) or (n, d) to physical x."""
        u = np.asarray(u, dtype=float)
        single = u.ndim == 1
        U = np.atleast_2d(u)
        if U.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} columns, got {U.shape[1]}")
        Z = U @ self._chol.T
        X = np.empty_like(Z)
        for i, m in enumerate(self.marginals):
            X[:, i] = m.from_standard(Z[:, i])
        return X[0] if single else X

    def to_standard(self, x):
        """Inverse map: physical x back to independent standard-normal u."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} columns, got {X.shape[1]}")
        Z = np.empty_like(X)
        for i, m in enumerate(self.marginals):
            Z[:, i] = m.to_standard(X[:, i])
        U = solve_triangular(self._chol, Z.T, lower=True).T
        return U[0] if single else U


def sample_lhs(dim, count, seed):
    """Latin hypercube sample in independent standard-normal space.

    Per dimension, exactly one point falls in each of ``count`` equiprobable
    strata of the normal CDF; strata are paired across dimensions by a random
    permutation (no pairing optimization).
    """
    if count < 2:
        raise ValueError("count must be at least 2")
    rng = np.random.default_rng(seed)
    out = np.empty((count, dim))
    for j in range(dim):
        perm = rng.permutation(count)
        quantiles = (perm + rng.random(count)) / count
        out[:, j] = ndtri(quantiles)
    return out


@dataclass(frozen=True)
class NBallSpec:
    """Uniform sampling request over a solid d-dimensional ball."""

    dim: int
    radius: float
    count: int

    def __post_init__(self):
        if not self.radius > 0.0:
            raise ConfigurationError("radius must be positive")
        if self.count < 1:
            raise ConfigurationError("count must be at least 1")
        if self.dim < 1:
            raise ConfigurationError("dim must be at least 1")


def sample_nball(spec: NBallSpec, seed):
    """Uniform points in the closed ball of given radius.

    Direction comes from a normalized Gaussian; the radius CDF is (r/R)^d.
    Draws one (count, dim+1) Gaussian block so that for a fixed seed the
    first n rows of a larger request equal a smaller request (prefix
    stability, used by the screening methods when growing sample sets).
    """
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((spec.count, spec.dim + 1))
    return _ball_points_from_gaussians(g, spec.dim, 0.0, spec.radius)


def _ball_points_from_gaussians(g, dim, r_inner, r_outer):
    """Shared kernel for ball and ring sampling (uniform over the annulus)."""
    dirs = g[:, :dim]
    norms = np.linalg.norm(dirs, axis=1)
    norms[norms == 0.0] = 1.0
    dirs = dirs / norms[:, None]
    u = ndtr(g[:, dim])  # uniform(0,1) derived from the same Gaussian block
    lo, hi = r_inner ** dim, r_outer ** dim
    radii = (lo + u * (hi - lo)) ** (1.0 / dim)
    return dirs * radii[:, None]


def sample_ring(dim, r_inner, r_outer, count, rng):
    """Uniform points in the annulus r_inner <= ||u|| <= r_outer."""
    if not 0.0 <= r_inner <= r_outer:
        raise ValueError("need 0 <= r_inner <= r_outer")
    g = rng.standard_normal((count, dim + 1))
    return _ball_points_from_gaussians(g, dim, r_inner, r_outer)


def sphere_surface_points(dim, radius, rng, count):
    """Uniform points on the sphere of given radius."""
    g = rng.standard_normal((count, dim))
    norms = np.linalg.norm(g, axis=1)
    norms[norms == 0.0] = 1.0
    return g / norms[:, None] * radius
