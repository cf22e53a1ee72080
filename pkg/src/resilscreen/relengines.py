"""Probability estimators for pattern and event occurrence.

All engines work in independent standard-normal space and map to physical
space through a RandomModel. Binary event indicators are driven by a scalar
margin function so that level-relaxation methods (cross-entropy importance
sampling, subset simulation) have something continuous to climb: the driver is
the minimum over required-failed components of (stress demand - capacity) and
the minimum over required-survived components of the negated margin; the event
holds iff the driver is positive.

Every estimator reports the exact number of per-sample model calls it made.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, ive, ndtr

from .probcore import std_normal_inv_cdf
from .scenarios import (
    EventSpec,
    FailurePattern,
    ResilienceThreshold,
    check_trivial,
    resilience_indices,
)


class ConvergenceError(RuntimeError):
    """An adaptive estimator failed to make progress."""


@dataclass(frozen=True)
class EventQuery:
    """What to estimate.

    Plain form: probability of ``target`` (an EventSpec, or a FailurePattern
    meaning the exhaustive scenario event). Conditional form: probability of
    system failure given the ``conditioning`` pattern, P(F_sys | F_i).
    """

    target: EventSpec | FailurePattern | None = None
    conditioning: FailurePattern | None = None
    want_system_failure: bool = False

    def __post_init__(self):
        if self.conditioning is None and self.target is None and not self.want_system_failure:
            raise ValueError("query must name a target event, a conditioning pattern, or system failure")

    @property
    def is_conditional(self):
        return self.conditioning is not None

    def relaxation_event(self):
        """Event whose driver guides level relaxation."""
        if self.conditioning is not None:
            return EventSpec.from_pattern(self.conditioning)
        if isinstance(self.target, FailurePattern):
            return EventSpec.from_pattern(self.target)
        return self.target


@dataclass
class EstimateResult:
    probability: float
    cov: float
    n_evaluations: int
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        if self.n_evaluations < 1:
            raise ValueError("n_evaluations must be at least 1")

    @property
    def flagged_zero(self):
        return self.probability == 0.0


def required_mcs_samples(p_target, eta):
    """Sample count for a target probability at a target estimator c.o.v.:
    N = ceil((1 - p) / (eta^2 * p))."""
    if not 0.0 < p_target < 1.0:
        raise ValueError("p_target must lie in (0, 1)")
    if eta <= 0.0:
        raise ValueError("eta must be positive")
    return max(1, math.ceil((1.0 - p_target) / (eta * eta * p_target)))


def event_driver(margins, event: EventSpec):
    """Scalar margin: positive iff all required failures and survivals hold."""
    n = margins.shape[0]
    g = np.full(n, np.inf)
    failed = list(event.failed_indices)
    if failed:
        g = margins[:, failed].min(axis=1)
    survived = [i for i in range(event.n_components) if event.required_survived >> i & 1]
    if survived:
        g = np.minimum(g, (-margins[:, survived]).min(axis=1))
    return g


def _pattern_indicator(masks, pattern: FailurePattern):
    return masks == pattern.failed_mask


def _event_indicator(masks, margins, target):
    if isinstance(target, FailurePattern):
        return _pattern_indicator(masks, target)
    return event_driver(margins, target) > 0.0


def _binomial_cov(hits, n):
    if hits == 0:
        return math.inf
    p = hits / n
    if p >= 1.0:
        return 0.0
    return math.sqrt((1.0 - p) / (n * p))


# ---------------------------------------------------------------------------
# Plain Monte Carlo
# ---------------------------------------------------------------------------


def mcs_estimate(model, random_model, query: EventQuery, n, seed, batch_size=200_000):
    """Crude Monte Carlo indicator mean.

    Conditional queries are answered as the ratio of joint to marginal counts
    over the same sample set. Zero hits return a flagged-zero probability with
    an infinite-c.o.v. marker instead of raising.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    need_sys = query.want_system_failure or query.is_conditional
    hits = 0
    den_hits = 0
    remaining = n
    while remaining > 0:
        b = min(batch_size, remaining)
        remaining -= b
        U = rng.standard_normal((b, random_model.dim))
        X = random_model.to_physical(U)
        resp = model.response(X, need_system=need_sys)
        if query.is_conditional:
            in_pattern = _pattern_indicator(resp.initial_masks, query.conditioning)
            den_hits += int(in_pattern.sum())
            hits += int((in_pattern & resp.system).sum())
        elif query.want_system_failure:
            hits += int(resp.system.sum())
        else:
            hits += int(_event_indicator(resp.initial_masks, resp.margins, query.target).sum())
    if query.is_conditional:
        if den_hits == 0:
            return EstimateResult(0.0, math.inf, n, "mcs", {"denominator_hits": 0})
        p = hits / den_hits
        return EstimateResult(p, _binomial_cov(hits, den_hits), n, "mcs", {"denominator_hits": den_hits})
    p = hits / n
    return EstimateResult(p, _binomial_cov(hits, n), n, "mcs", {})


def mcs_survey(model, random_model, n, seed, batch_size=200_000):
    """One shared Monte Carlo batch post-processed for every pattern at once.

    Returns (counts, joint_system_counts, n) with dictionaries keyed by the
    packed failure mask. This is the budget-efficient route when many scenario
    indices are needed from the same model.
    """
    rng = np.random.default_rng(seed)
    counts: dict[int, int] = {}
    sys_counts: dict[int, int] = {}
    remaining = n
    while remaining > 0:
        b = min(batch_size, remaining)
        remaining -= b
        U = rng.standard_normal((b, random_model.dim))
        X = random_model.to_physical(U)
        resp = model.response(X, need_system=True)
        masks = resp.initial_masks
        unique, inverse = np.unique(masks, return_inverse=True)
        tallies = np.bincount(inverse)
        sys_tallies = np.bincount(inverse, weights=resp.system.astype(float))
        for mk, c, sc in zip(unique, tallies, sys_tallies):
            counts[int(mk)] = counts.get(int(mk), 0) + int(c)
            sys_counts[int(mk)] = sys_counts.get(int(mk), 0) + int(round(sc))
    return counts, sys_counts, n


# ---------------------------------------------------------------------------
# Cross-entropy adaptive importance sampling
# ---------------------------------------------------------------------------


def _log_std_normal(U):
    return -0.5 * (U * U).sum(axis=1) - 0.5 * U.shape[1] * math.log(2.0 * math.pi)


class _StandardNormalProposal:
    def __init__(self, dim):
        self.dim = dim

    def sample(self, rng, n):
        return rng.standard_normal((n, self.dim))

    def log_density(self, U):
        return _log_std_normal(U)


class _DefensiveProposal:
    """Mixture of a fitted proposal with the standard normal.

    The standard-normal share bounds the importance weights by 1/share, which
    keeps the estimator and its variance estimate well behaved when the fitted
    component under-covers part of the event region.
    """

    def __init__(self, fitted, dim, share=0.1):
        self.fitted = fitted
        self.dim = dim
        self.share = share

    def sample(self, rng, n):
        from_base = rng.random(n) < self.share
        out = np.empty((n, self.dim))
        nb = int(from_base.sum())
        if nb:
            out[from_base] = rng.standard_normal((nb, self.dim))
        if n - nb:
            out[~from_base] = self.fitted.sample(rng, n - nb)
        return out

    def log_density(self, U):
        a = math.log(self.share) + _log_std_normal(U)
        b = math.log1p(-self.share) + self.fitted.log_density(U)
        return np.logaddexp(a, b)


class _GaussianMixtureProposal:
    def __init__(self, weights, means, covs):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        self.covs = np.asarray(covs, dtype=float)
        self._chols = np.linalg.cholesky(self.covs)
        self._logdets = 2.0 * np.log(np.diagonal(self._chols, axis1=1, axis2=2)).sum(axis=1)

    def sample(self, rng, n):
        k = rng.choice(len(self.weights), size=n, p=self.weights)
        g = rng.standard_normal((n, self.means.shape[1]))
        return self.means[k] + np.einsum("nij,nj->ni", self._chols[k], g)

    def log_density(self, U):
        n, d = U.shape
        comps = np.empty((len(self.weights), n))
        for j in range(len(self.weights)):
            diff = U - self.means[j]
            sol = np.linalg.solve(self._chols[j], diff.T)
            quad = (sol * sol).sum(axis=0)
            comps[j] = (
                math.log(self.weights[j])
                - 0.5 * quad
                - 0.5 * self._logdets[j]
                - 0.5 * d * math.log(2.0 * math.pi)
            )
        mx = comps.max(axis=0)
        return mx + np.log(np.exp(comps - mx).sum(axis=0))


_COV_EIG_FLOOR = 0.05**2


def _floor_covariance(cov):
    """Keep every principal variance above a small floor; tiny spike components
    otherwise stall the level climb on hard tails."""
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, _COV_EIG_FLOOR)
    return (vecs * vals) @ vecs.T


def _fit_gaussian_mixture(U, W, k, rng, max_iter=50, tol=1e-6):
    """Weighted maximum-likelihood mixture fit (EM with importance weights)."""
    n, d = U.shape
    k = max(1, min(k, n))
    Wn = W / W.sum()
    idx = rng.choice(n, size=k, replace=False, p=Wn)
    means = U[idx].copy()
    base_mean = Wn @ U
    diff = U - base_mean
    base_cov = _floor_covariance((Wn[:, None] * diff).T @ diff + 1e-6 * np.eye(d))
    covs = np.repeat(base_cov[None, :, :], k, axis=0)
    weights = np.full(k, 1.0 / k)
    prev_ll = -math.inf
    for _ in range(max_iter):
        prop = _GaussianMixtureProposal(weights, means, covs=covs)
        logcomp = np.empty((k, n))
        for j in range(k):
            dj = U - means[j]
            sol = np.linalg.solve(prop._chols[j], dj.T)
            quad = (sol * sol).sum(axis=0)
            logcomp[j] = (
                math.log(weights[j]) - 0.5 * quad - 0.5 * prop._logdets[j] - 0.5 * d * math.log(2 * math.pi)
            )
        mx = logcomp.max(axis=0)
        lse = mx + np.log(np.exp(logcomp - mx).sum(axis=0))
        ll = float(W @ lse)
        resp = np.exp(logcomp - lse)
        a = resp * W[None, :]
        nk = a.sum(axis=1)
        if np.any(nk <= 1e-12 * W.sum()):
            keep = nk > 1e-12 * W.sum()
            means, covs, nk = means[keep], covs[keep], nk[keep]
            weights = nk / nk.sum()
            k = len(nk)
            continue
        means = (a @ U) / nk[:, None]
        for j in range(k):
            dj = U - means[j]
            covs[j] = _floor_covariance((a[j][:, None] * dj).T @ dj / nk[j] + 1e-6 * np.eye(d))
        weights = nk / nk.sum()
        if abs(ll - prev_ll) <= tol * (1.0 + abs(ll)):
            break
        prev_ll = ll
    return _GaussianMixtureProposal(weights, means, covs=covs)


_LOG_2PI = math.log(2.0 * math.pi)


def _log_sphere_area(d):
    return math.log(2.0) + 0.5 * d * math.log(math.pi) - gammaln(0.5 * d)


def _vmf_log_const(d, kappa):
    if kappa < 1e-8:
        return -_log_sphere_area(d)
    nu = 0.5 * d - 1.0
    log_bessel = math.log(ive(nu, kappa)) + kappa
    return nu * math.log(kappa) - 0.5 * d * _LOG_2PI - log_bessel


def _sample_vmf(rng, mu, kappa, n):
    """von Mises-Fisher directions by Wood's rejection scheme."""
    d = mu.size
    if kappa < 1e-8:
        g = rng.standard_normal((n, d))
        return g / np.linalg.norm(g, axis=1, keepdims=True)
    b = (d - 1.0) / (2.0 * kappa + math.sqrt(4.0 * kappa * kappa + (d - 1.0) ** 2))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (d - 1.0) * math.log(1.0 - x0 * x0)
    ws = np.empty(n)
    filled = 0
    while filled < n:
        m = max(32, 2 * (n - filled))
        z = rng.beta(0.5 * (d - 1.0), 0.5 * (d - 1.0), size=m)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        accept = kappa * w + (d - 1.0) * np.log1p(-x0 * w) - c >= np.log(rng.random(m))
        take = min(int(accept.sum()), n - filled)
        ws[filled : filled + take] = w[accept][:take]
        filled += take
    v = rng.standard_normal((n, d))
    v -= (v @ mu)[:, None] * mu[None, :]
    norms = np.linalg.norm(v, axis=1)
    norms[norms == 0.0] = 1.0
    v /= norms[:, None]
    return ws[:, None] * mu[None, :] + np.sqrt(np.clip(1.0 - ws * ws, 0.0, None))[:, None] * v


class _VmfNakagamiMixtureProposal:
    """Direction on the unit sphere from a vMF mixture; radius from a Nakagami
    fit per component. Built for high-dimensional tail sampling where full
    Gaussian mixtures lose track of the important direction."""

    def __init__(self, weights, mus, kappas, shapes, omegas):
        self.weights = np.asarray(weights, dtype=float)
        self.mus = np.asarray(mus, dtype=float)
        self.kappas = np.asarray(kappas, dtype=float)
        self.shapes = np.asarray(shapes, dtype=float)
        self.omegas = np.asarray(omegas, dtype=float)

    @property
    def dim(self):
        return self.mus.shape[1]

    def sample(self, rng, n):
        k = rng.choice(len(self.weights), size=n, p=self.weights)
        d = self.dim
        out = np.empty((n, d))
        for j in range(len(self.weights)):
            rows = np.nonzero(k == j)[0]
            if rows.size == 0:
                continue
            dirs = _sample_vmf(rng, self.mus[j], float(self.kappas[j]), rows.size)
            radii = np.sqrt(rng.gamma(self.shapes[j], self.omegas[j] / self.shapes[j], size=rows.size))
            out[rows] = dirs * radii[:, None]
        return out

    def log_density(self, U):
        d = self.dim
        r = np.linalg.norm(U, axis=1)
        r = np.maximum(r, 1e-300)
        a = U / r[:, None]
        comps = np.empty((len(self.weights), U.shape[0]))
        for j in range(len(self.weights)):
            lvmf = _vmf_log_const(d, float(self.kappas[j])) + self.kappas[j] * (a @ self.mus[j])
            m, om = float(self.shapes[j]), float(self.omegas[j])
            lnak = (
                math.log(2.0)
                + m * math.log(m / om)
                - gammaln(m)
                + (2.0 * m - 1.0) * np.log(r)
                - m * r * r / om
            )
            comps[j] = math.log(self.weights[j]) + lvmf + lnak - (d - 1.0) * np.log(r)
        mx = comps.max(axis=0)
        return mx + np.log(np.exp(comps - mx).sum(axis=0))


def _banerjee_kappa(rbar, d):
    rbar = min(max(rbar, 1e-9), 1.0 - 1e-9)
    return max(1e-2, min(1e5, rbar * (d - rbar * rbar) / (1.0 - rbar * rbar)))


def _fit_vmf_mixture(U, W, k, rng, max_iter=50, tol=1e-6):
    n, d = U.shape
    k = max(1, min(k, n))
    r = np.linalg.norm(U, axis=1)
    r = np.maximum(r, 1e-12)
    dirs = U / r[:, None]
    Wn = W / W.sum()
    idx = rng.choice(n, size=k, replace=False, p=Wn)
    mus = dirs[idx].copy()
    kappas = np.full(k, 10.0)
    omega0 = float(Wn @ (r * r))
    var0 = float(Wn @ (r * r - omega0) ** 2) + 1e-12
    shapes = np.full(k, max(0.5, min(200.0, omega0 * omega0 / var0)))
    omegas = np.full(k, omega0)
    weights = np.full(k, 1.0 / k)
    prev_ll = -math.inf
    for _ in range(max_iter):
        prop = _VmfNakagamiMixtureProposal(weights, mus, kappas, shapes, omegas)
        comps = np.empty((k, n))
        for j in range(k):
            lvmf = _vmf_log_const(d, float(kappas[j])) + kappas[j] * (dirs @ mus[j])
            m, om = float(shapes[j]), float(omegas[j])
            lnak = (
                math.log(2.0) + m * math.log(m / om) - gammaln(m) + (2 * m - 1) * np.log(r) - m * r * r / om
            )
            comps[j] = math.log(weights[j]) + lvmf + lnak
        mx = comps.max(axis=0)
        lse = mx + np.log(np.exp(comps - mx).sum(axis=0))
        ll = float(W @ lse)
        resp = np.exp(comps - lse)
        a = resp * W[None, :]
        nk = a.sum(axis=1)
        if np.any(nk <= 1e-12 * W.sum()):
            keep = nk > 1e-12 * W.sum()
            mus, kappas, shapes, omegas, nk = mus[keep], kappas[keep], shapes[keep], omegas[keep], nk[keep]
            weights = nk / nk.sum()
            k = len(nk)
            continue
        for j in range(k):
            s = a[j] @ dirs
            norm_s = np.linalg.norm(s)
            if norm_s > 0:
                mus[j] = s / norm_s
                kappas[j] = _banerjee_kappa(norm_s / nk[j], d)
            om = float(a[j] @ (r * r) / nk[j])
            var = float(a[j] @ (r * r - om) ** 2 / nk[j]) + 1e-12
            omegas[j] = max(om, 1e-9)
            shapes[j] = max(0.5, min(200.0, om * om / var))
        weights = nk / nk.sum()
        if abs(ll - prev_ll) <= tol * (1.0 + abs(ll)):
            break
        prev_ll = ll
    return _VmfNakagamiMixtureProposal(weights, mus, kappas, shapes, omegas)


def _is_ratio_cov(W, num_ind, den_ind):
    """Delta-method c.o.v. of an importance-sampling ratio estimator."""
    n = len(W)
    num = W * num_ind
    den = W * den_ind
    mn, md = num.mean(), den.mean()
    if md <= 0.0 or mn <= 0.0:
        return math.inf
    vn = num.var() / n
    vd = den.var() / n
    cnd = float(np.cov(num, den, bias=True)[0, 1]) / n
    rel_var = vn / mn**2 + vd / md**2 - 2.0 * cnd / (mn * md)
    return math.sqrt(max(rel_var, 0.0))


def ce_ais_estimate(
    model,
    random_model,
    query: EventQuery,
    family="gaussian_mixture",
    n_per_level=1000,
    n_mixtures=3,
    seed=0,
    target_cov=0.1,
    elite_fraction=0.1,
    max_levels=50,
    defensive_share=0.1,
):
    """Cross-entropy adaptive importance sampling in standard-normal space.

    Levels relax the target through driver quantiles while no event samples
    exist; each level refits the mixture proposal by weighted maximum
    likelihood with importance weights (true density / sampling density).
    Terminates once the event is reached and the estimator c.o.v. drops to
    ``target_cov`` (or the level budget runs out). The final estimate is the
    plain importance-sampling mean over the last batch.
    """
    if family not in ("gaussian_mixture", "vmf_mixture"):
        raise ValueError(f"unsupported mixture family {family!r}")
    if n_mixtures < 1:
        raise ValueError("n_mixtures must be at least 1")
    rng = np.random.default_rng(seed)
    d = random_model.dim
    event = query.relaxation_event()
    need_sys = query.is_conditional or query.want_system_failure
    proposal = _StandardNormalProposal(d)
    fit = _fit_gaussian_mixture if family == "gaussian_mixture" else _fit_vmf_mixture
    calls = 0
    reached = False
    reached_levels = 0
    gammas = []
    last = None
    for level in range(max_levels):
        U = proposal.sample(rng, n_per_level)
        X = random_model.to_physical(U)
        resp = model.response(X, need_system=need_sys)
        calls += n_per_level
        g = event_driver(resp.margins, event)
        logW = _log_std_normal(U) - proposal.log_density(U)
        W = np.exp(logW)
        if not reached:
            # threshold of the relaxed event {g >= gamma}; it rises toward 0
            gamma = float(np.quantile(g, 1.0 - elite_fraction))
            if gamma >= 0.0:
                reached = True
                gamma = 0.0
        else:
            gamma = 0.0
        gammas.append(gamma)
        if reached:
            reached_levels += 1
            ind = g > 0.0
            if query.is_conditional:
                joint = ind & resp.system
                den = float(np.mean(W * ind))
                num = float(np.mean(W * joint))
                p = num / den if den > 0.0 else 0.0
                cov = _is_ratio_cov(W, joint.astype(float), ind.astype(float))
            else:
                vals = W * ind
                p = float(vals.mean())
                cov = math.inf if p <= 0.0 else float(vals.std() / (math.sqrt(n_per_level) * p))
            p = min(max(p, 0.0), 1.0)
            est = EstimateResult(
                p, cov, calls, f"ce_ais_{'gm' if family == 'gaussian_mixture' else 'vmfm'}",
                {"levels": level + 1, "gammas": list(gammas)},
            )
            # accept only when the batch came from an event-conditioned refit,
            # hits the c.o.v. target, and agrees with the previous reached
            # estimate; lone small-c.o.v. batches from a spiky proposal lie
            consistent = False
            if last is not None and last.probability > 0.0 and p > 0.0:
                sd = math.hypot(cov * p, last.cov * last.probability)
                consistent = abs(p - last.probability) <= 2.0 * sd
            last = est
            if reached_levels >= 2 and cov <= target_cov and consistent:
                return est
            elites = ind if int(ind.sum()) >= 2 else g >= float(np.quantile(g, 1.0 - elite_fraction))
        else:
            elites = g >= gamma
        n_elite = int(elites.sum())
        if n_elite < 2:
            if last is not None:
                return last
            raise ConvergenceError(
                f"no usable elite samples at level {level} (gamma={gamma:.4g}); "
                "increase n_per_level or loosen the event"
            )
        fitted = fit(U[elites], np.maximum(W[elites], 1e-300), n_mixtures, rng)
        proposal = _DefensiveProposal(fitted, d, defensive_share) if defensive_share > 0 else fitted
    if last is not None:
        return last
    raise ConvergenceError(f"event not reached within {max_levels} levels; last gamma={gammas[-1]:.4g}")


# ---------------------------------------------------------------------------
# Subset simulation
# ---------------------------------------------------------------------------


def _level_cov(indicators, p_hat, n_chains):
    """Au-Beck conditional-level c.o.v. factor including chain correlation."""
    N = indicators.size
    if p_hat <= 0.0:
        return math.inf
    base = (1.0 - p_hat) / (p_hat * N)
    chains = indicators.reshape(n_chains, -1)
    L = chains.shape[1]
    gamma = 0.0
    if L > 1:
        centered = chains - p_hat
        var = p_hat * (1.0 - p_hat)
        if var > 0:
            for lag in range(1, L):
                r = (centered[:, :-lag] * centered[:, lag:]).mean() / var
                gamma += 2.0 * (1.0 - lag / L) * r
    return base * (1.0 + max(gamma, 0.0))


def subset_sim_estimate(
    model,
    random_model,
    query: EventQuery,
    n_per_level=1000,
    p0=0.1,
    seed=0,
    max_levels=20,
    proposal_corr=0.8,
):
    """Subset simulation with component-wise conditional-sampling MCMC.

    Intermediate levels peel off the top p0 quantile of the event driver;
    seeds are the level's elite samples, and chains advance by the
    conditional-normal proposal u* = a u + sqrt(1 - a^2) xi accepted when the
    candidate stays above the level threshold.
    """
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must lie in (0, 1)")
    n_seeds = int(round(n_per_level * p0))
    if n_seeds < 10:
        raise ValueError("n_per_level * p0 must be at least 10")
    rng = np.random.default_rng(seed)
    d = random_model.dim
    event = query.relaxation_event()
    need_sys = query.is_conditional or query.want_system_failure
    a = proposal_corr
    b = math.sqrt(1.0 - a * a)

    def run(U):
        X = random_model.to_physical(U)
        return model.response(X, need_system=need_sys)

    U = rng.standard_normal((n_per_level, d))
    resp = run(U)
    g = event_driver(resp.margins, event)
    system = resp.system
    calls = n_per_level
    cov_sq = 0.0
    gamma_prev = -math.inf
    level = 0
    thresholds = []
    while True:
        n_here = g.size
        # relaxed-event threshold rises toward 0; >= 0 means the event itself
        # already holds conditional probability at least p0
        gamma = float(np.quantile(g, 1.0 - p0))
        if gamma >= 0.0:
            ind = g > 0.0
            p_final = float(ind.mean())
            if p_final <= 0.0:
                return EstimateResult(
                    0.0, math.inf, calls, "subset", {"levels": level + 1, "thresholds": thresholds}
                )
            if level == 0:
                cov_sq += (1.0 - p_final) / (p_final * n_here)
            else:
                cov_sq += _level_cov(ind.astype(float), p_final, n_seeds)
            p = (p0**level) * p_final
            diagnostics = {"levels": level + 1, "thresholds": thresholds + [0.0]}
            if query.is_conditional:
                sysflags = system[ind]
                hits = int(sysflags.sum())
                pc = hits / int(ind.sum())
                return EstimateResult(
                    pc, _binomial_cov(hits, int(ind.sum())), calls, "subset",
                    diagnostics | {"conditional_samples": int(ind.sum())},
                )
            return EstimateResult(min(p, 1.0), math.sqrt(cov_sq), calls, "subset", diagnostics)
        if gamma <= gamma_prev:
            raise ConvergenceError(f"driver quantile stalled at level {level} (gamma={gamma:.4g})")
        ind_level = (g >= gamma).astype(float)
        if level == 0:
            cov_sq += (1.0 - p0) / (p0 * n_here)
        else:
            cov_sq += _level_cov(ind_level, p0, n_seeds)
        gamma_prev = gamma
        thresholds.append(gamma)
        level += 1
        if level >= max_levels:
            raise ConvergenceError(f"event not reached within {max_levels} subset levels")
        order = np.argsort(g)[::-1]
        seeds = U[order[:n_seeds]]
        seed_g = g[order[:n_seeds]]
        seed_sys = system[order[:n_seeds]] if need_sys else None
        steps = max(2, n_per_level // n_seeds)
        chain_U = np.empty((n_seeds, steps, d))
        chain_g = np.empty((n_seeds, steps))
        chain_sys = np.zeros((n_seeds, steps), dtype=bool)
        chain_U[:, 0] = seeds
        chain_g[:, 0] = seed_g
        if need_sys:
            chain_sys[:, 0] = seed_sys
        cur_U, cur_g = seeds.copy(), seed_g.copy()
        cur_sys = seed_sys.copy() if need_sys else None
        for t in range(1, steps):
            cand = a * cur_U + b * rng.standard_normal(cur_U.shape)
            cresp = run(cand)
            calls += cand.shape[0]
            cg = event_driver(cresp.margins, event)
            accept = cg >= gamma
            cur_U = np.where(accept[:, None], cand, cur_U)
            cur_g = np.where(accept, cg, cur_g)
            if need_sys:
                cur_sys = np.where(accept, cresp.system, cur_sys)
                chain_sys[:, t] = cur_sys
            chain_U[:, t] = cur_U
            chain_g[:, t] = cur_g
        # chain-major layout: row i holds chain i, so lag correlations read off rows
        U = chain_U.reshape(-1, d)
        g = chain_g.reshape(-1)
        system = chain_sys.reshape(-1) if need_sys else None


# ---------------------------------------------------------------------------
# Scenario index estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioAssessment:
    pattern: FailurePattern
    indices: object  # ResilienceIndices


def make_engine(name, model, random_model, options=None):
    """Bind an engine by name to a (model, random_model) pair.

    Returns callable(query, seed) -> EstimateResult. Supported names: "mcs",
    "ce_gm", "ce_vmfm", "subset".
    """
    options = dict(options or {})
    if name == "mcs":
        n = int(options.pop("n", 100_000))

        def run(query, seed):
            return mcs_estimate(model, random_model, query, n, seed, **options)

    elif name in ("ce_gm", "ce_vmfm"):
        family = "gaussian_mixture" if name == "ce_gm" else "vmf_mixture"

        def run(query, seed):
            return ce_ais_estimate(model, random_model, query, family=family, seed=seed, **options)

    elif name == "subset":

        def run(query, seed):
            return subset_sim_estimate(model, random_model, query, seed=seed, **options)

    else:
        raise ValueError(f"unknown engine {name!r}")
    return run


def estimate_scenario_indices(
    model,
    random_model,
    patterns,
    threshold: ResilienceThreshold,
    engine="mcs",
    engine_options=None,
    seed=0,
):
    """Reliability index per scenario, redundancy index only where needed.

    The redundancy side is skipped for scenarios whose reliability index alone
    clears the threshold. Returns (assessments sorted ascending by combined
    index, total model calls). engine="mcs_survey" answers every scenario from
    one shared sample batch; other engines run per scenario.
    """
    patterns = list(patterns)
    if not patterns:
        return [], 0
    total_calls = 0
    rows = []
    if engine == "mcs_survey":
        n = int((engine_options or {}).get("n", 1_000_000))
        counts, sys_counts, calls = mcs_survey(model, random_model, n, seed)
        total_calls += calls
        for pattern in patterns:
            c = counts.get(pattern.failed_mask, 0)
            p = c / n
            beta_cov = _binomial_cov(c, n)
            beta = -std_normal_inv_cdf(p) if 0.0 < p < 1.0 else math.inf
            if p == 0.0 or check_trivial(beta, threshold):
                rows.append(ScenarioAssessment(pattern, resilience_indices(p, None, beta_cov)))
                continue
            sc = sys_counts.get(pattern.failed_mask, 0)
            pc = sc / c
            rows.append(
                ScenarioAssessment(pattern, resilience_indices(p, pc, beta_cov, _binomial_cov(sc, c)))
            )
    else:
        run = engine if callable(engine) else make_engine(engine, model, random_model, engine_options)
        for i, pattern in enumerate(patterns):
            est = run(EventQuery(target=pattern), seed + 7919 * i)
            total_calls += est.n_evaluations
            beta = math.inf if est.flagged_zero else -std_normal_inv_cdf(est.probability)
            if est.flagged_zero or check_trivial(beta, threshold):
                rows.append(
                    ScenarioAssessment(pattern, resilience_indices(est.probability, None, est.cov))
                )
                continue
            est_pi = run(EventQuery(conditioning=pattern), seed + 7919 * i + 3571)
            total_calls += est_pi.n_evaluations
            rows.append(
                ScenarioAssessment(
                    pattern,
                    resilience_indices(est.probability, est_pi.probability, est.cov, est_pi.cov),
                )
            )
    rows.sort(key=lambda rw: (rw.indices.combined, rw.pattern.failed_mask))
    return rows, total_calls
