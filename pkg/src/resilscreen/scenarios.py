"""Scenario algebra and resilience indices.

Initial disruption scenarios are fully specified component failure patterns;
the 2^N patterns of an N-component system are mutually exclusive and
collectively exhaustive. Partial events (some components required to fail,
some required to survive, the rest free) drive the sequential screening.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .probcore import ConfigurationError, beta_from_prob, std_normal_cdf, std_normal_inv_cdf

MAX_ENUMERATION = 30


@dataclass(frozen=True)
class FailurePattern:
    """Fully specified failure state: bit k set means component k failed."""

    n_components: int
    failed_mask: int

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be positive")
        if not 0 <= self.failed_mask < (1 << self.n_components):
            raise ValueError("failed_mask out of range for component count")

    @classmethod
    def from_indices(cls, n_components, indices):
        mask = 0
        for i in indices:
            if not 0 <= i < n_components:
                raise ValueError(f"component index {i} out of range")
            mask |= 1 << i
        return cls(n_components, mask)

    @property
    def failed_indices(self):
        return tuple(i for i in range(self.n_components) if self.failed_mask >> i & 1)

    @property
    def n_failed(self):
        return bin(self.failed_mask).count("1")

    @property
    def is_null(self):
        return self.failed_mask == 0

    def label(self):
        """Compact component label, e.g. 'C1C3' (1-based); 'none' for the null pattern."""
        if self.is_null:
            return "none"
        return "".join(f"C{i + 1}" for i in self.failed_indices)


@dataclass(frozen=True)
class EventSpec:
    """Partial failure event: required failures, required survivals, rest free."""

    n_components: int
    required_failed: int
    required_survived: int = 0

    def __post_init__(self):
        full = (1 << self.n_components) - 1
        if not (0 <= self.required_failed <= full and 0 <= self.required_survived <= full):
            raise ValueError("requirement masks out of range")
        if self.required_failed & self.required_survived:
            raise ValueError("a component cannot be required to both fail and survive")

    @classmethod
    def joint_failure(cls, n_components, indices):
        """Event 'all listed components fail' with no survival requirements."""
        return cls(n_components, FailurePattern.from_indices(n_components, indices).failed_mask)

    @classmethod
    def from_pattern(cls, pattern: FailurePattern):
        """Exhaustive event equivalent to a full pattern."""
        full = (1 << pattern.n_components) - 1
        return cls(pattern.n_components, pattern.failed_mask, full & ~pattern.failed_mask)

    @property
    def failed_indices(self):
        return tuple(i for i in range(self.n_components) if self.required_failed >> i & 1)

    @property
    def order(self):
        return bin(self.required_failed).count("1")

    def matches(self, pattern: FailurePattern):
        if pattern.n_components != self.n_components:
            raise ValueError("component count mismatch")
        return (pattern.failed_mask & self.required_failed) == self.required_failed and (
            pattern.failed_mask & self.required_survived
        ) == 0

    def label(self):
        parts = [f"C{i + 1}" for i in self.failed_indices]
        parts += [f"~C{i + 1}" for i in range(self.n_components) if self.required_survived >> i & 1]
        return "".join(parts) if parts else "any"


def event_contains(event: EventSpec, pattern: FailurePattern):
    """True iff the pattern satisfies every requirement of the event."""
    return event.matches(pattern)


def enumerate_scenarios(n_components, include_null=True):
    """All 2^N failure patterns (optionally without the no-failure pattern).

    Refuses for large N; systems beyond the guard must go through the
    screening methods instead of exhaustive enumeration.
    """
    if n_components > MAX_ENUMERATION:
        raise ValueError(
            f"{n_components} components produce 2^{n_components} scenarios; "
            "use a screening method instead of exhaustive enumeration"
        )
    start = 0 if include_null else 1
    return [FailurePattern(n_components, m) for m in range(start, 1 << n_components)]


@dataclass(frozen=True)
class ResilienceThreshold:
    """Per-scenario acceptance level: probability p_threshold and its radius.

    radius = -Phi^{-1}(p_threshold) is both the index-space boundary and the
    standard-normal-space search radius used by the sampling screens.
    """

    p_threshold: float
    radius: float

    @classmethod
    def from_probability(cls, p_threshold):
        if not 0.0 < p_threshold < 1.0:
            raise ConfigurationError("p_threshold must lie in (0, 1)")
        return cls(p_threshold, -std_normal_inv_cdf(p_threshold))

    @classmethod
    def from_de_minimis(cls, p_dm, lambda_h, n_scenarios):
        """Threshold from an annual de minimis risk, hazard rate, and scenario count."""
        if p_dm <= 0.0 or lambda_h <= 0.0 or n_scenarios < 1:
            raise ConfigurationError("need p_dm > 0, lambda_h > 0, n_scenarios >= 1")
        return cls.from_probability(p_dm / (lambda_h * n_scenarios))

    def __post_init__(self):
        if not 0.0 < self.p_threshold < 1.0:
            raise ConfigurationError("p_threshold must lie in (0, 1)")
        if abs(self.radius + std_normal_inv_cdf(self.p_threshold)) > 1e-9:
            raise ConfigurationError("radius inconsistent with p_threshold")


@dataclass(frozen=True)
class ResilienceIndices:
    """Index pair for one scenario plus estimator coefficients of variation.

    pi is None when the scenario was trivially screened (its reliability index
    alone already clears the threshold) and the redundancy side was skipped.
    Unbounded indices (empirically zero probabilities) are +inf with the
    corresponding flag set.
    """

    beta: float
    pi: float | None
    combined: float
    beta_cov: float = 0.0
    pi_cov: float = 0.0

    @property
    def beta_unbounded(self):
        return math.isinf(self.beta)

    @property
    def pi_unbounded(self):
        return self.pi is not None and math.isinf(self.pi)

    @property
    def pi_computed(self):
        return self.pi is not None


def _combined_index(beta, pi):
    if pi is None:
        return beta
    if math.isinf(beta):
        return pi if not math.isinf(pi) else math.inf
    if math.isinf(pi):
        return beta
    product = std_normal_cdf(-beta) * std_normal_cdf(-pi)
    if product <= 0.0:
        return math.inf
    if product >= 1.0:
        return -math.inf
    return -float(std_normal_inv_cdf(product))


def resilience_indices(p_fail, p_cascade=None, beta_cov=0.0, pi_cov=0.0):
    """Build the index triple from an occurrence probability and an optional
    conditional system-failure probability.

    Flagged-zero probabilities (exactly 0.0) become unbounded indices; the
    combined index then falls back to the finite member.
    """
    beta = beta_from_prob(p_fail, allow_degenerate=True)
    pi = None if p_cascade is None else beta_from_prob(p_cascade, allow_degenerate=True)
    return ResilienceIndices(beta, pi, _combined_index(beta, pi), beta_cov, pi_cov)


def check_trivial(beta, threshold: ResilienceThreshold):
    """True iff the occurrence probability alone clears the threshold.

    Strict inequality: a scenario exactly on the boundary is not trivial.
    When true, the redundancy index need not be computed.
    """
    return beta > threshold.radius


def check_resilient(indices: ResilienceIndices, threshold: ResilienceThreshold):
    """True iff Phi(-beta) * Phi(-pi) < p_threshold (strict).

    A scenario with an unbounded index is resilient regardless of the other
    index; boundary equality classifies as not resilient (conservative).
    """
    if indices.beta_unbounded or indices.pi_unbounded:
        return True
    if not indices.pi_computed:
        return indices.beta > threshold.radius
    product = std_normal_cdf(-indices.beta) * std_normal_cdf(-indices.pi)
    return product < threshold.p_threshold


def system_failure_probability(rows, lambda_h):
    """Annual system failure probability lambda_H * sum_i Phi(-pi_i) Phi(-beta_i).

    rows holds (beta, pi) pairs for MECE scenarios; an empty list yields 0.
    """
    total = 0.0
    for beta, pi in rows:
        total += float(std_normal_cdf(-beta)) * float(std_normal_cdf(-pi))
    return lambda_h * total
