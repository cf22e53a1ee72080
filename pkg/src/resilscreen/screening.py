"""Prescreening methods that find noteworthy initial-disruption scenarios.

Three routes, all returning a ScreeningReport with an exact model-call ledger:

- sequential_search: estimates joint component-failure events order by order,
  prunes everything containing an event that already clears the threshold, and
  keeps the patterns built only from surviving events (conservative superset
  by construction).
- nball_screen: evaluates the model on points drawn uniformly inside the
  standard-normal-space ball whose radius encodes the threshold; every
  distinct non-null initial pattern observed is noteworthy.
- surrogate_adaptive_screen: replaces most ball evaluations with a classifier
  trained on-line; true evaluations are spent only where the classifier is
  least certain, ring by ring from the origin outward.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .probcore import NBallSpec, sample_nball, sample_ring
from .relengines import ConvergenceError, EventQuery
from .scenarios import EventSpec, FailurePattern, ResilienceThreshold
from .surrogate import SurrogateNet, train_surrogate

PREDICTED_PATTERN_WARN_LIMIT = 50


@dataclass
class ScreeningReport:
    noteworthy: list
    excluded_events: list
    n_model_calls: int
    n_surrogate_calls: int
    method: str
    history: list = field(default_factory=list)
    predicted_noteworthy: list | None = None

    def noteworthy_masks(self):
        return {p.failed_mask for p in self.noteworthy}


def _sorted_patterns(n_components, masks):
    patterns = [FailurePattern(n_components, m) for m in masks]
    patterns.sort(key=lambda p: (p.n_failed, p.failed_mask))
    return patterns


# ---------------------------------------------------------------------------
# Sequential search
# ---------------------------------------------------------------------------


def sequential_search(model, random_model, threshold: ResilienceThreshold, engine,
                      seed=0, include_null=False, max_order=None):
    """Order-by-order joint-failure event search.

    Phase 1 estimates each single-component failure event and excludes those
    whose probability already sits below the threshold. Phase m >= 2 forms the
    m-way joint failure events whose every (m-1)-subset survived, estimates
    them, and excludes the trivial ones. A full pattern is noteworthy iff its
    failed set contains no excluded event. The result is a guaranteed superset
    of the scenarios that can violate the resilience requirement.

    engine is callable(query, seed) -> EstimateResult.
    """
    nc = model.n_components
    p_thr = threshold.p_threshold
    calls = 0
    history = []
    excluded: list[frozenset] = []
    event_counter = 0

    def estimate(indices):
        nonlocal calls, event_counter
        event = EventSpec.joint_failure(nc, indices)
        est = engine(EventQuery(target=event), seed + 104729 * event_counter)
        event_counter += 1
        calls += est.n_evaluations
        return est

    kept_prev = []
    phase_events = []
    for k in range(nc):
        est = estimate([k])
        trivial = est.probability < p_thr
        phase_events.append({"components": (k,), "probability": est.probability, "excluded": trivial})
        if trivial:
            excluded.append(frozenset([k]))
        else:
            kept_prev.append(frozenset([k]))
    history.append({"phase": 1, "events": phase_events})
    kept_singles = sorted(s for fs in kept_prev for s in fs)

    order = 2
    kept_all = {1: set(kept_prev)}
    while kept_prev and (max_order is None or order <= max_order):
        candidates = []
        for combo in itertools.combinations(kept_singles, order):
            subsets = [frozenset(c) for c in itertools.combinations(combo, order - 1)]
            if all(s in kept_all.get(order - 1, set()) for s in subsets):
                candidates.append(frozenset(combo))
        if not candidates:
            break
        phase_events = []
        kept_here = set()
        for cand in candidates:
            est = estimate(sorted(cand))
            trivial = est.probability < p_thr
            phase_events.append(
                {"components": tuple(sorted(cand)), "probability": est.probability, "excluded": trivial}
            )
            if trivial:
                excluded.append(cand)
            else:
                kept_here.add(cand)
        history.append({"phase": order, "events": phase_events})
        kept_all[order] = kept_here
        kept_prev = kept_here
        order += 1

    if len(kept_singles) > 22:
        raise ConvergenceError(
            f"{len(kept_singles)} components survive phase 1; pattern enumeration is infeasible"
        )
    noteworthy_masks = []
    min_size = 0 if include_null else 1
    for size in range(min_size, len(kept_singles) + 1):
        for combo in itertools.combinations(kept_singles, size):
            s = set(combo)
            if any(e <= s for e in excluded):
                continue
            noteworthy_masks.append(sum(1 << i for i in combo))

    events = [EventSpec.joint_failure(nc, sorted(e)) for e in excluded]
    return ScreeningReport(
        noteworthy=_sorted_patterns(nc, sorted(set(noteworthy_masks))),
        excluded_events=events,
        n_model_calls=calls,
        n_surrogate_calls=0,
        method="sequential",
        history=history,
    )


# ---------------------------------------------------------------------------
# Uniform ball sampling
# ---------------------------------------------------------------------------


def nball_screen(model, random_model, threshold: ResilienceThreshold, n_samples=10_000,
                 radius_factor=1.0, seed=0):
    """Evaluate the model over a uniform sample of the threshold ball.

    Every distinct non-null initial pattern observed at least once is
    noteworthy. An empty result is a valid outcome, not an error. For a fixed
    seed the sample sequence is prefix-stable, so the noteworthy set grows
    monotonically with n_samples.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if radius_factor < 1.0:
        raise ValueError("radius_factor must be at least 1")
    radius = radius_factor * threshold.radius
    U = sample_nball(NBallSpec(random_model.dim, radius, n_samples), seed)
    X = random_model.to_physical(U)
    resp = model.response(X, need_system=False)
    masks = sorted({int(m) for m in resp.initial_masks} - {0})
    return ScreeningReport(
        noteworthy=_sorted_patterns(model.n_components, masks),
        excluded_events=[],
        n_model_calls=n_samples,
        n_surrogate_calls=0,
        method="nball",
        history=[{"radius": radius, "n_samples": n_samples}],
    )


# ---------------------------------------------------------------------------
# Surrogate-assisted adaptive sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdaptiveConfig:
    """Knobs of the adaptive screen.

    The search ball extends to radius_factor times the threshold radius; the
    initial axis points sit exactly on the threshold sphere. The sampling ring
    advances by (radius_factor * R)/n_rings per iteration with thickness three
    steps, then the whole ball is sampled. Training epochs anneal upward by
    epochs_increment per iteration up to epochs_max.
    """

    radius_factor: float = 1.1
    n_rings: int = 35
    epochs_initial: int = 300
    epochs_increment: int = 10
    epochs_max: int = 500
    batch_size: int = 20
    conv_ratio_tol: float = 1e-3
    probe_count: int = 10_000
    ring_candidates: int = 2_000
    hidden_widths: tuple = (64, 64)
    learning_rate: float = 3e-3
    mutation_crossover: bool = False
    max_iterations: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.radius_factor < 1.0:
            raise ValueError("radius_factor must be at least 1")
        if self.n_rings < 1:
            raise ValueError("n_rings must be at least 1")
        if self.probe_count < 100:
            raise ValueError("probe_count must be at least 100")


def _crossover_point(points, failed, rng, r_max):
    """Coordinate crossover of two failed points, preferring parents with
    distinct failure patterns; the child is re-projected into the ball."""
    fail_rows = np.nonzero(failed.any(axis=1))[0]
    if fail_rows.size < 2:
        return None
    weights = 1 << np.arange(failed.shape[1], dtype=np.int64)
    masks = failed[fail_rows].astype(np.int64) @ weights
    first = fail_rows[rng.integers(fail_rows.size)]
    others = fail_rows[masks != masks[np.nonzero(fail_rows == first)[0][0]]]
    second = int(others[rng.integers(others.size)]) if others.size else int(
        fail_rows[rng.integers(fail_rows.size)]
    )
    pa, pb = points[int(first)], points[second]
    child = np.where(rng.random(points.shape[1]) < 0.5, pa, pb)
    norm = np.linalg.norm(child)
    if norm > r_max:
        child = child * (r_max / norm)
    return child


def convergence_ratio(net: SurrogateNet, dim, probe_count, radius, seed):
    """Fraction of uniformly probed ball points the net classifies as failing
    in at least one component (output < 0.5 means predicted failed)."""
    if probe_count < 100:
        raise ValueError("probe_count must be at least 100")
    pts = sample_nball(NBallSpec(dim, radius, probe_count), seed)
    preds = net.predict(pts)
    return float((preds < 0.5).any(axis=1).mean())


def _predicted_patterns(net, dim, n_components, radius, probe_count, seed):
    pts = sample_nball(NBallSpec(dim, radius, probe_count), seed)
    preds = net.predict(pts)
    failed = preds < 0.5
    weights = 1 << np.arange(n_components, dtype=np.int64)
    masks = sorted({int(m) for m in failed.astype(np.int64) @ weights} - {0})
    return masks


def surrogate_adaptive_screen(model, random_model, threshold: ResilienceThreshold,
                              config: AdaptiveConfig | None = None):
    """Adaptive classifier-guided search for noteworthy patterns.

    Flow: evaluate 2d axis-aligned points on the threshold sphere; train the
    classifier; per iteration draw candidates from the advancing ring, truly
    evaluate only the candidate whose prediction is closest to 0.5, retrain,
    and track the predicted-failure convergence ratio. Stops once the ring has
    covered the ball and the ratio has stabilized.
    """
    config = config or AdaptiveConfig()
    d = random_model.dim
    nc = model.n_components
    R = threshold.radius
    R_star = config.radius_factor * R
    rng = np.random.default_rng(config.seed)

    points = np.zeros((2 * d, d))
    for i in range(d):
        points[2 * i, i] = R
        points[2 * i + 1, i] = -R
    resp = model.response(random_model.to_physical(points), need_system=False)
    failed = resp.margins > 0.0
    labels = 1.0 - failed.astype(float)
    calls = points.shape[0]
    surrogate_calls = 0

    net, _ = train_surrogate(
        points, labels,
        widths=(d, *config.hidden_widths, nc),
        epochs=config.epochs_initial, batch_size=config.batch_size,
        seed=config.seed, lr=config.learning_rate,
    )

    history = []
    prev_ratio = None
    cap = config.max_iterations or 10 * config.n_rings
    step = R_star / config.n_rings
    converged = False
    for t in range(1, cap + 1):
        r_inner = min(t, config.n_rings) * step
        whole_ball = t >= config.n_rings
        if whole_ball:
            lo, hi = 0.0, R_star
        else:
            lo, hi = r_inner, min(r_inner + 3.0 * step, R_star)
        cands = sample_ring(d, lo, hi, config.ring_candidates, rng)
        picked = None
        if config.mutation_crossover and rng.random() < 0.2:
            picked = _crossover_point(points, failed, rng, R_star)
        if picked is None:
            preds = net.predict(cands)
            surrogate_calls += cands.shape[0]
            dist = np.abs(preds - 0.5)
            dist.sort(axis=1)
            primary = dist[:, 0]
            near_tie = primary <= primary.min() + 0.05
            if dist.shape[1] > 1 and near_tie.sum() > 1:
                # among equally uncertain candidates prefer the one uncertain in
                # a second component as well: that is where joint patterns live
                rows = np.nonzero(near_tie)[0]
                picked = cands[rows[int(np.argmin(dist[rows, 1]))]]
            else:
                picked = cands[int(np.argmin(primary))]
        presp = model.response(random_model.to_physical(picked[None, :]), need_system=False)
        calls += 1
        points = np.vstack([points, picked[None, :]])
        failed = np.vstack([failed, presp.margins > 0.0])
        labels = 1.0 - failed.astype(float)
        epochs = min(config.epochs_initial + config.epochs_increment * t, config.epochs_max)
        net, losses = train_surrogate(
            points, labels,
            widths=(d, *config.hidden_widths, nc),
            epochs=epochs, batch_size=config.batch_size,
            seed=config.seed, lr=config.learning_rate,
        )
        # common probe set across iterations: the ratio difference then measures
        # classifier drift, not probe resampling noise
        ratio = convergence_ratio(net, d, config.probe_count, R_star, config.seed + 50_021)
        surrogate_calls += config.probe_count
        history.append({
            "iteration": t,
            "r_inner": r_inner,
            "r_outer": hi,
            "whole_ball": whole_ball,
            "conv_ratio": ratio,
            "epochs": epochs,
            "final_loss": losses[-1],
        })
        if whole_ball and prev_ratio is not None and abs(ratio - prev_ratio) < config.conv_ratio_tol:
            converged = True
            break
        prev_ratio = ratio
    if not converged:
        err = ConvergenceError(f"adaptive screen did not stabilize within {cap} iterations")
        err.history = history
        raise err

    weights = 1 << np.arange(nc, dtype=np.int64)
    observed = sorted({int(m) for m in failed.astype(np.int64) @ weights} - {0})
    predicted = _predicted_patterns(net, d, nc, R_star, config.probe_count, config.seed + 99_991)
    surrogate_calls += config.probe_count
    if len(predicted) > PREDICTED_PATTERN_WARN_LIMIT:
        warnings.warn(
            f"classifier predicts {len(predicted)} distinct failure patterns; "
            "prediction quality is unreliable at this many failure domains",
            RuntimeWarning,
        )
    return ScreeningReport(
        noteworthy=_sorted_patterns(nc, observed),
        excluded_events=[],
        n_model_calls=calls,
        n_surrogate_calls=surrogate_calls,
        method="adaptive",
        history=history,
        predicted_noteworthy=_sorted_patterns(nc, predicted),
    )
