"""Deterministic structural evaluators.

Each model maps a realization x of the random inputs to (a) the initial
component failure pattern judged on the intact configuration in one
simultaneous pass, and (b) a system failure flag from the subsequent load
redistribution. Evaluators are immutable after construction and evaluation is
pure, so batches may be processed concurrently.

The batch entry point is ``response(X, need_system=...)``; engines count one
model call per row of X.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .probcore import ConfigurationError, Marginal, RandomModel
from .scenarios import FailurePattern

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class ModelOutcome:
    """Per-realization result: initial pattern, system flag, redistribution trace."""

    initial_pattern: FailurePattern
    system_failed: bool
    cascade_trace: tuple[int, ...] = ()


@dataclass(frozen=True)
class ModelResponse:
    """Batched evaluation: margins (n, m), packed initial masks (n,), system flags."""

    margins: np.ndarray
    initial_masks: np.ndarray
    system: np.ndarray | None


def _pack_masks(failed_bool):
    weights = (1 << np.arange(failed_bool.shape[1], dtype=np.int64))
    return failed_bool.astype(np.int64) @ weights


# ---------------------------------------------------------------------------
# Daniels bundles (brittle parallel bars in one or more layers acting in series)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DanielsBar:
    area: float
    yield_marginal: Marginal


@dataclass(frozen=True)
class DanielsConfig:
    """Layers of brittle bars; every layer carries the full load in series.

    Within a layer the load is shared equally among the intact bars (bar force
    = load / surviving count, bar stress = force / area). system_rule:
    "layer_collapse" fails the system when some layer loses all bars after the
    redistribution pass; "any_cascade" fails it when redistribution breaks at
    least one additional bar (or a layer already emptied initially).
    """

    layers: tuple[tuple[DanielsBar, ...], ...]
    load: float
    system_rule: str = "layer_collapse"

    def __post_init__(self):
        if not self.layers or any(len(layer) == 0 for layer in self.layers):
            raise ConfigurationError("every layer must contain at least one bar")
        if any(bar.area <= 0.0 for layer in self.layers for bar in layer):
            raise ConfigurationError("bar areas must be positive")
        if self.system_rule not in ("layer_collapse", "any_cascade"):
            raise ConfigurationError(f"unknown system rule {self.system_rule!r}")


class DanielsSystem:
    def __init__(self, config: DanielsConfig):
        self.config = config
        self.layer_slices = []
        areas = []
        start = 0
        for layer in config.layers:
            self.layer_slices.append(slice(start, start + len(layer)))
            areas.extend(bar.area for bar in layer)
            start += len(layer)
        self.areas = np.asarray(areas)
        self.n_components = start
        stresses = np.empty(self.n_components)
        for sl, layer in zip(self.layer_slices, config.layers):
            stresses[sl] = (config.load / len(layer)) / self.areas[sl]
        self.intact_stresses = stresses

    def random_model(self):
        """Independent joint distribution of the bar yield stresses."""
        marginals = [bar.yield_marginal for layer in self.config.layers for bar in layer]
        return RandomModel.independent(marginals)

    def margins(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_components:
            raise ValueError(f"expected {self.n_components} yield values per row")
        return self.intact_stresses[None, :] - X

    def _redistribution(self, X, fail0):
        """One simultaneous redistribution pass; returns (refail, layer_emptied)."""
        n = X.shape[0]
        refail = np.zeros_like(fail0)
        emptied = np.zeros(n, dtype=bool)
        for sl in self.layer_slices:
            surv = ~fail0[:, sl]
            n_surv = surv.sum(axis=1)
            emptied |= n_surv == 0
            changed = (n_surv > 0) & (n_surv < sl.stop - sl.start)
            if not changed.any():
                continue
            force = np.zeros(n)
            force[changed] = self.config.load / n_surv[changed]
            stress2 = force[:, None] / self.areas[sl][None, :]
            refail[:, sl] = changed[:, None] & surv & (X[:, sl] < stress2)
        return refail, emptied

    def response(self, X, need_system=False):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        margins = self.margins(X)
        fail0 = margins > 0.0
        masks = _pack_masks(fail0)
        system = None
        if need_system:
            refail, emptied = self._redistribution(X, fail0)
            if self.config.system_rule == "any_cascade":
                system = refail.any(axis=1) | emptied
            else:
                system = emptied.copy()
                after = fail0 | refail
                for sl in self.layer_slices:
                    system |= after[:, sl].all(axis=1)
        return ModelResponse(margins, masks, system)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] != self.n_components:
            raise ValueError(f"expected a length-{self.n_components} realization")
        if np.any(x <= 0.0):
            raise ValueError("yield stresses must be strictly positive")
        resp = self.response(x[None, :], need_system=True)
        fail0 = resp.margins[0] > 0.0
        refail, _ = self._redistribution(x[None, :], fail0[None, :])
        trace = tuple(int(i) for i in np.nonzero(refail[0])[0])
        pattern = FailurePattern(self.n_components, int(resp.initial_masks[0]))
        return ModelOutcome(pattern, bool(resp.system[0]), trace)


# ---------------------------------------------------------------------------
# Linear truss with member damage and progressive redistribution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrussMember:
    node_i: int
    node_j: int
    area: float
    modulus: float


@dataclass(frozen=True)
class LoadTerm:
    """One nodal force entry: constant part plus an optional random factor.

    The applied force at (node, dof) is scale * x[rv] when rv is given,
    otherwise just scale.
    """

    node: int
    dof: int
    scale: float
    rv: int | None = None


@dataclass(frozen=True)
class TrussConfig:
    nodes: tuple[tuple[float, float], ...]
    members: tuple[TrussMember, ...]
    supports: tuple[tuple[int, int], ...]
    loads: tuple[LoadTerm, ...]
    n_load_rvs: int
    member_yield_rv: tuple[int, ...]
    damage_stiffness_factor: float
    system_rule: tuple = ("instability",)

    def __post_init__(self):
        if not 0.0 <= self.damage_stiffness_factor <= 1.0:
            raise ConfigurationError("damage stiffness factor must lie in [0, 1]")
        if len(self.member_yield_rv) != len(self.members):
            raise ConfigurationError("need one yield RV index per member")
        rule = self.system_rule[0]
        if rule not in ("instability", "max_failed"):
            raise ConfigurationError(f"unknown system rule {rule!r}")
        if rule == "max_failed" and (len(self.system_rule) != 2 or self.system_rule[1] < 0):
            raise ConfigurationError("max_failed rule needs a non-negative count")


class TrussModel:
    """2D pin-jointed truss solved by the direct stiffness method.

    Member failure is judged on stress magnitude against the member yield
    strength (tension or compression alike). Failed members retain
    ``damage_stiffness_factor`` of their axial stiffness during load
    redistribution; the stability verdict treats them as absent entirely,
    since the residual stiffness is a numerical regularization, not real
    capacity.
    """

    def __init__(self, config: TrussConfig):
        self.config = config
        nodes = np.asarray(config.nodes, dtype=float)
        m = len(config.members)
        self.n_components = m
        ndof = 2 * nodes.shape[0]
        fixed = sorted({2 * n + d for n, d in config.supports})
        if any(not 0 <= f < ndof for f in fixed):
            raise ConfigurationError("support DOF out of range")
        self.free = np.setdiff1d(np.arange(ndof), fixed)
        nfree = self.free.size
        dof_pos = -np.ones(ndof, dtype=int)
        dof_pos[self.free] = np.arange(nfree)

        # Per-member free-dof stiffness blocks and elongation rows.
        self._member_K = np.zeros((m, nfree, nfree))
        self._elong_rows = np.zeros((m, nfree))
        self._axial_stiff = np.empty(m)
        for k, mem in enumerate(config.members):
            xi, yi = nodes[mem.node_i]
            xj, yj = nodes[mem.node_j]
            length = math.hypot(xj - xi, yj - yi)
            if length <= 0.0:
                raise ConfigurationError(f"member {k} has zero length")
            c, s = (xj - xi) / length, (yj - yi) / length
            t = np.array([-c, -s, c, s])
            dofs = [2 * mem.node_i, 2 * mem.node_i + 1, 2 * mem.node_j, 2 * mem.node_j + 1]
            ea_l = mem.modulus * mem.area / length
            self._axial_stiff[k] = ea_l
            row = np.zeros(nfree)
            for a, dof in enumerate(dofs):
                p = dof_pos[dof]
                if p >= 0:
                    row[p] = t[a]
            self._elong_rows[k] = row
            self._member_K[k] = ea_l * np.outer(row, row)

        # Load vector: f = B @ p + f0 with p the load RVs.
        self._B = np.zeros((nfree, config.n_load_rvs))
        self._f0 = np.zeros(nfree)
        for term in config.loads:
            p = dof_pos[2 * term.node + term.dof]
            if p < 0:
                continue  # load applied directly at a support
            if term.rv is None:
                self._f0[p] += term.scale
            else:
                self._B[p, term.rv] += term.scale
        self._yield_idx = np.asarray(config.member_yield_rv, dtype=int)
        self._areas = np.asarray([mem.area for mem in config.members])
        self._cache: dict[int, tuple] = {}

        T, t0, ok = self._stress_influence(0)
        if not ok:
            raise ConfigurationError("intact structure is unstable under the given supports")
        self._T0, self._t00 = T, t0

    def _assemble(self, mask, factor):
        scale = np.ones(len(self.config.members))
        for k in range(len(scale)):
            if mask >> k & 1:
                scale[k] = factor
        return np.tensordot(scale, self._member_K, axes=1)

    def _is_stable(self, K):
        try:
            np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            return False
        return np.linalg.cond(K) < CONDITION_LIMIT

    def _stress_influence(self, mask):
        """Stress = T @ p + t0 for the damage state; ok=False when the softened
        system cannot be solved."""
        K = self._assemble(mask, self.config.damage_stiffness_factor)
        try:
            rhs = np.concatenate([self._B, self._f0[:, None]], axis=1)
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            return None, None, False
        scale = self._axial_stiff / self._areas
        for k in range(len(scale)):
            if mask >> k & 1:
                scale[k] *= self.config.damage_stiffness_factor
        rows = (self._elong_rows @ sol) * scale[:, None]
        return rows[:, :-1], rows[:, -1], True

    def _state(self, mask):
        """Cached per-damage-state data: stress influence + stability verdicts."""
        state = self._cache.get(mask)
        if state is None:
            T, t0, ok = self._stress_influence(mask)
            removed_stable = self._is_stable(self._assemble(mask, 0.0))
            state = (T, t0, ok, removed_stable)
            self._cache[mask] = state
        return state

    def linear_solve(self, damage_mask, load_values):
        """Solve one damage state under explicit load RV values.

        Returns (stresses, free_displacements, stable) where stable reports the
        softened system's solvability; an unstable damaged state is a flagged
        result, not an error.
        """
        p = np.asarray(load_values, dtype=float)
        K = self._assemble(damage_mask, self.config.damage_stiffness_factor)
        f = self._B @ p + self._f0
        try:
            u = np.linalg.solve(K, f)
        except np.linalg.LinAlgError:
            return None, None, False
        if not self._is_stable(K):
            return None, None, False
        scale = self._axial_stiff / self._areas
        for k in range(len(scale)):
            if damage_mask >> k & 1:
                scale[k] *= self.config.damage_stiffness_factor
        stresses = (self._elong_rows @ u) * scale
        residual = np.linalg.norm(K @ u - f)
        if residual > 1e-8 * max(np.linalg.norm(f), 1.0):
            raise RuntimeError("equilibrium residual exceeded tolerance")
        return stresses, u, True

    def margins(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        P = X[:, : self.config.n_load_rvs]
        Y = X[:, self._yield_idx]
        stresses = P @ self._T0.T + self._t00[None, :]
        return np.abs(stresses) - Y

    def _system_flags(self, X, fail0):
        n = X.shape[0]
        P = X[:, : self.config.n_load_rvs]
        Y = X[:, self._yield_idx]
        masks = _pack_masks(fail0)
        system = np.zeros(n, dtype=bool)
        rule = self.config.system_rule[0]
        active = masks != 0
        current = masks.copy()
        # Vectorized fixed-point iteration grouped by damage state.
        while active.any():
            idx = np.nonzero(active)[0]
            for mask in np.unique(current[idx]):
                rows = idx[current[idx] == mask]
                T, t0, ok, removed_stable = self._state(int(mask))
                if rule == "instability" and (not removed_stable or not ok):
                    system[rows] = True
                    active[rows] = False
                    continue
                if not ok:
                    system[rows] = True
                    active[rows] = False
                    continue
                stress = P[rows] @ T.T + t0[None, :]
                fails = np.abs(stress) > Y[rows]
                already = (current[rows, None] >> np.arange(self.n_components)[None, :]) & 1
                new = fails & (already == 0)
                grew = new.any(axis=1)
                new_masks = current[rows] | _pack_masks(new)
                current[rows] = new_masks
                done = rows[~grew]
                active[done] = False
                if rule == "instability":
                    # settled states were just verified stable
                    system[done] = False
        if rule == "max_failed":
            limit = self.config.system_rule[1]
            counts = np.array([bin(int(mk)).count("1") for mk in current])
            system = counts > limit
        return system

    def response(self, X, need_system=False):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        margins = self.margins(X)
        fail0 = margins > 0.0
        masks = _pack_masks(fail0)
        system = self._system_flags(X, fail0) if need_system else None
        return ModelResponse(margins, masks, system)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("expected a single realization vector")
        resp = self.response(x[None, :], need_system=False)
        fail0 = resp.margins[0] > 0.0
        pattern = FailurePattern(self.n_components, int(resp.initial_masks[0]))
        p = x[: self.config.n_load_rvs]
        Y = x[self._yield_idx]
        mask = pattern.failed_mask
        trace: list[int] = []
        rule = self.config.system_rule[0]
        system = False
        guard = 0
        while True:
            guard += 1
            if guard > self.n_components + 1:
                raise RuntimeError("redistribution failed to reach a fixed point")
            T, t0, ok, removed_stable = self._state(mask)
            if rule == "instability" and (not removed_stable or not ok):
                system = True
                break
            if not ok:
                system = True
                break
            if mask == (1 << self.n_components) - 1:
                break
            stress = T @ p + t0
            new = [
                k
                for k in range(self.n_components)
                if not mask >> k & 1 and abs(stress[k]) > Y[k]
            ]
            if not new:
                break
            for k in new:
                mask |= 1 << k
            trace.extend(new)
        if rule == "max_failed":
            system = bin(mask).count("1") > self.config.system_rule[1]
        return ModelOutcome(pattern, system, tuple(trace))


# ---------------------------------------------------------------------------
# Simplified shear frame (one lateral DOF per story)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShearFrameConfig:
    """Story-level stand-in for a laterally loaded frame with weak columns.

    load_signs applies the lateral load pattern to the story forces; a failed
    weak column halves its story stiffness; the system fails when the roof
    displacement (sum of story drifts) exceeds drift_limit.
    """

    story_stiffness: tuple[float, ...]
    story_capacity: tuple[float, ...]
    load_signs: tuple[float, ...]
    drift_limit: float

    def __post_init__(self):
        n = len(self.story_stiffness)
        if not (len(self.story_capacity) == n and len(self.load_signs) == n):
            raise ConfigurationError("story arrays must share one length")
        if any(k <= 0 for k in self.story_stiffness) or any(c <= 0 for c in self.story_capacity):
            raise ConfigurationError("stiffness and capacity must be positive")
        if self.drift_limit <= 0:
            raise ConfigurationError("drift limit must be positive")


class ShearFrameModel:
    def __init__(self, config: ShearFrameConfig):
        self.config = config
        self.n_components = len(config.story_stiffness)
        n = self.n_components
        signs = np.asarray(config.load_signs, dtype=float)
        # Story shear i collects the signed loads applied at story i and above.
        self._shear_map = np.triu(np.ones((n, n))) * signs[None, :]
        self._k = np.asarray(config.story_stiffness, dtype=float)
        self._cap = np.asarray(config.story_capacity, dtype=float)

    def margins(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        V = X @ self._shear_map.T
        return np.abs(V) - self._cap[None, :]

    def response(self, X, need_system=False):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        margins = self.margins(X)
        fail0 = margins > 0.0
        masks = _pack_masks(fail0)
        system = None
        if need_system:
            V = X @ self._shear_map.T
            stiff = np.where(fail0, 0.5 * self._k[None, :], self._k[None, :])
            drift = (np.abs(V) / stiff).sum(axis=1)
            system = drift > self.config.drift_limit
        return ModelResponse(margins, masks, system)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        resp = self.response(x[None, :], need_system=True)
        pattern = FailurePattern(self.n_components, int(resp.initial_masks[0]))
        return ModelOutcome(pattern, bool(resp.system[0]), ())


class CallCountingModel:
    """Wrapper counting per-sample model calls; used to audit engine ledgers."""

    def __init__(self, model):
        self._model = model
        self.n_calls = 0

    @property
    def n_components(self):
        return self._model.n_components

    def margins(self, X):
        return self._model.margins(X)

    def response(self, X, need_system=False):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.n_calls += X.shape[0]
        return self._model.response(X, need_system=need_system)

    def evaluate(self, x):
        self.n_calls += 1
        return self._model.evaluate(x)
