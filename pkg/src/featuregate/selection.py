"""Streaming feature-definition acceptance and pruning.

Each arriving feature is judged immediately against the accepted set:

* strong rule: the conditional information the new values carry about the
  target, given the current feature matrix, exceeds lambda1 + lambda2 * q;
* weak rule: failing that, the feature may displace an accepted feature it
  dominates, with the margin lambda1 + lambda2 * (q - q');
* after an acceptance, previously accepted features whose conditional
  information (given the updated set minus themselves) falls below their own
  threshold are pruned, in acceptance order, in a single pass.

Decisions are pure functions of (state snapshot, submission, dataset,
params): estimates run on a seeded row subsample with a fixed k, so a
serialized state replays to identical decisions. Negative estimates are
compared unclamped; rejection is the safe direction.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import EstimatorError, FeatureGateError
from .features import FeatureDefinition
from .infotheory import VariableSet, estimate_cmi, estimate_mi
from .rng import sample_indices
from .table import Column, Table

ACCEPTER_KINDS = ("sfds", "always", "mutual_information", "variance_threshold", "compound")


@dataclass(frozen=True)
class SelectionParams:
    lambda1: float = 0.04  # nats per feature definition
    lambda2: float = 0.01  # nats per feature value
    k: int = 3
    seed: int = 0
    accepter: dict = field(default_factory=lambda: {"kind": "sfds"})
    eval_rows: int = 2000  # estimation subsample cap
    max_condition_columns: int = 10

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda penalties must be non-negative")
        _validate_accepter(self.accepter)

    def threshold(self, q: int) -> float:
        return self.lambda1 + self.lambda2 * q


def _validate_accepter(config: dict) -> None:
    if not isinstance(config, dict) or config.get("kind") not in ACCEPTER_KINDS:
        raise ValueError(f"accepter kind must be one of {ACCEPTER_KINDS}, got {config!r}")
    kind = config["kind"]
    if kind in ("mutual_information", "variance_threshold"):
        if not isinstance(config.get("threshold"), (int, float)):
            raise ValueError(f"{kind} accepter needs a numeric threshold")
    if kind == "compound":
        if config.get("mode") not in ("and", "or"):
            raise ValueError("compound accepter mode must be 'and' or 'or'")
        children = config.get("children")
        if not isinstance(children, list) or not children:
            raise ValueError("compound accepter needs a non-empty children list")
        for child in children:
            _validate_accepter(child)


@dataclass(frozen=True)
class AcceptedFeature:
    definition: FeatureDefinition
    values: np.ndarray  # (rows, q), row-aligned with the evaluation dataset
    q: int

    @property
    def key(self) -> str:
        return self.definition.key


@dataclass
class SelectionState:
    accepted: list[AcceptedFeature] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)

    @property
    def keys(self) -> list[str]:
        return [f.key for f in self.accepted]


@dataclass(frozen=True)
class Decision:
    outcome: str  # accepted | rejected
    rule: str  # strong | weak | below_threshold
    cmi: float | None
    threshold: float | None
    displaced: str | None = None
    trace: tuple = ()

    @property
    def accepted(self) -> bool:
        return self.outcome == "accepted"


class EstimateCache:
    """Content-addressed memo for MI/CMI estimates within one run."""

    def __init__(self):
        self._memo: dict[str, float] = {}

    def _key(self, parts) -> str:
        h = hashlib.blake2b(digest_size=16)
        for part in parts:
            if isinstance(part, np.ndarray):
                h.update(np.ascontiguousarray(part).tobytes())
                h.update(str(part.shape).encode())
            else:
                h.update(str(part).encode())
        return h.hexdigest()

    def get(self, parts):
        return self._memo.get(self._key(parts))

    def put(self, parts, value: float):
        self._memo[self._key(parts)] = value


def _target_variable_set(y: Column, indices) -> VariableSet:
    if y.missing_mask.any():
        raise EstimatorError("target column has missing values")
    sub = y.take(indices)
    if y.kind == "continuous":
        return VariableSet(sub.values.reshape(-1, 1), np.empty((len(indices), 0), dtype=np.int64))
    return VariableSet(np.empty((len(indices), 0)), sub.values.reshape(-1, 1))


def _values_variable_set(values: np.ndarray) -> VariableSet:
    # feature-matrix columns are treated uniformly as continuous; the
    # estimator's tie handling covers effectively discrete columns
    return VariableSet(values, np.empty((values.shape[0], 0), dtype=np.int64))


def _eval_indices(rows: int, params: SelectionParams):
    n = min(rows, params.eval_rows)
    return sample_indices(rows, n, params.seed)


def _stack(features: list[AcceptedFeature], indices) -> np.ndarray | None:
    if not features:
        return None
    return np.hstack([np.ascontiguousarray(f.values[indices]) for f in features])


def _cmi(
    x: np.ndarray,
    y_vs: VariableSet,
    z: np.ndarray | None,
    params: SelectionParams,
    cache: EstimateCache | None,
):
    parts = ["cmi", x, z if z is not None else "none", params.k, params.max_condition_columns]
    if cache is not None:
        hit = cache.get(parts)
        if hit is not None:
            return hit, {}
    est = estimate_cmi(
        _values_variable_set(x),
        y_vs,
        _values_variable_set(z) if z is not None else None,
        k=params.k,
        max_condition_columns=params.max_condition_columns,
    )
    if cache is not None:
        cache.put(parts, est.value)
    return est.value, est.detail


def accept(
    state: SelectionState,
    f_values: np.ndarray,
    y: Column,
    params: SelectionParams,
    cache: EstimateCache | None = None,
) -> Decision:
    """Strong test first, then displacement over accepted features in
    acceptance order; the full comparison trace is recorded."""
    values = np.ascontiguousarray(np.asarray(f_values, dtype=np.float64))
    if values.ndim == 1:
        values = values.reshape(-1, 1)
    if values.shape[1] < 1:
        raise EstimatorError("feature has no value columns")
    rows = len(y.values)
    if values.shape[0] != rows:
        raise EstimatorError(f"feature rows {values.shape[0]} do not align with target rows {rows}")
    for f in state.accepted:
        if f.values.shape[0] != rows:
            raise EstimatorError(f"state cache for {f.key} does not align with target rows")

    idx = _eval_indices(rows, params)
    y_vs = _target_variable_set(y, idx)
    x = np.ascontiguousarray(values[idx])
    q = values.shape[1]
    threshold = params.threshold(q)
    trace = []

    z = _stack(state.accepted, idx)
    strong_cmi, detail = _cmi(x, y_vs, z, params, cache)
    trace.append(
        {
            "test": "strong",
            "cmi": strong_cmi,
            "threshold": threshold,
            "condition": state.keys,
            **detail,
        }
    )
    if strong_cmi > threshold:
        return Decision("accepted", "strong", strong_cmi, threshold, trace=tuple(trace))

    for i, rival in enumerate(state.accepted):
        others = [f for j, f in enumerate(state.accepted) if j != i]
        z_rest = _stack(others, idx)
        margin = params.lambda1 + params.lambda2 * (q - rival.q)
        new_gain, _ = _cmi(x, y_vs, z_rest, params, cache)
        rival_gain, _ = _cmi(np.ascontiguousarray(rival.values[idx]), y_vs, z_rest, params, cache)
        trace.append(
            {
                "test": "weak",
                "rival": rival.key,
                "candidate_cmi": new_gain,
                "rival_cmi": rival_gain,
                "margin": margin,
            }
        )
        if new_gain - rival_gain > margin:
            return Decision(
                "accepted", "weak", strong_cmi, threshold, displaced=rival.key, trace=tuple(trace)
            )
    return Decision("rejected", "below_threshold", strong_cmi, threshold, trace=tuple(trace))


def prune(
    state: SelectionState,
    f_new_key: str,
    y: Column,
    params: SelectionParams,
    cache: EstimateCache | None = None,
) -> list[dict]:
    """Single ordered pass over accepted features (oldest first), skipping the
    newly accepted one; each removal is logged and mutates the scan set."""
    rows = len(y.values)
    idx = _eval_indices(rows, params)
    y_vs = _target_variable_set(y, idx)
    removed: list[dict] = []
    for candidate in [f for f in state.accepted if f.key != f_new_key]:
        others = [f for f in state.accepted if f.key != candidate.key]
        z_rest = _stack(others, idx)
        value, _ = _cmi(np.ascontiguousarray(candidate.values[idx]), y_vs, z_rest, params, cache)
        threshold = params.threshold(candidate.q)
        if value < threshold:
            state.accepted.remove(candidate)
            removed.append({"feature": candidate.key, "cmi": value, "threshold": threshold})
    return removed


def evaluate_alternative(
    accepter: dict,
    f_values: np.ndarray,
    y: Column,
    state: SelectionState,
    params: SelectionParams,
    cache: EstimateCache | None = None,
) -> Decision:
    """Alternative accepters: always, MI threshold, variance threshold, and
    and/or compounds (short-circuit in declaration order)."""
    _validate_accepter(accepter)
    kind = accepter["kind"]
    values = np.ascontiguousarray(np.asarray(f_values, dtype=np.float64))
    if values.ndim == 1:
        values = values.reshape(-1, 1)
    if kind == "sfds":
        return accept(state, values, y, params, cache)
    if kind == "always":
        return Decision("accepted", "strong", None, None)
    if kind == "mutual_information":
        idx = _eval_indices(values.shape[0], params)
        est = estimate_mi(
            _values_variable_set(np.ascontiguousarray(values[idx])),
            _target_variable_set(y, idx),
            k=params.k,
        )
        ok = est.value > accepter["threshold"]
        return Decision(
            "accepted" if ok else "rejected",
            "strong" if ok else "below_threshold",
            est.value,
            float(accepter["threshold"]),
        )
    if kind == "variance_threshold":
        variances = values.var(axis=0)
        ok = bool((variances > accepter["threshold"]).all())
        return Decision(
            "accepted" if ok else "rejected",
            "strong" if ok else "below_threshold",
            None,
            float(accepter["threshold"]),
            trace=({"variances": [float(v) for v in variances]},),
        )
    # compound
    child_decisions = []
    outcome = None
    for child in accepter["children"]:
        d = evaluate_alternative(child, values, y, state, params, cache)
        child_decisions.append({"kind": child["kind"], "outcome": d.outcome})
        if accepter["mode"] == "and" and not d.accepted:
            outcome = False
            break
        if accepter["mode"] == "or" and d.accepted:
            outcome = True
            break
    if outcome is None:
        outcome = accepter["mode"] == "and"
    return Decision(
        "accepted" if outcome else "rejected",
        "strong" if outcome else "below_threshold",
        None,
        None,
        trace=tuple(child_decisions),
    )


def run_sfds(
    stream,
    dev: Table,
    params: SelectionParams,
    fit_values=None,
    gate=None,
) -> tuple[SelectionState, list[dict]]:
    """Process (label, FeatureDefinition) submissions strictly in order.

    ``fit_values`` maps a definition to its (rows, q) value matrix on the
    development table; the default fits a single-feature pipeline. ``gate``
    is an optional pre-filter (such as the API validation battery) returning
    a rejection reason or None. A submission that fails the gate or whose
    fit fails is logged as rejected and the stream continues.
    """
    from .engine import build_pipeline, fit_pipeline, transform

    if dev.schema.target is None:
        raise EstimatorError("development table declares no target")
    y = dev.target_column

    if fit_values is None:

        def fit_values(fd: FeatureDefinition) -> np.ndarray:
            pipeline = build_pipeline([fd], {}, dev.schema)
            fitted = fit_pipeline(pipeline, dev)
            return transform(fitted, dev).values

    state = SelectionState()
    events: list[dict] = []
    cache = EstimateCache()
    for seq, (label, fd) in enumerate(stream):
        base = {
            "seq": seq,
            "submission": label,
            "feature": fd.key if fd is not None else None,
            "estimator": "cmi/mixed-knn-mi",
            "k": params.k,
            "lambda1": params.lambda1,
            "lambda2": params.lambda2,
            "subsample_seed": params.seed,
            "eval_rows": min(len(y.values), params.eval_rows),
        }
        if gate is not None:
            reason = gate(label, fd)
            if reason is not None:
                event = dict(base, outcome="rejected", rule="api", error=reason, pruned=[])
                events.append(event)
                state.log.append(event)
                continue
        try:
            values = fit_values(fd)
        except FeatureGateError as exc:
            event = dict(base, outcome="rejected", rule="error", error=str(exc), pruned=[])
            events.append(event)
            state.log.append(event)
            continue
        decision = evaluate_alternative(params.accepter, values, y, state, params, cache)
        pruned: list[dict] = []
        if decision.accepted:
            state.accepted.append(
                AcceptedFeature(fd, np.ascontiguousarray(values, dtype=np.float64), values.shape[1])
            )
            if params.accepter["kind"] == "sfds":
                pruned = prune(state, fd.key, y, params, cache)
        event = dict(
            base,
            outcome=decision.outcome,
            rule=decision.rule,
            cmi=decision.cmi,
            threshold=decision.threshold,
            displaced=decision.displaced,
            q=values.shape[1],
            pruned=pruned,
            trace=list(decision.trace),
        )
        events.append(event)
        state.log.append(event)
    return state, events
