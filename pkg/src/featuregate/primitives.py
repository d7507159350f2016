"""Catalog of feature-engineering primitives with fit/transform semantics.

Steps are immutable values: ``fit`` returns a new fitted step and never
mutates. Learned parameters are a pure function of the development inputs
(and target, for supervised primitives -- none in the stock catalog), so
transform output for a row depends only on the learned state and that row.

Runtime data forms between steps: a Block (named columns), a single Column,
or a bare per-row scalar vector (produced by ``expr``). Steps raise
ShapeError on a form they cannot accept; the conversion-recovery wrapper
(`apply_with_recovery`) then tries the fixed approach sequence

    identity -> single-column block to column -> column to single-column
    block -> scalar vector to column

and the first approach that works is recorded so later applications reuse
it without searching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import CatalogError, FitError, ShapeError, TransformError
from .expressions import evaluate, parse_expression
from .features import FeatureDefinition, TransformerSpec, desugar_spec
from .table import MISSING_CODE, Column


# ---------------------------------------------------------------------------
# runtime data forms


@dataclass(frozen=True)
class Block:
    """Ordered named columns; the unit of data flowing through steps."""

    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise TransformError(f"duplicate column names in block: {names}")
        if len({len(c) for c in self.columns}) > 1:
            raise TransformError("ragged block")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def n_rows(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    def get(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise TransformError(f"no column {name!r} in block")

    def numeric_lookup(self) -> dict[str, np.ndarray]:
        return {c.name: c.numeric() for c in self.columns}


def as_block(value) -> Block:
    if isinstance(value, Block):
        return value
    raise ShapeError(f"expected a column block, got {type(value).__name__}")


def as_block_or_column(value) -> Block:
    if isinstance(value, Block):
        return value
    if isinstance(value, Column):
        return Block((value,))
    raise ShapeError(f"expected columns, got {type(value).__name__}")


# ---------------------------------------------------------------------------
# conversion recovery

APPROACHES = (
    "identity",
    "single-column-block-to-column",
    "column-to-single-column-block",
    "scalar-vector-to-column",
)


def convert_input(value, approach: int):
    if approach == 0:
        return value
    if approach == 1:
        if isinstance(value, Block) and len(value.columns) == 1:
            return value.columns[0]
        raise ShapeError("input is not a single-column block")
    if approach == 2:
        if isinstance(value, Column):
            return Block((value,))
        raise ShapeError("input is not a column")
    if approach == 3:
        arr = np.asarray(value, dtype=np.float64) if isinstance(value, (list, tuple, np.ndarray)) else None
        if arr is not None and arr.ndim == 1:
            return Column("value", "continuous", arr)
        raise ShapeError("input is not a per-row scalar vector")
    raise ValueError(f"unknown approach {approach}")


@dataclass
class ExecContext:
    """Execution-scoped state threaded through step application."""

    nested: dict = field(default_factory=dict)  # registry path -> computed Block
    approaches: dict = field(default_factory=dict)  # step path -> approach index
    record: bool = True

    def lookup(self, path: str):
        return self.approaches.get(path)

    def store(self, path: str, approach: int):
        if self.record:
            self.approaches[path] = approach


def _attempt_transform(step, value, ctx, path):
    trace = []
    first_error = None
    for idx, name in enumerate(APPROACHES):
        try:
            candidate = convert_input(value, idx)
            out = step._transform_value(candidate, ctx, path)
        except ShapeError as exc:
            if first_error is None and idx == 0:
                first_error = exc
            trace.append(f"{name}: {exc}")
            continue
        return out, idx, trace
    detail = "; ".join(trace)
    raise TransformError(
        f"all {len(APPROACHES)} conversion approaches failed ({detail})"
    ) from first_error


def apply_with_recovery(step: TransformerStep, value, ctx: ExecContext | None = None, path: str = ""):
    """Apply a fitted step, recovering from input-form incompatibilities.

    The successful approach is stored in the context (keyed by step path)
    and reused on later calls instead of searching again.
    """
    ctx = ctx or ExecContext()
    known = ctx.lookup(path)
    if known is not None:
        return step._transform_value(convert_input(value, known), ctx, path)
    out, idx, _ = _attempt_transform(step, value, ctx, path)
    ctx.store(path, idx)
    return out


def fit_with_recovery(step: TransformerStep, value, target, ctx: ExecContext, path: str):
    """Fit a step against whichever converted input form works.

    Returns (fitted step, transformed output). The approach that let both
    fit and transform succeed is recorded for reuse.
    """
    trace = []
    first_error = None
    for idx, name in enumerate(APPROACHES):
        try:
            candidate = convert_input(value, idx)
        except ShapeError as exc:
            trace.append(f"{name}: {exc}")
            continue
        try:
            fitted = step._fit_value(candidate, target, ctx, path)
            out = fitted._transform_value(candidate, ctx, path)
        except ShapeError as exc:
            if first_error is None and idx == 0:
                first_error = exc
            trace.append(f"{name}: {exc}")
            continue
        ctx.store(path, idx)
        return fitted, out
    detail = "; ".join(trace)
    raise FitError(
        f"all {len(APPROACHES)} conversion approaches failed ({detail})"
    ) from first_error


def run_chain_fit(steps, block: Block, target, ctx: ExecContext, prefix: str, need_output: bool = True):
    """Fit a step sequence, feeding each step the previous transform output.

    With ``need_output=False`` the final step is fitted but not applied, so a
    transform-only defect in the last step does not surface as a fit failure.
    """
    from .errors import FeatureGateError

    fitted_steps = []
    value = block
    for i, step in enumerate(steps):
        path = f"{prefix}{i}"
        last = i == len(steps) - 1
        try:
            if last and not need_output:
                fitted = _fit_only_with_recovery(step, value, target, ctx, path)
                value = None
            else:
                fitted, value = fit_with_recovery(step, value, target, ctx, path)
        except FeatureGateError as exc:
            if not hasattr(exc, "step_path"):
                exc.step_path = path
            raise
        fitted_steps.append(fitted)
    return tuple(fitted_steps), value


def _fit_only_with_recovery(step: TransformerStep, value, target, ctx: ExecContext, path: str):
    trace = []
    first_error = None
    for idx, name in enumerate(APPROACHES):
        try:
            candidate = convert_input(value, idx)
            fitted = step._fit_value(candidate, target, ctx, path)
        except ShapeError as exc:
            if first_error is None and idx == 0:
                first_error = exc
            trace.append(f"{name}: {exc}")
            continue
        ctx.store(path, idx)
        return fitted
    detail = "; ".join(trace)
    raise FitError(f"all {len(APPROACHES)} conversion approaches failed ({detail})") from first_error


def run_chain_transform(steps, block: Block, ctx: ExecContext, prefix: str):
    from .errors import FeatureGateError

    value = block
    for i, step in enumerate(steps):
        path = f"{prefix}{i}"
        try:
            value = apply_with_recovery(step, value, ctx, path)
        except FeatureGateError as exc:
            if not hasattr(exc, "step_path"):
                exc.step_path = path
            raise
    return value


# ---------------------------------------------------------------------------
# step base


@dataclass(frozen=True)
class TransformerStep:
    params: dict = field(default_factory=dict)
    state: dict | None = None

    kind = "abstract"
    supervised = False

    @property
    def fitted(self) -> bool:
        return self.state is not None

    # public surface -------------------------------------------------------
    def fit(self, inputs, target: Column | None = None, ctx: ExecContext | None = None) -> TransformerStep:
        return self._fit_value(as_block_or_column(inputs), target, ctx or ExecContext(), "")

    def transform(self, inputs, ctx: ExecContext | None = None):
        return self._transform_value(as_block_or_column(inputs), ctx or ExecContext(), "")

    # implementation hooks --------------------------------------------------
    def _fit_value(self, value, target, ctx, path) -> TransformerStep:
        if self.fitted:
            raise FitError(f"{self.kind}: already fitted")
        block = self._accept(value)
        if block.n_rows == 0:
            raise FitError(f"{self.kind}: cannot fit on zero rows")
        return replace(self, state=self._fit_block(block, target, ctx, path))

    def _transform_value(self, value, ctx, path):
        if not self.fitted:
            raise TransformError(f"{self.kind}: transform called on unfitted step")
        return self._transform_block(self._accept(value), ctx, path)

    def _accept(self, value) -> Block:
        return as_block_or_column(value)

    def _fit_block(self, block: Block, target, ctx, path) -> dict:
        raise NotImplementedError

    def _transform_block(self, block: Block, ctx, path):
        raise NotImplementedError


def _continuous_only(block: Block, kind: str) -> None:
    for c in block.columns:
        if c.kind == "continuous":
            continue
        raise FitError(f"{kind}: column {c.name!r} is {c.kind}; continuous required")


def _observed(col: Column) -> np.ndarray:
    if col.kind == "continuous":
        return col.values[~np.isnan(col.values)]
    return col.values[col.values != MISSING_CODE]


def sample_skewness(values: np.ndarray) -> float:
    """Adjusted Fisher-Pearson sample skewness; 0.0 when undefined (n<3 or
    zero variance)."""
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    if n < 3:
        return 0.0
    m = x.mean()
    m2 = ((x - m) ** 2).mean()
    if m2 == 0.0:
        return 0.0
    g1 = ((x - m) ** 3).mean() / m2**1.5
    return float(g1 * math.sqrt(n * (n - 1)) / (n - 2))


# ---------------------------------------------------------------------------
# simple primitives


class IdentityStep(TransformerStep):
    kind = "identity"

    def _fit_block(self, block, target, ctx, path):
        return {}

    def _transform_block(self, block, ctx, path):
        return block


class ExprStep(TransformerStep):
    kind = "expr"

    @cached_property
    def _expr(self):
        text = self.params["expression"]
        return parse_expression(text, list(_collect_identifiers(text)))

    def _accept(self, value) -> Block:
        return as_block(value)  # needs named columns

    def _fit_block(self, block, target, ctx, path):
        return {}

    def _transform_block(self, block, ctx, path):
        lookup = block.numeric_lookup()
        free = self._expr.variables
        # a single-variable expression acts as an anonymous unary function:
        # when its name matches no column and exactly one column flows in,
        # it binds to that column
        if len(free) == 1 and free[0] not in lookup and len(block.columns) == 1:
            lookup = {free[0]: block.columns[0].numeric()}
        return evaluate(self._expr, lookup, block.n_rows)


def _collect_identifiers(text: str):
    # permissive variable universe for re-parsing stored expressions; the
    # declared-input check happened when the document was validated
    import re

    from .expressions import FUNCTIONS

    return [w for w in dict.fromkeys(re.findall(r"[A-Za-z_][A-Za-z0-9_]*", text)) if w not in FUNCTIONS]


class ImputeStep(TransformerStep):
    kind = "impute"

    def _fit_block(self, block, target, ctx, path):
        strategy = self.params["strategy"]
        fill = []
        for col in block.columns:
            if strategy == "constant":
                fill.append(self._constant_entry(col))
                continue
            obs = _observed(col)
            if len(obs) == 0:
                raise FitError(f"impute: column {col.name!r} has no observed values")
            if strategy in ("mean", "median"):
                if col.kind != "continuous":
                    raise FitError(f"impute/{strategy}: column {col.name!r} is {col.kind}")
                value = float(np.mean(obs) if strategy == "mean" else np.median(obs))
                fill.append({"column": col.name, "form": "number", "value": value})
            else:  # most_frequent
                values, counts = np.unique(obs, return_counts=True)
                best = values[np.argmax(counts)]  # ties: lowest value/code wins
                if col.kind == "continuous":
                    fill.append({"column": col.name, "form": "number", "value": float(best)})
                else:
                    fill.append({"column": col.name, "form": "label", "value": col.categories[int(best)]})
        return {"fill": fill}

    def _constant_entry(self, col: Column) -> dict:
        value = self.params["value"]
        if col.kind == "continuous":
            if not isinstance(value, (int, float)):
                raise FitError(f"impute/constant: column {col.name!r} needs a numeric value")
            return {"column": col.name, "form": "number", "value": float(value)}
        if not isinstance(value, str):
            raise FitError(f"impute/constant: column {col.name!r} needs a category label")
        if value not in col.categories:
            raise FitError(f"impute/constant: label {value!r} not among categories of {col.name!r}")
        return {"column": col.name, "form": "label", "value": value}

    def _transform_block(self, block, ctx, path):
        by_name = {e["column"]: e for e in self.state["fill"]}
        out = []
        for col in block.columns:
            entry = by_name.get(col.name)
            if entry is None:
                raise TransformError(f"impute: unexpected column {col.name!r} at transform")
            mask = col.missing_mask
            if not mask.any():
                out.append(col)
                continue
            if col.kind == "continuous":
                values = col.values.copy()
                values[mask] = float(entry["value"])
                out.append(Column(col.name, col.kind, values))
            else:
                label = entry["value"]
                categories = col.categories
                if label not in categories:
                    categories = categories + (label,)
                code = categories.index(label)
                values = col.values.copy()
                values[mask] = code
                out.append(Column(col.name, col.kind, values, categories))
        return Block(tuple(out))


class ScaleStep(TransformerStep):
    kind = "scale"

    def _fit_block(self, block, target, ctx, path):
        _continuous_only(block, "scale")
        mode = self.params["mode"]
        stats = []
        for col in block.columns:
            obs = _observed(col)
            if len(obs) == 0:
                raise FitError(f"scale: column {col.name!r} has no observed values")
            if mode == "standard":
                with np.errstate(all="ignore"):  # extreme data may overflow
                    stats.append(
                        {"column": col.name, "center": float(obs.mean()), "scale": float(obs.std())}
                    )
            else:  # minmax
                lo, hi = float(obs.min()), float(obs.max())
                stats.append({"column": col.name, "center": lo, "scale": hi - lo})
        return {"mode": mode, "stats": stats}

    def _transform_block(self, block, ctx, path):
        by_name = {e["column"]: e for e in self.state["stats"]}
        out = []
        for col in block.columns:
            entry = by_name.get(col.name)
            if entry is None:
                raise TransformError(f"scale: unexpected column {col.name!r} at transform")
            values = col.values.copy()
            live = ~np.isnan(values)
            if entry["scale"] == 0.0:
                values[live] = 0.0
            else:
                # overflow to non-finite values is allowed here; the matrix
                # boundary and the validation battery police finiteness
                with np.errstate(all="ignore"):
                    values[live] = (values[live] - entry["center"]) / entry["scale"]
            out.append(Column(col.name, "continuous", values))
        return Block(tuple(out))


class OneHotStep(TransformerStep):
    kind = "one_hot"

    def _fit_block(self, block, target, ctx, path):
        seen = []
        for col in block.columns:
            if col.kind not in ("categorical", "ordinal"):
                raise FitError(f"one_hot: column {col.name!r} is continuous")
            codes = np.unique(_observed(col))
            if len(codes) == 0:
                raise FitError(f"one_hot: column {col.name!r} has no observed values")
            if len(codes) > self.params["max_cardinality"]:
                raise FitError(
                    f"one_hot: column {col.name!r} has {len(codes)} categories, "
                    f"exceeding max_cardinality={self.params['max_cardinality']}"
                )
            seen.append({"column": col.name, "labels": [col.categories[int(c)] for c in codes]})
        return {"seen": seen}

    def _transform_block(self, block, ctx, path):
        by_name = {e["column"]: e for e in self.state["seen"]}
        out = []
        for col in block.columns:
            entry = by_name.get(col.name)
            if entry is None:
                raise TransformError(f"one_hot: unexpected column {col.name!r} at transform")
            decoded = col.decoded()
            for label in entry["labels"]:
                values = np.fromiter(
                    (1.0 if v == label else 0.0 for v in decoded), dtype=np.float64, count=len(decoded)
                )
                # unseen categories and missing cells land in no bucket
                out.append(Column(f"{col.name}={label}", "continuous", values))
        return Block(tuple(out))


class ValueMapStep(TransformerStep):
    kind = "value_map"

    def _fit_block(self, block, target, ctx, path):
        return {}

    def _transform_block(self, block, ctx, path):
        mapping: dict = self.params["mapping"]
        default = self.params["default"]
        out = []
        for col in block.columns:
            decoded = col.decoded()
            if col.kind == "continuous":
                table = {float(k): float(v) for k, v in mapping.items()}
            else:
                table = {k: float(v) for k, v in mapping.items()}
            values = np.empty(len(decoded), dtype=np.float64)
            for i, v in enumerate(decoded):
                if v is None:
                    values[i] = np.nan
                elif v in table:
                    values[i] = table[v]
                elif default == "missing":
                    values[i] = np.nan
                elif default == "error":
                    raise TransformError(
                        f"value_map: unmapped value {v!r} in column {col.name!r}"
                    )
                else:
                    values[i] = float(default)
            out.append(Column(col.name, "continuous", values))
        return Block(tuple(out))


class NullIndicatorStep(TransformerStep):
    kind = "null_indicator"

    def _fit_block(self, block, target, ctx, path):
        return {}

    def _transform_block(self, block, ctx, path):
        out = [
            Column(f"{c.name}_missing", "continuous", c.missing_mask.astype(np.float64))
            for c in block.columns
        ]
        return Block(tuple(out))


class ClipQuantileStep(TransformerStep):
    kind = "clip_quantile"

    def _fit_block(self, block, target, ctx, path):
        _continuous_only(block, "clip_quantile")
        bounds = []
        for col in block.columns:
            obs = _observed(col)
            if len(obs) == 0:
                raise FitError(f"clip_quantile: column {col.name!r} has no observed values")
            # linearly interpolated quantiles: h = (n-1) q, interpolate
            # between floor(h) and ceil(h) order statistics
            lo = float(np.quantile(obs, self.params["lo_q"]))
            hi = float(np.quantile(obs, self.params["hi_q"]))
            bounds.append({"column": col.name, "lo": lo, "hi": hi})
        return {"bounds": bounds}

    def _transform_block(self, block, ctx, path):
        by_name = {e["column"]: e for e in self.state["bounds"]}
        out = []
        for col in block.columns:
            entry = by_name.get(col.name)
            if entry is None:
                raise TransformError(f"clip_quantile: unexpected column {col.name!r} at transform")
            values = np.clip(col.values, entry["lo"], entry["hi"])
            out.append(Column(col.name, "continuous", values))
        return Block(tuple(out))


# ---------------------------------------------------------------------------
# composite primitives


@dataclass(frozen=True)
class ConditionalStep(TransformerStep):
    then_step: TransformerStep | None = None
    else_step: TransformerStep | None = None

    kind = "conditional"

    def _accept(self, value) -> Block:
        return as_block_or_column(value)

    def _check_value(self, block: Block) -> float:
        check = self.params["check"]
        col = block.columns[0]  # condition is evaluated on the first column
        if check["kind"] == "missing_frac_gt":
            return float(col.missing_mask.mean())
        obs = _observed(col)
        if check["kind"] == "skew_gt":
            return sample_skewness(obs) if len(obs) else 0.0
        if check["kind"] == "variance_lt":
            return float(np.var(obs, ddof=1)) if len(obs) >= 2 else 0.0
        return float(len(np.unique(obs)))  # cardinality_gt

    def _fit_block(self, block, target, ctx, path):
        check = self.params["check"]
        stat = self._check_value(block)
        if check["kind"] == "variance_lt":
            condition = stat < check["threshold"]
        else:
            condition = stat > check["threshold"]
        branch = self.then_step if condition else self.else_step
        fitted = None
        if branch is not None:
            fitted, _ = fit_with_recovery(branch, block, target, ctx, f"{path}.branch")
        return {"condition": bool(condition), "stat": stat, "branch": fitted}

    def _transform_block(self, block, ctx, path):
        branch = self.state["branch"]
        if branch is None:
            return block  # inactive condition without an else acts as identity
        return apply_with_recovery(branch, block, ctx, f"{path}.branch")


@dataclass(frozen=True)
class GroupwiseStep(TransformerStep):
    inner: TransformerStep | None = None

    kind = "groupwise"

    def _accept(self, value) -> Block:
        return as_block(value)

    def _split(self, block: Block):
        by = self.params["by"]
        names = block.names
        if by not in names:
            raise FitError(f"groupwise: by-column {by!r} not among inputs {names}")
        by_col = block.get(by)
        if by_col.kind not in ("categorical", "ordinal"):
            raise FitError(f"groupwise: by-column {by!r} must be categorical or ordinal")
        rest = Block(tuple(c for c in block.columns if c.name != by))
        if not rest.columns:
            raise FitError("groupwise: no columns left after removing the by-column")
        return by_col, rest

    def _fit_block(self, block, target, ctx, path):
        by_col, rest = self._split(block)
        groups = []
        names_seen = None
        for code in np.unique(_observed(by_col)):
            idx = np.flatnonzero(by_col.values == code)
            sub = Block(tuple(c.take(idx) for c in rest.columns))
            sub_target = target.take(idx) if target is not None else None
            label = by_col.categories[int(code)]
            fitted, out = fit_with_recovery(
                self.inner, sub, sub_target, ctx, f"{path}.group[{label}]"
            )
            out_names = _value_names(out)
            if names_seen is None:
                names_seen = out_names
            elif out_names != names_seen:
                raise FitError(
                    f"groupwise: inner output columns differ across groups "
                    f"({names_seen} vs {out_names})"
                )
            groups.append({"label": label, "step": fitted})
        if not groups:
            raise FitError("groupwise: no observed groups in development data")
        global_fitted, global_out = fit_with_recovery(
            self.inner, rest, target, ctx, f"{path}.global"
        )
        if _value_names(global_out) != names_seen:
            raise FitError("groupwise: global fallback output columns differ from groups")
        return {"groups": groups, "global": global_fitted, "output_names": list(names_seen)}

    def _transform_block(self, block, ctx, path):
        by_col, rest = self._split(block)
        n = block.n_rows
        by_label = {g["label"]: g["step"] for g in self.state["groups"]}
        decoded = by_col.decoded()
        assignments: dict[str, list[int]] = {}
        fallback_rows: list[int] = []
        for i, label in enumerate(decoded):
            if label is not None and label in by_label:
                assignments.setdefault(label, []).append(i)
            else:
                fallback_rows.append(i)  # unseen group or missing: global fallback

        pieces: list[tuple[list[int], Block]] = []
        for label, rows in assignments.items():
            sub = Block(tuple(c.take(rows) for c in rest.columns))
            out = apply_with_recovery(by_label[label], sub, ctx, f"{path}.group[{label}]")
            pieces.append((rows, _as_output_block(out)))
        if fallback_rows:
            sub = Block(tuple(c.take(fallback_rows) for c in rest.columns))
            out = apply_with_recovery(self.state["global"], sub, ctx, f"{path}.global")
            pieces.append((fallback_rows, _as_output_block(out)))

        names = self.state["output_names"]
        arrays = {name: np.full(n, np.nan) for name in names}
        for rows, out in pieces:
            for name in names:
                arrays[name][rows] = out.get(name).numeric()
        return Block(tuple(Column(name, "continuous", arrays[name]) for name in names))


@dataclass(frozen=True)
class SubsetStep(TransformerStep):
    inner: TransformerStep | None = None

    kind = "subset"

    def _accept(self, value) -> Block:
        return as_block(value)

    def _split(self, block: Block):
        wanted = self.params["inputs"]
        missing = [w for w in wanted if w not in block.names]
        if missing:
            raise TransformError(f"subset: columns {missing} not present")
        sub = Block(tuple(block.get(w) for w in wanted))
        rest = tuple(c for c in block.columns if c.name not in wanted)
        return sub, rest

    def _fit_block(self, block, target, ctx, path):
        sub, _ = self._split(block)
        fitted, _ = fit_with_recovery(self.inner, sub, target, ctx, f"{path}.inner")
        return {"inner": fitted}

    def _transform_block(self, block, ctx, path):
        sub, rest = self._split(block)
        out = apply_with_recovery(self.state["inner"], sub, ctx, f"{path}.inner")
        transformed = _as_output_block(out)
        return Block(transformed.columns + rest)


@dataclass(frozen=True)
class ChainStep(TransformerStep):
    steps: tuple[TransformerStep, ...] = ()

    kind = "chain"

    def _accept(self, value) -> Block:
        return as_block_or_column(value)

    def _fit_block(self, block, target, ctx, path):
        fitted, _ = run_chain_fit(self.steps, block, target, ctx, f"{path}.")
        return {"steps": list(fitted)}

    def _transform_block(self, block, ctx, path):
        return run_chain_transform(self.state["steps"], block, ctx, f"{path}.")


class FeatureRefStep(TransformerStep):
    kind = "feature_ref"

    def _accept(self, value) -> Block:
        return as_block_or_column(value)

    def _fit_value(self, value, target, ctx, path):
        if self.fitted:
            raise FitError("feature_ref: already fitted")
        self._lookup(ctx)  # fail early if the pipeline did not provide values
        return replace(self, state={})

    def _lookup(self, ctx: ExecContext) -> Block:
        path = self.params["path"]
        if path not in ctx.nested:
            raise TransformError(
                f"feature_ref: values for {path!r} not available; execute through a pipeline"
            )
        return ctx.nested[path]

    def _fit_block(self, block, target, ctx, path):
        return {}

    def _transform_block(self, block, ctx, path):
        return self._lookup(ctx)


def _value_names(value) -> list[str]:
    if isinstance(value, Block):
        return value.names
    if isinstance(value, Column):
        return [value.name]
    return ["value"]


def _as_output_block(value) -> Block:
    if isinstance(value, Block):
        return value
    if isinstance(value, Column):
        return Block((value,))
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1:
        raise TransformError(f"step produced an unusable value of shape {arr.shape}")
    return Block((Column("value", "continuous", arr),))


# ---------------------------------------------------------------------------
# parameter contracts and the catalog


def _finite_number(value, where: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
        raise CatalogError(f"{where}: expected a finite number, got {value!r}")
    return float(value)


def _inner_spec(value, where: str, inputs, allow_ref: bool = False) -> TransformerSpec:
    spec = desugar_spec(value)
    if spec.primitive == "feature_ref" and not allow_ref:
        raise CatalogError(f"{where}: feature_ref is only allowed as a top-level or chain step")
    return spec


class PrimitiveCatalog:
    """Identifier -> (step class, validator); every spec validates against
    exactly one entry."""

    def __init__(self):
        self._entries: dict[str, dict] = {}

    def register(self, name: str, step_class, validator, supervised: bool = False, doc: str = ""):
        if name in self._entries:
            raise CatalogError(f"duplicate primitive {name!r}")
        self._entries[name] = {
            "class": step_class,
            "validator": validator,
            "supervised": supervised,
            "doc": doc,
        }

    def names(self) -> list[str]:
        return sorted(self._entries)

    def entry(self, name: str) -> dict:
        if name not in self._entries:
            raise CatalogError(f"unknown primitive {name!r}")
        return self._entries[name]

    def extended(self, name: str, step_class, validator, supervised: bool = False, doc: str = "") -> "PrimitiveCatalog":
        """Copy of this catalog with one extra primitive registered."""
        out = PrimitiveCatalog()
        out._entries.update(self._entries)
        out.register(name, step_class, validator, supervised, doc)
        return out

    def validate(self, spec: TransformerSpec, inputs: tuple[str, ...] | None) -> dict:
        return self.entry(spec.primitive)["validator"](spec.params, inputs, self)


def _v_empty(params, inputs, catalog):
    if params:
        raise CatalogError(f"unexpected params {sorted(params)}")
    return {}


def _v_expr(params, inputs, catalog):
    if set(params) != {"expression"}:
        raise CatalogError("expr: params must be exactly {'expression'}")
    text = params["expression"]
    if not isinstance(text, str) or not text.strip():
        raise CatalogError("expr: expression must be a non-empty string")
    expr = parse_expression(text, list(_collect_identifiers(text)))  # syntax check
    if inputs is not None and len(expr.variables) > 1:
        # multi-variable expressions must reference declared inputs by name;
        # a single variable may also act as an anonymous unary parameter
        undeclared = [v for v in expr.variables if v not in inputs]
        if undeclared:
            raise CatalogError(f"expr: undeclared variables {undeclared}")
    return {"expression": text}


def _v_impute(params, inputs, catalog):
    strategy = params.get("strategy")
    if strategy not in ("mean", "median", "most_frequent", "constant"):
        raise CatalogError(f"impute: unknown strategy {strategy!r}")
    allowed = {"strategy", "value"} if strategy == "constant" else {"strategy"}
    if set(params) - allowed:
        raise CatalogError(f"impute: unexpected params {sorted(set(params) - allowed)}")
    out = {"strategy": strategy}
    if strategy == "constant":
        if "value" not in params:
            raise CatalogError("impute/constant: missing 'value'")
        value = params["value"]
        if isinstance(value, str):
            out["value"] = value
        else:
            out["value"] = _finite_number(value, "impute/constant value")
    return out


def _v_scale(params, inputs, catalog):
    mode = params.get("mode")
    if mode not in ("standard", "minmax") or set(params) != {"mode"}:
        raise CatalogError(f"scale: mode must be 'standard' or 'minmax', got {params!r}")
    return {"mode": mode}


def _v_one_hot(params, inputs, catalog):
    if set(params) != {"max_cardinality"}:
        raise CatalogError("one_hot: params must be exactly {'max_cardinality'}")
    mc = params["max_cardinality"]
    if not isinstance(mc, int) or isinstance(mc, bool) or mc < 1:
        raise CatalogError(f"one_hot: max_cardinality must be a positive integer, got {mc!r}")
    return {"max_cardinality": mc}


def _v_value_map(params, inputs, catalog):
    if set(params) != {"mapping", "default"}:
        raise CatalogError("value_map: params must be exactly {'mapping', 'default'}")
    mapping = params["mapping"]
    if not isinstance(mapping, dict) or not mapping:
        raise CatalogError("value_map: mapping must be a non-empty object")
    norm = {}
    for key, value in mapping.items():
        norm[str(key)] = _finite_number(value, f"value_map mapping[{key!r}]")
    default = params["default"]
    if default in ("missing", "error"):
        return {"mapping": norm, "default": default}
    return {"mapping": norm, "default": _finite_number(default, "value_map default")}


def _v_clip_quantile(params, inputs, catalog):
    if set(params) != {"lo_q", "hi_q"}:
        raise CatalogError("clip_quantile: params must be exactly {'lo_q', 'hi_q'}")
    lo = _finite_number(params["lo_q"], "clip_quantile lo_q")
    hi = _finite_number(params["hi_q"], "clip_quantile hi_q")
    if not (0.0 <= lo < hi <= 1.0):
        raise CatalogError(f"clip_quantile: need 0 <= lo_q < hi_q <= 1, got {lo}, {hi}")
    return {"lo_q": lo, "hi_q": hi}


_CHECKS = ("skew_gt", "missing_frac_gt", "variance_lt", "cardinality_gt")


def _v_conditional(params, inputs, catalog):
    allowed = {"check", "then", "else"}
    if "check" not in params or "then" not in params or set(params) - allowed:
        raise CatalogError("conditional: params must be {'check', 'then'[, 'else']}")
    check = params["check"]
    if not isinstance(check, dict) or check.get("kind") not in _CHECKS:
        raise CatalogError(f"conditional: check.kind must be one of {_CHECKS}")
    if set(check) != {"kind", "threshold"}:
        raise CatalogError("conditional: check must be {'kind', 'threshold'}")
    threshold = _finite_number(check["threshold"], "conditional threshold")
    out = {
        "check": {"kind": check["kind"], "threshold": threshold},
        "then": _validated_inner(params["then"], "conditional.then", inputs, catalog),
    }
    if params.get("else") is not None:
        out["else"] = _validated_inner(params["else"], "conditional.else", inputs, catalog)
    return out


def _v_groupwise(params, inputs, catalog):
    if set(params) != {"by", "inner"}:
        raise CatalogError("groupwise: params must be exactly {'by', 'inner'}")
    by = params["by"]
    if not isinstance(by, str) or not by or (inputs is not None and by not in inputs):
        raise CatalogError(f"groupwise: by-column {by!r} must be one of the feature inputs")
    return {"by": by, "inner": _validated_inner(params["inner"], "groupwise.inner", inputs, catalog)}


def _v_subset(params, inputs, catalog):
    if set(params) != {"inputs", "inner"}:
        raise CatalogError("subset: params must be exactly {'inputs', 'inner'}")
    cols = params["inputs"]
    if (
        not isinstance(cols, (list, tuple))
        or not cols
        or any(not isinstance(c, str) for c in cols)
        or len(set(cols)) != len(cols)
    ):
        raise CatalogError("subset: inputs must be a non-empty list of unique column names")
    return {
        "inputs": list(cols),
        "inner": _validated_inner(params["inner"], "subset.inner", inputs, catalog),
    }


def _v_feature_ref(params, inputs, catalog):
    if set(params) != {"path"} or not isinstance(params["path"], str) or not params["path"]:
        raise CatalogError("feature_ref: params must be exactly {'path': <non-empty string>}")
    return {"path": params["path"]}


def _v_chain(params, inputs, catalog):
    if set(params) != {"steps"}:
        raise CatalogError("chain: params must be exactly {'steps'}")
    steps = params["steps"]
    if not isinstance(steps, (list, tuple)) or not steps:
        raise CatalogError("chain: steps must be a non-empty list")
    return {
        "steps": [
            _validated_inner(s, f"chain.steps[{i}]", inputs, catalog, allow_ref=True)
            for i, s in enumerate(steps)
        ]
    }


def _validated_inner(value, where, inputs, catalog, allow_ref: bool = False) -> TransformerSpec:
    spec = _inner_spec(value, where, inputs, allow_ref)
    normalized = catalog.validate(spec, inputs)
    return TransformerSpec(spec.primitive, normalized)


_STANDARD: PrimitiveCatalog | None = None


def standard_catalog() -> PrimitiveCatalog:
    global _STANDARD
    if _STANDARD is not None:
        return _STANDARD
    cat = PrimitiveCatalog()
    cat.register("identity", IdentityStep, _v_empty, doc="pass inputs through unchanged")
    cat.register("expr", ExprStep, _v_expr, doc="row-wise arithmetic expression")
    cat.register("impute", ImputeStep, _v_impute, doc="fill missing values with a learned statistic")
    cat.register("scale", ScaleStep, _v_scale, doc="standard or min-max scaling")
    cat.register("one_hot", OneHotStep, _v_one_hot, doc="indicator column per seen category")
    cat.register("value_map", ValueMapStep, _v_value_map, doc="explicit value-to-number mapping")
    cat.register("null_indicator", NullIndicatorStep, _v_empty, doc="1.0 where a cell is missing")
    cat.register("clip_quantile", ClipQuantileStep, _v_clip_quantile, doc="clip to learned quantiles")
    cat.register("conditional", ConditionalStep, _v_conditional, doc="apply a branch if a development-data check holds")
    cat.register("groupwise", GroupwiseStep, _v_groupwise, doc="fit the inner step separately per group")
    cat.register("subset", SubsetStep, _v_subset, doc="apply the inner step to some columns, pass the rest through")
    cat.register("feature_ref", FeatureRefStep, _v_feature_ref, doc="splice in another feature's output values")
    cat.register("chain", ChainStep, _v_chain, doc="apply steps in sequence")
    _STANDARD = cat
    return cat


def validate_feature_params(
    fd: FeatureDefinition, catalog: PrimitiveCatalog | None = None
) -> tuple[TransformerSpec, ...]:
    """Validate every step against the catalog; returns the normalized steps
    (sugar expanded, defaults applied)."""
    catalog = catalog or standard_catalog()
    normalized = []
    for i, spec in enumerate(fd.transformer):
        try:
            normalized.append(TransformerSpec(spec.primitive, catalog.validate(spec, fd.input)))
        except CatalogError as exc:
            raise CatalogError(f"{fd.key} step {i}: {exc}") from exc
    return tuple(normalized)


def instantiate(
    spec, catalog: PrimitiveCatalog | None = None, inputs: tuple[str, ...] | None = None
) -> TransformerStep:
    """Build an unfitted step from a (possibly sugared) spec.

    ``inputs`` gives the declared feature inputs for validation; without it,
    input-dependent checks (expression variables, groupwise by-column
    membership) are deferred to fit/transform time.
    """
    catalog = catalog or standard_catalog()
    spec = desugar_spec(spec)
    params = catalog.validate(spec, inputs)
    step_class = catalog.entry(spec.primitive)["class"]
    return _build(step_class, spec.primitive, params, catalog)


def _build(step_class, primitive: str, params: dict, catalog: PrimitiveCatalog) -> TransformerStep:
    if primitive == "conditional":
        then_step = _build_inner(params["then"], catalog)
        else_step = _build_inner(params["else"], catalog) if "else" in params else None
        return ConditionalStep(params=params, then_step=then_step, else_step=else_step)
    if primitive == "groupwise":
        return GroupwiseStep(params=params, inner=_build_inner(params["inner"], catalog))
    if primitive == "subset":
        return SubsetStep(params=params, inner=_build_inner(params["inner"], catalog))
    if primitive == "chain":
        return ChainStep(params=params, steps=tuple(_build_inner(s, catalog) for s in params["steps"]))
    return step_class(params=params)


def _build_inner(spec: TransformerSpec, catalog: PrimitiveCatalog) -> TransformerStep:
    step_class = catalog.entry(spec.primitive)["class"]
    return _build(step_class, spec.primitive, spec.params, catalog)


# public operation aliases matching the module contract
def fit(step: TransformerStep, dev_inputs, dev_target: Column | None = None) -> TransformerStep:
    return step.fit(dev_inputs, dev_target)


def transform(step: TransformerStep, inputs, ctx: ExecContext | None = None):
    return step.transform(inputs, ctx)


# ---------------------------------------------------------------------------
# fitted-state serialization


def serialize_step(step: TransformerStep) -> dict:
    from .features import _spec_to_doc

    doc = _spec_to_doc(TransformerSpec(step.kind, step.params))
    doc["state"] = _state_to_doc(step.state)
    return doc


def _state_to_doc(state):
    if state is None:
        return None
    out = {}
    for key in sorted(state):
        value = state[key]
        if isinstance(value, TransformerStep):
            out[key] = serialize_step(value)
        elif isinstance(value, (list, tuple)) and value and isinstance(value[0], (TransformerStep, dict)):
            out[key] = [
                serialize_step(v) if isinstance(v, TransformerStep) else _dict_with_steps(v)
                for v in value
            ]
        elif value is None or isinstance(value, (bool, int, float, str)):
            out[key] = value
        elif isinstance(value, (list, tuple)):
            out[key] = list(value)
        else:
            raise TransformError(f"unserializable state entry {key!r}: {type(value).__name__}")
    return out


def _dict_with_steps(d: dict) -> dict:
    return {
        k: serialize_step(v) if isinstance(v, TransformerStep) else v for k, v in sorted(d.items())
    }


def deserialize_step(doc: dict, catalog: PrimitiveCatalog | None = None) -> TransformerStep:
    catalog = catalog or standard_catalog()
    spec = TransformerSpec(doc["primitive"], _docs_to_specs(doc["params"]))
    step = _build(catalog.entry(spec.primitive)["class"], spec.primitive, spec.params, catalog)
    state = doc.get("state")
    if state is None:
        return step
    return replace(step, state=_doc_to_state(state, catalog))


def _docs_to_specs(params: dict) -> dict:
    out = {}
    for key, value in params.items():
        if isinstance(value, dict) and set(value) == {"primitive", "params"}:
            out[key] = TransformerSpec(value["primitive"], _docs_to_specs(value["params"]))
        elif isinstance(value, list) and value and isinstance(value[0], dict) and set(value[0]) == {"primitive", "params"}:
            out[key] = [TransformerSpec(v["primitive"], _docs_to_specs(v["params"])) for v in value]
        else:
            out[key] = value
    return out


def _is_step_doc(value) -> bool:
    return isinstance(value, dict) and set(value) == {"primitive", "params", "state"}


def _doc_to_state(state: dict, catalog: PrimitiveCatalog) -> dict:
    out = {}
    for key, value in state.items():
        if _is_step_doc(value):
            out[key] = deserialize_step(value, catalog)
        elif isinstance(value, list) and value and (_is_step_doc(value[0]) or isinstance(value[0], dict)):
            out[key] = [
                deserialize_step(v, catalog)
                if _is_step_doc(v)
                else {k: deserialize_step(sv, catalog) if _is_step_doc(sv) else sv for k, sv in v.items()}
                for v in value
            ]
        else:
            out[key] = value
    return out
