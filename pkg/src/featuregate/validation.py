"""Software-quality validation: the 15-check feature API battery and
project-structure validation of contribution patches.

Every check runs in isolation on seeded subsamples: a fresh unfitted
instantiation, no shared mutable state, and a wall-clock budget. A failing
check never halts the rest of the battery; its result carries advice text
for the contributor.
"""

from __future__ import annotations

import copy
import json
import re
import time
from dataclasses import dataclass, field

import numpy as np

from .engine import build_pipeline, export_bundle, fit_pipeline, load_bundle, transform
from .errors import FeatureGateError
from .features import FeatureDefinition, parse_feature
from .primitives import PrimitiveCatalog, standard_catalog
from .table import Table, subsample

CHECK_ORDER = (
    "IsFeatureCheck",
    "HasCorrectInputTypeCheck",
    "HasTransformerInterfaceCheck",
    "CanFitCheck",
    "CanFitOneRowCheck",
    "CanFitTransformCheck",
    "CanTransformCheck",
    "CanTransformNewRowsCheck",
    "CanTransformOneRowCheck",
    "HasCorrectOutputDimensionsCheck",
    "CanMakeMapperCheck",
    "NoMissingValuesCheck",
    "NoInfiniteValuesCheck",
    "CanDeepcopyCheck",
    "CanPickleCheck",
)


@dataclass(frozen=True)
class ValidationConfig:
    dev_subsample: int = 100
    holdout_subsample: int = 100
    seed: int = 0
    step_budget_seconds: float = 10.0
    catalog: PrimitiveCatalog | None = None


@dataclass(frozen=True)
class CheckResult:
    name: str
    outcome: str  # pass | fail
    advice: str  # non-empty on fail
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.outcome == "pass"


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]
    overall: str  # accepted | rejected
    subsample: dict

    @property
    def accepted(self) -> bool:
        return self.overall == "accepted"

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self) -> str:
        doc = {
            "checks": [
                {"name": c.name, "outcome": c.outcome, "advice": c.advice, "detail": c.detail}
                for c in self.checks
            ],
            "overall": self.overall,
            "subsample": self.subsample,
        }
        return json.dumps(doc, indent=2, ensure_ascii=True, allow_nan=False) + "\n"


class _Battery:
    """One validation run; holds the subsamples and memoizes nothing across
    checks (each check re-instantiates and re-fits)."""

    def __init__(self, document, dev: Table, holdout: Table, config: ValidationConfig, registry):
        self.document = document
        self.dev = dev
        self.holdout = holdout
        self.config = config
        self.registry = registry or {}
        self.catalog = config.catalog or standard_catalog()
        self.dev_sub = subsample(dev, min(config.dev_subsample, dev.row_count), config.seed)
        self.holdout_sub = subsample(
            holdout, min(config.holdout_subsample, holdout.row_count), config.seed
        )
        # one-row probes draw with seed+1 so they are not forced to overlap
        # the leading rows of the main subsamples
        self.one_dev = subsample(dev, 1, config.seed + 1)
        self.one_holdout = subsample(holdout, 1, config.seed + 1)

    # shared helpers --------------------------------------------------------
    def parse_structural(self) -> FeatureDefinition:
        if isinstance(self.document, FeatureDefinition):
            return self.document
        return parse_feature(self.document, validate_params=False)

    def parse_full(self) -> FeatureDefinition:
        doc = self.document
        if isinstance(doc, FeatureDefinition):
            from .primitives import validate_feature_params

            validate_feature_params(doc, self.catalog)
            return doc
        return parse_feature(doc) if self.catalog is standard_catalog() else self._parse_with_catalog(doc)

    def _parse_with_catalog(self, doc) -> FeatureDefinition:
        from dataclasses import replace

        from .primitives import validate_feature_params

        fd = parse_feature(doc, validate_params=False)
        return replace(fd, transformer=validate_feature_params(fd, self.catalog))

    def fit(self, table: Table):
        fd = self.parse_full()
        pipeline = build_pipeline([fd], self.registry, self.dev.schema, self.catalog)
        return fit_pipeline(pipeline, table)

    def fit_only(self, table: Table):
        """Fit the step chain without applying the final step, so a
        transform-only defect is not misreported as a fit failure. Features
        with nested references go through the full pipeline instead."""
        from .features import iter_references
        from .primitives import Block, ExecContext, instantiate, run_chain_fit

        fd = self.parse_full()
        if any(True for _ in iter_references(fd)):
            self.fit(table)
            return
        steps = [instantiate(spec, self.catalog, fd.input) for spec in fd.transformer]
        block = Block(tuple(table.column(name) for name in fd.input))
        target = table.target_column if table.schema.target else None
        run_chain_fit(steps, block, target, ExecContext(), "", need_output=False)

    def fit_transform(self, fit_table: Table, apply_table: Table):
        fp = self.fit(fit_table)
        return fp, transform(fp, apply_table, enforce_finite=False)

    # checks -----------------------------------------------------------------
    def check_is_feature(self):
        self.parse_structural()
        return {}

    def check_input_type(self):
        fd = self.parse_structural()
        known = set(self.dev.schema.names)
        missing = [c for c in fd.input if c not in known]
        if missing:
            raise FeatureGateError(f"inputs {missing} are not columns of the project data")
        return {"inputs": list(fd.input)}

    def check_transformer_interface(self):
        fd = self.parse_full()
        return {"steps": [s.primitive for s in fd.transformer]}

    def check_can_fit(self):
        self.fit_only(self.dev_sub)
        return {}

    def check_can_fit_one_row(self):
        # interpretation: the fit must succeed and transforming that same
        # row must return exactly one row
        fp, matrix = self.fit_transform(self.one_dev, self.one_dev)
        if matrix.row_count != 1:
            raise FeatureGateError(f"one-row fit produced {matrix.row_count} rows")
        return {}

    def check_can_fit_transform(self):
        fp, matrix = self.fit_transform(self.dev_sub, self.dev_sub)
        if matrix.row_count != self.dev_sub.row_count:
            raise FeatureGateError("fit-transform changed the row count")
        return {}

    def check_can_transform(self):
        self.fit_transform(self.dev_sub, self.dev_sub)
        return {}

    def check_can_transform_new_rows(self):
        self.fit_transform(self.dev_sub, self.holdout_sub)
        return {}

    def check_can_transform_one_row(self):
        fp, matrix = self.fit_transform(self.dev_sub, self.one_holdout)
        if matrix.row_count != 1:
            raise FeatureGateError(f"single-row transform produced {matrix.row_count} rows")
        return {}

    def check_output_dimensions(self):
        fd = self.parse_full()
        fp, dev_m = self.fit_transform(self.dev_sub, self.dev_sub)
        hold_m = transform(fp, self.holdout_sub, enforce_finite=False)
        if dev_m.row_count != self.dev_sub.row_count or hold_m.row_count != self.holdout_sub.row_count:
            raise FeatureGateError("output rows do not match input rows")
        if len(dev_m.names) != len(hold_m.names):
            raise FeatureGateError(
                f"output dimensionality is unstable across calls "
                f"({len(dev_m.names)} vs {len(hold_m.names)})"
            )
        if fd.output is not None and len(fd.output) != len(dev_m.names):
            raise FeatureGateError(
                f"declared {len(fd.output)} output names but the fitted feature "
                f"produces {len(dev_m.names)} columns"
            )
        return {"q": len(dev_m.names)}

    def check_can_make_mapper(self):
        # the full pipeline path: build, fit, execute, with output naming
        fp = self.fit(self.dev_sub)
        transform(fp, self.dev_sub, enforce_finite=False)
        return {"output": list(fp.output_names)}

    def _matrices(self):
        fp, dev_m = self.fit_transform(self.dev_sub, self.dev_sub)
        hold_m = transform(fp, self.holdout_sub, enforce_finite=False)
        return dev_m, hold_m

    def check_no_missing(self):
        for label, matrix in zip(("development", "holdout"), self._matrices()):
            for j, name in enumerate(matrix.names):
                if np.isnan(matrix.values[:, j]).any():
                    raise FeatureGateError(
                        f"output column {name!r} contains missing values on {label} rows"
                    )
        return {}

    def check_no_infinite(self):
        for label, matrix in zip(("development", "holdout"), self._matrices()):
            for j, name in enumerate(matrix.names):
                if np.isinf(matrix.values[:, j]).any():
                    raise FeatureGateError(
                        f"output column {name!r} contains infinite values on {label} rows"
                    )
        return {}

    def check_deepcopy(self):
        fp = self.fit(self.dev_sub)
        clone = copy.deepcopy(fp)
        if clone.fitted != fp.fitted:
            raise FeatureGateError("deep copy of the fitted feature does not equal the original")
        a = transform(fp, self.holdout_sub, enforce_finite=False)
        b = transform(clone, self.holdout_sub, enforce_finite=False)
        if a.names != b.names or not np.array_equal(a.values, b.values, equal_nan=True):
            raise FeatureGateError("deep-copied feature transforms differently")
        return {}

    def check_pickle(self):
        fp = self.fit(self.dev_sub)
        try:
            text = export_bundle(fp)
        except (ValueError, TypeError, FeatureGateError) as exc:
            raise FeatureGateError(f"fitted state is not serializable: {exc}") from exc
        again = load_bundle(text, self.catalog)
        a = transform(fp, self.holdout_sub, enforce_finite=False)
        b = transform(again, self.holdout_sub, enforce_finite=False)
        if a.names != b.names or not np.array_equal(a.values, b.values, equal_nan=True):
            raise FeatureGateError("feature transforms differently after a serialization round-trip")
        return {}


_ADVICE = {
    "IsFeatureCheck": "Provide a JSON document that defines exactly one feature object with name, author, input, and transformer fields.",
    "HasCorrectInputTypeCheck": "Declare inputs that name existing columns of the project data.",
    "HasTransformerInterfaceCheck": "Use transformer steps from the primitive catalog with valid parameters.",
    "CanFitCheck": "The feature must fit on a development subsample; check learned-step requirements such as column kinds and observed values.",
    "CanFitOneRowCheck": "The feature must fit on a single development row; avoid steps that need more data than one row provides.",
    "CanFitTransformCheck": "After fitting, the feature must transform the same rows it was fitted on.",
    "CanTransformCheck": "The fitted feature must transform the development subsample.",
    "CanTransformNewRowsCheck": "The fitted feature must transform unseen rows; handle values that only appear outside the development data.",
    "CanTransformOneRowCheck": "The fitted feature must transform a single row; avoid whole-batch assumptions.",
    "HasCorrectOutputDimensionsCheck": "Produce one output row per input row with a stable column count matching any declared output names.",
    "CanMakeMapperCheck": "The feature must build and execute as a single-feature pipeline, including unique output column names.",
    "NoMissingValuesCheck": "Impute or otherwise remove missing values before the final output.",
    "NoInfiniteValuesCheck": "Bound or rescale computations so outputs stay finite.",
    "CanDeepcopyCheck": "Fitted state must survive an in-memory clone; avoid unclonable state objects.",
    "CanPickleCheck": "Fitted state must serialize and reload; keep learned parameters to plain finite numbers, strings, and lists.",
}


def validate_feature_api(
    document,
    dev: Table,
    holdout: Table,
    config: ValidationConfig | None = None,
    registry: dict[str, FeatureDefinition] | None = None,
) -> ValidationReport:
    """Run the full 15-check battery in order; failures never raise."""
    config = config or ValidationConfig()
    battery = _Battery(document, dev, holdout, config, registry)
    checks = {
        "IsFeatureCheck": battery.check_is_feature,
        "HasCorrectInputTypeCheck": battery.check_input_type,
        "HasTransformerInterfaceCheck": battery.check_transformer_interface,
        "CanFitCheck": battery.check_can_fit,
        "CanFitOneRowCheck": battery.check_can_fit_one_row,
        "CanFitTransformCheck": battery.check_can_fit_transform,
        "CanTransformCheck": battery.check_can_transform,
        "CanTransformNewRowsCheck": battery.check_can_transform_new_rows,
        "CanTransformOneRowCheck": battery.check_can_transform_one_row,
        "HasCorrectOutputDimensionsCheck": battery.check_output_dimensions,
        "CanMakeMapperCheck": battery.check_can_make_mapper,
        "NoMissingValuesCheck": battery.check_no_missing,
        "NoInfiniteValuesCheck": battery.check_no_infinite,
        "CanDeepcopyCheck": battery.check_deepcopy,
        "CanPickleCheck": battery.check_pickle,
    }
    results = []
    for name in CHECK_ORDER:
        started = time.monotonic()
        try:
            detail = checks[name]()
            outcome, advice = "pass", ""
        except Exception as exc:  # any failure is a result, not an exception
            outcome = "fail"
            advice = f"{_ADVICE[name]} ({exc})"
            detail = {"error": str(exc)}
        elapsed = time.monotonic() - started
        if outcome == "pass" and elapsed > config.step_budget_seconds:
            outcome = "fail"
            advice = (
                f"check exceeded the {config.step_budget_seconds} s budget; "
                "simplify the feature or raise the budget"
            )
        results.append(CheckResult(name, outcome, advice, detail))
    overall = "accepted" if all(r.passed for r in results) else "rejected"
    return ValidationReport(
        tuple(results),
        overall,
        {
            "dev_rows": battery.dev_sub.row_count,
            "holdout_rows": battery.holdout_sub.row_count,
            "seed": config.seed,
        },
    )


# ---------------------------------------------------------------------------
# project-structure validation


@dataclass(frozen=True)
class PatchEntry:
    path: str
    change_kind: str  # add | modify | delete
    content: str | None = None


@dataclass(frozen=True)
class Patch:
    entries: tuple[PatchEntry, ...]


@dataclass(frozen=True)
class StructureReport:
    accepted: bool
    reasons: tuple[str, ...]
    login: str | None = None
    feature_name: str | None = None
    path: str | None = None

    def to_json(self) -> str:
        doc = {
            "accepted": self.accepted,
            "reasons": list(self.reasons),
            "login": self.login,
            "feature_name": self.feature_name,
            "path": self.path,
        }
        return json.dumps(doc, indent=2, ensure_ascii=True) + "\n"


_CONTRIB_PATH = re.compile(r"^features/contrib/user_([A-Za-z0-9_]+)/feature_([A-Za-z0-9_]+)\.json$")


def validate_patch(patch: Patch, catalog: PrimitiveCatalog | None = None) -> StructureReport:
    """A contribution is exactly one added feature document at its
    convention path, authored by the login in that path."""
    reasons = []
    if len(patch.entries) == 0:
        return StructureReport(False, ("patch contains no changes",))
    if len(patch.entries) > 1:
        extras = [e.path for e in patch.entries]
        return StructureReport(
            False,
            (f"patch must add exactly one feature document, found {len(extras)} changes: {extras}",),
        )
    entry = patch.entries[0]
    if ".." in entry.path or entry.path.startswith("/") or "\\" in entry.path:
        return StructureReport(False, (f"path {entry.path!r} is not repository-relative",))
    if entry.change_kind != "add":
        return StructureReport(
            False,
            (f"only additions are accepted; {entry.path!r} is a {entry.change_kind}",),
            path=entry.path,
        )
    match = _CONTRIB_PATH.match(entry.path)
    if not match:
        return StructureReport(
            False,
            (
                f"path {entry.path!r} does not follow "
                "features/contrib/user_<login>/feature_<name>.json",
            ),
            path=entry.path,
        )
    login, name = match.group(1), match.group(2)
    if entry.content is None:
        return StructureReport(False, ("added file has no content",), login, name, entry.path)
    try:
        fd = parse_feature(entry.content) if catalog is None else _parse_with(entry.content, catalog)
    except FeatureGateError as exc:
        return StructureReport(False, (f"document does not parse: {exc}",), login, name, entry.path)
    if fd.author != login:
        return StructureReport(
            False,
            (f"feature author {fd.author!r} does not match path login {login!r}",),
            login,
            name,
            entry.path,
        )
    return StructureReport(True, (), login, name, entry.path)


def _parse_with(content: str, catalog: PrimitiveCatalog) -> FeatureDefinition:
    from dataclasses import replace

    from .primitives import validate_feature_params

    fd = parse_feature(content, validate_params=False)
    return replace(fd, transformer=validate_feature_params(fd, catalog))
