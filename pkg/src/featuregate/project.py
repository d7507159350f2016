"""Project layout, configuration, and persistent state.

A project directory binds together the training data, accepted feature
documents, the decision log, and the selection parameters:

    featuregate.json            project configuration
    data/train.csv              training data (copied at scaffold time)
    data/schema.json            column schema with the prediction target
    features/contrib/user_<login>/feature_<name>.json   accepted features
    features/attic/             pruned features, kept for audit
    logs/decisions.jsonl        append-only acceptance/prune log
    cache/pipeline.json         fitted-pipeline bundle, invalidated by a
                                (feature set, data) content hash

Mutations take an exclusive lock file; readers need no lock. The accepted
set used for selection state and pipeline order is reconstructed from the
decision log (acceptance order), since prune semantics depend on it.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .engine import FittedPipeline, build_pipeline, export_bundle, fit_pipeline, load_bundle
from .errors import FeatureGateError, ProjectError
from .features import FeatureDefinition, parse_feature, serialize_feature
from .selection import SelectionParams
from .table import Schema, SplitPair, Table, load_table, split
from .validation import ValidationConfig

CONFIG_NAME = "featuregate.json"
LOG_PATH = "logs/decisions.jsonl"
CACHE_BUNDLE = "cache/pipeline.json"
CACHE_KEY = "cache/pipeline.key"
CONTRIB_DIR = "features/contrib"
ATTIC_DIR = "features/attic"


@dataclass(frozen=True)
class ProjectConfig:
    name: str
    train_csv: str
    schema_json: str
    target: str
    dev_fraction: float = 0.8
    split_seed: int = 0
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    selection: SelectionParams = field(default_factory=SelectionParams)

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "data": {"train_csv": self.train_csv, "schema": self.schema_json},
            "target": self.target,
            "split": {"dev_fraction": self.dev_fraction, "seed": self.split_seed},
            "validation": {
                "dev_subsample": self.validation.dev_subsample,
                "holdout_subsample": self.validation.holdout_subsample,
                "seed": self.validation.seed,
                "step_budget_seconds": self.validation.step_budget_seconds,
            },
            "selection": {
                "lambda1": self.selection.lambda1,
                "lambda2": self.selection.lambda2,
                "k": self.selection.k,
                "seed": self.selection.seed,
                "eval_rows": self.selection.eval_rows,
                "max_condition_columns": self.selection.max_condition_columns,
                "accepter": self.selection.accepter,
            },
        }
        return json.dumps(doc, indent=2, ensure_ascii=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> ProjectConfig:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ProjectError(f"malformed {CONFIG_NAME}: {exc}") from exc
        try:
            val = doc.get("validation", {})
            sel = doc.get("selection", {})
            return cls(
                name=doc["name"],
                train_csv=doc["data"]["train_csv"],
                schema_json=doc["data"]["schema"],
                target=doc["target"],
                dev_fraction=doc.get("split", {}).get("dev_fraction", 0.8),
                split_seed=doc.get("split", {}).get("seed", 0),
                validation=ValidationConfig(
                    dev_subsample=val.get("dev_subsample", 100),
                    holdout_subsample=val.get("holdout_subsample", 100),
                    seed=val.get("seed", 0),
                    step_budget_seconds=val.get("step_budget_seconds", 10.0),
                ),
                selection=SelectionParams(
                    lambda1=sel.get("lambda1", 0.04),
                    lambda2=sel.get("lambda2", 0.01),
                    k=sel.get("k", 3),
                    seed=sel.get("seed", 0),
                    accepter=sel.get("accepter", {"kind": "sfds"}),
                    eval_rows=sel.get("eval_rows", 2000),
                    max_condition_columns=sel.get("max_condition_columns", 10),
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProjectError(f"invalid {CONFIG_NAME}: {exc}") from exc

    def with_seed(self, seed: int) -> ProjectConfig:
        """Override every seed (split, validation, selection) at once."""
        from dataclasses import replace

        return replace(
            self,
            split_seed=seed,
            validation=replace(self.validation, seed=seed),
            selection=replace(self.selection, seed=seed),
        )


@dataclass
class ProjectState:
    features: list[tuple[str, FeatureDefinition]]  # (relative path, parsed), path order
    log: list[dict]

    def accepted_keys(self) -> list[str]:
        """Acceptance order reconstructed from the decision log."""
        order: list[str] = []
        for event in self.log:
            if event.get("outcome") == "accepted":
                order.append(event["feature"])
            for pruned in event.get("pruned", ()):
                if pruned["feature"] in order:
                    order.remove(pruned["feature"])
        return order

    def by_key(self) -> dict[str, tuple[str, FeatureDefinition]]:
        return {fd.key: (path, fd) for path, fd in self.features}


@dataclass
class Project:
    root: Path
    config: ProjectConfig
    state: ProjectState

    # data access -----------------------------------------------------------
    def schema(self) -> Schema:
        return Schema.from_json((self.root / self.config.schema_json).read_text())

    def train_table(self) -> Table:
        return load_table((self.root / self.config.train_csv).read_bytes(), self.schema())

    def split_pair(self) -> SplitPair:
        return split(self.train_table(), self.config.dev_fraction, self.config.split_seed)

    def registry(self) -> dict[str, FeatureDefinition]:
        return {path: fd for path, fd in self.state.features}

    def pipeline_features(self) -> list[FeatureDefinition]:
        """Accepted features in decision-log order; any documents without a
        log entry follow in path order."""
        by_key = self.state.by_key()
        ordered: list[FeatureDefinition] = []
        seen = set()
        for key in self.state.accepted_keys():
            if key in by_key and key not in seen:
                ordered.append(by_key[key][1])
                seen.add(key)
        for path, fd in self.state.features:
            if fd.key not in seen:
                ordered.append(fd)
                seen.add(fd.key)
        return ordered

    # locking ----------------------------------------------------------------
    @contextmanager
    def lock(self):
        """Single-writer guard; concurrent readers need no lock."""
        path = self.root / ".featuregate.lock"
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ProjectError(f"project is locked by another writer ({path})") from None
        try:
            os.write(fd, str(os.getpid()).encode())
            yield
        finally:
            os.close(fd)
            path.unlink(missing_ok=True)

    # state mutation ---------------------------------------------------------
    def feature_path(self, fd: FeatureDefinition) -> str:
        return f"{CONTRIB_DIR}/user_{fd.author}/feature_{fd.name}.json"

    def write_feature(self, fd: FeatureDefinition) -> str:
        rel = self.feature_path(fd)
        target = self.root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(serialize_feature(fd))
        return rel

    def move_to_attic(self, key: str) -> str | None:
        entry = self.state.by_key().get(key)
        if entry is None:
            return None
        rel, _ = entry
        src = self.root / rel
        dst = self.root / ATTIC_DIR / Path(rel).relative_to(CONTRIB_DIR)
        dst.parent.mkdir(parents=True, exist_ok=True)
        src.rename(dst)
        return str(dst.relative_to(self.root))

    def append_log(self, event: dict) -> None:
        path = self.root / LOG_PATH
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=True, allow_nan=False) + "\n")

    def reload(self) -> None:
        fresh = load_project(self.root)
        self.config = fresh.config
        self.state = fresh.state

    # fitted-pipeline cache ----------------------------------------------------
    def _cache_key(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for path, _ in self.state.features:
            h.update(path.encode())
            h.update((self.root / path).read_bytes())
        h.update((self.root / self.config.train_csv).read_bytes())
        h.update((self.root / self.config.schema_json).read_bytes())
        h.update(json.dumps(self.state.accepted_keys()).encode())
        return h.hexdigest()

    def fitted_pipeline(self, workers: int = 1) -> FittedPipeline:
        """Fit on the project development split, reusing the cached bundle
        when the (feature set, data) hash matches."""
        key = self._cache_key()
        bundle_path = self.root / CACHE_BUNDLE
        key_path = self.root / CACHE_KEY
        if bundle_path.exists() and key_path.exists() and key_path.read_text() == key:
            return load_bundle(bundle_path.read_text())
        pipeline = build_pipeline(self.pipeline_features(), self.registry(), self.schema())
        fitted = fit_pipeline(pipeline, self.split_pair().development, workers=workers)
        with self.lock():
            bundle_path.parent.mkdir(parents=True, exist_ok=True)
            bundle_path.write_text(export_bundle(fitted))
            key_path.write_text(key)
        return fitted


README_TEMPLATE = """# {name}

A collaborative feature-engineering project managed with featuregate.

Your task: develop feature definitions for the prediction target
`{target}` and submit them to this repository. Each submission is a JSON
document declaring the raw input columns it consumes and the transformer
steps that turn them into model-ready feature values.

Workflow:

    featuregate validate --feature my_feature.json   # check before submitting
    featuregate submit --feature my_feature.json     # validate and merge
    featuregate engineer --input new_rows.csv --output features.csv

Accepted features live under `features/contrib/`; every accept/prune
decision is recorded in `logs/decisions.jsonl`.
"""


def scaffold(name: str, target: str, train_csv: str | Path, schema_json: str | Path, destination: str | Path) -> Path:
    """Render a fresh project directory; destination must be empty or absent."""
    dest = Path(destination)
    if dest.exists() and any(dest.iterdir()):
        raise ProjectError(f"destination {dest} exists and is not empty")
    train_csv = Path(train_csv)
    schema_json = Path(schema_json)
    try:
        schema_text = schema_json.read_text()
        train_bytes = train_csv.read_bytes()
    except OSError as exc:
        raise ProjectError(f"unreadable input: {exc}") from exc
    schema = Schema.from_json(schema_text)
    if target not in schema.names:
        raise ProjectError(f"target {target!r} is not a column of the provided schema")
    schema = Schema(schema.columns, target=target, target_kind=schema.target_kind)
    load_table(train_bytes, schema)  # fail early on bad data

    dest.mkdir(parents=True, exist_ok=True)
    (dest / "data").mkdir()
    (dest / CONTRIB_DIR).mkdir(parents=True)
    (dest / ATTIC_DIR).mkdir(parents=True)
    (dest / "logs").mkdir()
    (dest / "cache").mkdir()
    (dest / "data/train.csv").write_bytes(train_bytes)
    (dest / "data/schema.json").write_text(schema.to_json())
    config = ProjectConfig(
        name=name, train_csv="data/train.csv", schema_json="data/schema.json", target=target
    )
    (dest / CONFIG_NAME).write_text(config.to_json())
    (dest / "README.md").write_text(README_TEMPLATE.format(name=name, target=target))
    return dest


def load_project(root: str | Path) -> Project:
    """Load configuration and stored state; a corrupt stored feature is a
    hard error naming the file (state is never silently partial)."""
    root = Path(root)
    config_path = root / CONFIG_NAME
    if not config_path.exists():
        raise ProjectError(f"{root} is not a project: missing {CONFIG_NAME}")
    config = ProjectConfig.from_json(config_path.read_text())
    for rel in (config.train_csv, config.schema_json):
        if not (root / rel).exists():
            raise ProjectError(f"configured data file missing: {rel}")
    schema = Schema.from_json((root / config.schema_json).read_text())
    if config.target not in schema.names:
        raise ProjectError(f"configured target {config.target!r} is not in the schema")

    features: list[tuple[str, FeatureDefinition]] = []
    contrib = root / CONTRIB_DIR
    if contrib.exists():
        for path in sorted(contrib.rglob("*.json")):
            rel = str(path.relative_to(root))
            from .validation import _CONTRIB_PATH

            if not _CONTRIB_PATH.match(rel):
                raise ProjectError(f"stored feature {rel} violates the naming convention")
            try:
                features.append((rel, parse_feature(path.read_text())))
            except FeatureGateError as exc:
                raise ProjectError(f"stored feature {rel} does not parse: {exc}") from exc

    log: list[dict] = []
    log_path = root / LOG_PATH
    if log_path.exists():
        for i, line in enumerate(log_path.read_text().splitlines()):
            if not line.strip():
                continue
            try:
                log.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ProjectError(f"{LOG_PATH} line {i + 1} is not valid JSON: {exc}") from exc
    return Project(root, config, ProjectState(features, log))
