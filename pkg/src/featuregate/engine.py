"""Compose feature definitions into an executable pipeline.

Execution model: every declared feature (and every feature pulled in only
by reference) is a node in a dependency DAG. Nodes run in topological waves;
within a wave they may run on a thread pool, but output columns land in
pre-assigned slots so the matrix is bit-identical regardless of worker
count. Referenced features execute once per pipeline run and their output
blocks are cached for the features that splice them in.

Leakage control: fitting touches only the development table; transform uses
learned state plus the incoming rows. Coded columns of incoming tables are
re-encoded to the fit-time category dictionaries (unseen labels become
missing) so codes mean the same thing in every run.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import FeatureGateError, PipelineError, TableError
from .features import (
    FeatureDefinition,
    ResolvedFeature,
    infer_output_names,
    parse_feature,
    resolve_references,
    serialize_feature,
)
from .primitives import (
    Block,
    ExecContext,
    PrimitiveCatalog,
    TransformerStep,
    _as_output_block,
    deserialize_step,
    instantiate,
    run_chain_fit,
    run_chain_transform,
    serialize_step,
    standard_catalog,
)
from .table import MISSING_CODE, Column, Schema, Table


# ---------------------------------------------------------------------------
# pipeline assembly


@dataclass(frozen=True)
class PipelineNode:
    resolved: ResolvedFeature
    path: str | None  # registry path (None for declared features not in the registry)
    emits: bool  # declared features emit matrix columns; referenced-only ones do not

    @property
    def key(self) -> str:
        return self.resolved.key if self.emits else f"ref:{self.path}"


@dataclass(frozen=True)
class Pipeline:
    features: tuple[ResolvedFeature, ...]  # declared order
    nodes: tuple[PipelineNode, ...]
    topo_order: tuple[str, ...]  # node keys, dependencies first
    aliases: dict  # registry path -> node key serving that path
    catalog: PrimitiveCatalog = field(compare=False, default=None)

    def node(self, key: str) -> PipelineNode:
        for n in self.nodes:
            if n.key == key:
                return n
        raise PipelineError(f"no pipeline node {key!r}")

    def served_paths(self, key: str) -> list[str]:
        return [p for p, k in self.aliases.items() if k == key]


def build_pipeline(
    features: list[FeatureDefinition],
    registry: dict[str, FeatureDefinition] | None = None,
    schema: Schema | None = None,
    catalog: PrimitiveCatalog | None = None,
) -> Pipeline:
    """Resolve references, check identities and inputs, and order the DAG."""
    registry = registry or {}
    catalog = catalog or standard_catalog()
    keys = [fd.key for fd in features]
    dupes = {k for k in keys if keys.count(k) > 1}
    if dupes:
        raise PipelineError(f"duplicate feature identities: {sorted(dupes)}")

    declared_by_value = {}
    resolved_declared = []
    for fd in features:
        resolved_declared.append(resolve_references(fd, registry))
        declared_by_value[serialize_feature(fd)] = fd.key

    # referenced paths become hidden nodes unless they alias a declared feature
    nodes: list[PipelineNode] = []
    alias: dict[str, str] = {}  # registry path -> node key
    hidden_order: list[str] = []

    def note_path(path: str):
        if path in alias:
            return
        target = registry[path]
        declared_key = declared_by_value.get(serialize_feature(target))
        if declared_key is not None:
            alias[path] = declared_key
        else:
            alias[path] = f"ref:{path}"
            hidden_order.append(path)
        for sub in resolve_references(target, registry).dependencies:
            note_path(sub)

    for res in resolved_declared:
        for path in res.dependencies:
            note_path(path)

    for res in resolved_declared:
        nodes.append(PipelineNode(res, None, emits=True))
    for path in hidden_order:
        nodes.append(PipelineNode(resolve_references(registry[path], registry), path, emits=False))

    if schema is not None:
        known = set(schema.names)
        for node in nodes:
            missing = [c for c in node.resolved.definition.input if c not in known]
            if missing:
                raise PipelineError(
                    f"unknown input columns {missing}", feature=node.resolved.key
                )

    # deterministic topological order: repeatedly take the first node (in
    # declared-then-hidden order) whose dependencies are all placed
    key_deps = {
        node.key: tuple(alias[p] for p in node.resolved.dependencies) for node in nodes
    }
    placed: list[str] = []
    remaining = [n.key for n in nodes]
    while remaining:
        for key in remaining:
            if all(d in placed for d in key_deps[key]):
                placed.append(key)
                remaining.remove(key)
                break
        else:  # cycle would have been caught during resolution
            raise PipelineError(f"unresolvable dependency order among {remaining}")
    return Pipeline(tuple(resolved_declared), tuple(nodes), tuple(placed), alias, catalog)


# ---------------------------------------------------------------------------
# fitted pipeline


@dataclass(frozen=True)
class FittedNode:
    node: PipelineNode
    steps: tuple[TransformerStep, ...]
    approaches: dict
    output_names: tuple[str, ...]
    q: int


@dataclass(frozen=True)
class FeatureMatrix:
    names: tuple[str, ...]
    values: np.ndarray  # (rows, sum of q) float64

    @property
    def row_count(self) -> int:
        return int(self.values.shape[0])

    def to_csv(self) -> str:
        """CSV with the output-name header; a 0-column matrix is one empty
        header line plus one empty line per row."""
        import csv

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.names)
        for i in range(self.row_count):
            writer.writerow([repr(float(v)) for v in self.values[i]])
        return buf.getvalue()


@dataclass(frozen=True)
class FittedPipeline:
    pipeline: Pipeline
    fitted: dict  # node key -> FittedNode
    fingerprint: str
    fit_schema: Schema
    dictionaries: dict  # coded column name -> tuple of labels

    @property
    def output_names(self) -> list[str]:
        names: list[str] = []
        for res in self.pipeline.features:
            names.extend(self.fitted[res.key].output_names)
        return names


def schema_fingerprint(schema: Schema) -> str:
    """Hash of the ordered (name, kind) list, excluding the target column."""
    cols = [[c.name, c.kind] for c in schema.columns if c.name != schema.target]
    digest = hashlib.blake2b(json.dumps(cols).encode(), digest_size=16)
    return digest.hexdigest()


def _project(table: Table, node: PipelineNode) -> Block:
    cols = []
    for name in node.resolved.definition.input:
        try:
            cols.append(table.column(name))
        except TableError as exc:
            raise PipelineError(str(exc), feature=node.resolved.key) from exc
    return Block(tuple(cols))


def _node_levels(pipeline: Pipeline) -> list[list[str]]:
    """Group topo order into waves whose members are mutually independent."""
    level: dict[str, int] = {}
    for key in pipeline.topo_order:
        node = pipeline.node(key)
        deps = [pipeline.aliases[p] for p in node.resolved.dependencies]
        level[key] = 1 + max((level[d] for d in deps), default=-1)
    waves: dict[int, list[str]] = {}
    for key in pipeline.topo_order:
        waves.setdefault(level[key], []).append(key)
    return [waves[i] for i in sorted(waves)]


def _execute_node(
    fitted_or_node,
    table: Table,
    nested: dict,
    mode: str,
    target: Column | None,
    catalog: PrimitiveCatalog,
):
    """Run one node's step chain; returns (result, fitted steps, approaches)."""
    if mode == "fit":
        node = fitted_or_node
        steps = [
            instantiate(spec, catalog, node.resolved.definition.input)
            for spec in node.resolved.definition.transformer
        ]
        ctx = ExecContext(nested=nested, approaches={}, record=True)
        block = _project(table, node)
        fitted_steps, value = run_chain_fit(steps, block, target, ctx, "")
        return value, tuple(fitted_steps), ctx.approaches
    fnode: FittedNode = fitted_or_node
    ctx = ExecContext(nested=nested, approaches=dict(fnode.approaches), record=False)
    block = _project(table, fnode.node)
    value = run_chain_transform(fnode.steps, block, ctx, "")
    return value, fnode.steps, fnode.approaches


def _named_output(node: PipelineNode, value) -> tuple[Block, tuple[str, ...]]:
    block = _as_output_block(value)
    names = tuple(infer_output_names(node.resolved.definition, len(block.columns)))
    renamed = tuple(
        Column(name, c.kind, c.values, c.categories) for name, c in zip(names, block.columns)
    )
    return Block(renamed), names


def fit_pipeline(pipeline: Pipeline, dev: Table, workers: int = 1) -> FittedPipeline:
    """Fit every node on the development table only."""
    target = dev.target_column if dev.schema.target else None
    nested: dict[str, Block] = {}
    fitted: dict[str, FittedNode] = {}
    by_key = {n.key: n for n in pipeline.nodes}

    def fit_one(key: str):
        node = by_key[key]
        try:
            value, steps, approaches = _execute_node(
                node, dev, nested, "fit", target, pipeline.catalog
            )
            out_block, names = _named_output(node, value)
        except FeatureGateError as exc:
            if isinstance(exc, PipelineError):
                raise
            raise PipelineError(
                str(exc), feature=node.resolved.key, step=getattr(exc, "step_path", None)
            ) from exc
        return key, FittedNode(node, tuple(steps), approaches, names, len(names)), out_block

    for wave in _node_levels(pipeline):
        if workers > 1 and len(wave) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(fit_one, wave))
        else:
            results = [fit_one(key) for key in wave]
        for key, fnode, out_block in results:  # publish in wave order: deterministic
            fitted[key] = fnode
            for path in pipeline.served_paths(key):
                nested[path] = out_block

    _check_unique_outputs(pipeline, fitted)
    dictionaries = {
        c.name: list(c.categories)
        for c in dev.columns
        if c.categories is not None and c.name != dev.schema.target
    }
    return FittedPipeline(
        pipeline, fitted, schema_fingerprint(dev.schema), dev.schema, dictionaries
    )


def _check_unique_outputs(pipeline: Pipeline, fitted: dict) -> None:
    seen: dict[str, str] = {}
    for res in pipeline.features:
        for name in fitted[res.key].output_names:
            if name in seen:
                raise PipelineError(
                    f"output column {name!r} provided by both {seen[name]} and {res.key}"
                )
            seen[name] = res.key


def reencode_table(table: Table, dictionaries: dict) -> Table:
    """Map coded columns onto fit-time dictionaries; unseen labels -> missing."""
    columns = []
    for col in table.columns:
        labels = dictionaries.get(col.name)
        if col.categories is None or labels is None:
            columns.append(col)
            continue
        target_cats = tuple(labels)
        remap = np.full(len(col.categories) + 1, MISSING_CODE, dtype=np.int64)
        for old_code, label in enumerate(col.categories):
            if label in target_cats:
                remap[old_code] = target_cats.index(label)
        values = remap[col.values]  # missing (-1) indexes the trailing slot
        columns.append(Column(col.name, col.kind, values, target_cats))
    return Table(table.schema, tuple(columns))


def transform(
    fp: FittedPipeline,
    new_data: Table,
    workers: int = 1,
    enforce_finite: bool = True,
) -> FeatureMatrix:
    """Apply the fitted pipeline; declared-feature outputs concatenate in
    declared order. Missing or non-finite cells are an error at this
    boundary unless ``enforce_finite`` is disabled (validation internals)."""
    if schema_fingerprint(new_data.schema) != fp.fingerprint:
        raise PipelineError(
            "schema fingerprint mismatch: the data does not match the fitted pipeline"
        )
    table = reencode_table(new_data, fp.dictionaries)
    nested: dict[str, Block] = {}
    by_key = {n.key: n for n in fp.pipeline.nodes}

    outputs: dict[str, Block] = {}

    def transform_one(key: str):
        fnode = fp.fitted[key]
        try:
            value, _, _ = _execute_node(fnode, table, nested, "transform", None, fp.pipeline.catalog)
            out_block, names = _named_output(fnode.node, value)
        except FeatureGateError as exc:
            if isinstance(exc, PipelineError):
                raise
            raise PipelineError(
                str(exc), feature=fnode.node.resolved.key, step=getattr(exc, "step_path", None)
            ) from exc
        if names != fnode.output_names:
            raise PipelineError(
                f"output columns changed between fit ({list(fnode.output_names)}) and "
                f"transform ({list(names)})",
                feature=fnode.node.resolved.key,
            )
        return key, out_block

    for wave in _node_levels(fp.pipeline):
        if workers > 1 and len(wave) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(transform_one, wave))
        else:
            results = [transform_one(key) for key in wave]
        for key, out_block in results:
            outputs[key] = out_block
            for path in fp.pipeline.served_paths(key):
                nested[path] = out_block

    names: list[str] = []
    arrays: list[np.ndarray] = []
    for res in fp.pipeline.features:
        block = outputs[res.key]
        for col in block.columns:
            names.append(col.name)
            values = col.numeric()
            if enforce_finite and not np.isfinite(values).all():
                bad = "missing" if np.isnan(values).any() else "non-finite"
                raise PipelineError(
                    f"column {col.name!r} contains {bad} values in the feature matrix",
                    feature=res.key,
                )
            arrays.append(values)
    grid = (
        np.column_stack(arrays) if arrays else np.empty((new_data.row_count, 0), dtype=np.float64)
    )
    return FeatureMatrix(tuple(names), grid)


# ---------------------------------------------------------------------------
# bundle (fitted pipeline) serialization


BUNDLE_FORMAT = "featuregate-pipeline/1"


def export_bundle(fp: FittedPipeline) -> str:
    nodes = []
    for key in fp.pipeline.topo_order:
        fnode = fp.fitted[key]
        nodes.append(
            {
                "key": key,
                "path": fnode.node.path,
                "emits": fnode.node.emits,
                "definition": json.loads(serialize_feature(fnode.node.resolved.definition)),
                "output": list(fnode.output_names),
                "approaches": {k: fnode.approaches[k] for k in sorted(fnode.approaches)},
                "steps": [serialize_step(s) for s in fnode.steps],
            }
        )
    doc = {
        "format": BUNDLE_FORMAT,
        "fingerprint": fp.fingerprint,
        "schema": json.loads(fp.fit_schema.to_json()),
        "dictionaries": {k: fp.dictionaries[k] for k in sorted(fp.dictionaries)},
        "nodes": nodes,
    }
    return json.dumps(doc, indent=2, ensure_ascii=True, allow_nan=False) + "\n"


def load_bundle(text: str, catalog: PrimitiveCatalog | None = None) -> FittedPipeline:
    catalog = catalog or standard_catalog()
    doc = json.loads(text)
    if doc.get("format") != BUNDLE_FORMAT:
        raise PipelineError(f"unsupported bundle format {doc.get('format')!r}")
    schema = Schema.from_json(json.dumps(doc["schema"]))
    definitions: list[FeatureDefinition] = []
    registry: dict[str, FeatureDefinition] = {}
    for entry in doc["nodes"]:
        fd = parse_feature(json.dumps(entry["definition"]))
        if entry["emits"]:
            definitions.append(fd)
        if entry["path"]:
            registry[entry["path"]] = fd
    # declared order = document order of emitting nodes
    pipeline = build_pipeline(definitions, registry, schema, catalog)
    fitted: dict[str, FittedNode] = {}
    by_key = {n.key: n for n in pipeline.nodes}
    for entry in doc["nodes"]:
        key = entry["key"]
        if key not in by_key:
            raise PipelineError(f"bundle node {key!r} does not match the rebuilt pipeline")
        steps = tuple(deserialize_step(s, catalog) for s in entry["steps"])
        fitted[key] = FittedNode(
            by_key[key], steps, dict(entry["approaches"]), tuple(entry["output"]), len(entry["output"])
        )
    return FittedPipeline(
        pipeline,
        fitted,
        doc["fingerprint"],
        schema,
        {k: list(v) for k, v in doc["dictionaries"].items()},
    )
