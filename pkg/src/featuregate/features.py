"""Declarative feature definitions: parsing, canonical serialization, sugar
removal, nested-reference resolution, and output-name inference.

A feature document is a single JSON object:

    {"name", "author", "description"?, "input": [...],
     "transformer": [{"primitive", "params"}...], "output"?: [...], "source"?}

Transformer entries accept two sugared forms, normalized at parse time: a
bare string becomes an ``expr`` step, and a two-element ``[columns, step]``
array becomes a ``subset`` step.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

from .errors import FeatureError

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class TransformerSpec:
    primitive: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.primitive, str) or not self.primitive:
            raise FeatureError("transformer primitive must be a non-empty string")
        if not isinstance(self.params, dict):
            raise FeatureError(f"{self.primitive}: params must be an object")


@dataclass(frozen=True)
class FeatureDefinition:
    name: str
    author: str
    input: tuple[str, ...]
    transformer: tuple[TransformerSpec, ...]
    description: str | None = None
    output: tuple[str, ...] | None = None
    source: str | None = None

    def __post_init__(self):
        for label, value in (("name", self.name), ("author", self.author)):
            if not isinstance(value, str) or not _IDENT.match(value):
                raise FeatureError(f"field {label!r}: {value!r} is not a valid identifier")
        if not self.input:
            raise FeatureError("field 'input': must list at least one column")
        if len(set(self.input)) != len(self.input):
            raise FeatureError("field 'input': duplicate entries")
        if any(not isinstance(c, str) or not c for c in self.input):
            raise FeatureError("field 'input': entries must be non-empty strings")
        if not self.transformer:
            raise FeatureError("field 'transformer': must list at least one step")

    @property
    def key(self) -> str:
        return f"{self.author}/{self.name}"


@dataclass(frozen=True)
class ResolvedFeature:
    """A definition plus the reference edges discovered in its transformer."""

    definition: FeatureDefinition
    dependencies: tuple[str, ...]  # registry paths this feature consumes

    @property
    def key(self) -> str:
        return self.definition.key


def desugar_spec(entry) -> TransformerSpec:
    """Normalize one transformer entry; sugar forms become catalog steps."""
    if isinstance(entry, TransformerSpec):
        return entry
    if isinstance(entry, str):
        return TransformerSpec("expr", {"expression": entry})
    if isinstance(entry, (list, tuple)):
        if len(entry) != 2:
            raise FeatureError(
                "transformer list entry must be a [columns, step] pair"
            )
        columns, inner = entry
        if isinstance(columns, str):
            columns = [columns]
        if not isinstance(columns, (list, tuple)):
            raise FeatureError("subset sugar: first element must name columns")
        return TransformerSpec("subset", {"inputs": list(columns), "inner": desugar_spec(inner)})
    if isinstance(entry, dict):
        unknown = set(entry) - {"primitive", "params"}
        if unknown:
            raise FeatureError(f"transformer step has unknown keys {sorted(unknown)}")
        if "primitive" not in entry:
            raise FeatureError("transformer step missing 'primitive'")
        return TransformerSpec(entry["primitive"], dict(entry.get("params", {})))
    raise FeatureError(f"cannot interpret transformer entry {entry!r}")


_DOC_KEYS = {"name", "author", "description", "input", "transformer", "output", "source"}


def parse_feature(document: str | bytes | dict, *, validate_params: bool = True) -> FeatureDefinition:
    """Parse and validate one feature document.

    ``validate_params=False`` skips primitive-catalog validation (used by the
    validation battery, which reports catalog problems as a separate check).
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise FeatureError(f"malformed JSON: {exc}") from exc
    else:
        doc = document
    if isinstance(doc, list):
        raise FeatureError("document must define exactly one feature object, found a list")
    if not isinstance(doc, dict):
        raise FeatureError("document must be a JSON object")
    unknown = set(doc) - _DOC_KEYS
    if unknown:
        raise FeatureError(f"unknown document fields {sorted(unknown)}")
    for required in ("name", "author", "input", "transformer"):
        if required not in doc:
            raise FeatureError(f"missing required field {required!r}")
    if not isinstance(doc["input"], list):
        raise FeatureError("field 'input': must be a list of column names")
    if not isinstance(doc["transformer"], list):
        raise FeatureError("field 'transformer': must be a list of steps")
    steps = tuple(desugar_spec(e) for e in doc["transformer"])
    output = doc.get("output")
    if output is not None:
        if not isinstance(output, list) or any(not isinstance(o, str) or not o for o in output):
            raise FeatureError("field 'output': must be a list of non-empty strings")
        output = tuple(output)
    for label in ("description", "source"):
        if doc.get(label) is not None and not isinstance(doc[label], str):
            raise FeatureError(f"field {label!r}: must be a string")
    fd = FeatureDefinition(
        name=doc["name"],
        author=doc["author"],
        input=tuple(doc["input"]),
        transformer=steps,
        description=doc.get("description"),
        output=output,
        source=doc.get("source"),
    )
    if validate_params:
        from . import primitives

        fd = replace(fd, transformer=primitives.validate_feature_params(fd))
    return fd


def _spec_to_doc(spec: TransformerSpec) -> dict:
    params = {}
    for key in sorted(spec.params):
        value = spec.params[key]
        if isinstance(value, TransformerSpec):
            params[key] = _spec_to_doc(value)
        elif isinstance(value, (list, tuple)) and value and isinstance(value[0], TransformerSpec):
            params[key] = [_spec_to_doc(v) for v in value]
        elif isinstance(value, tuple):
            params[key] = list(value)
        elif isinstance(value, dict):
            params[key] = {k: value[k] for k in sorted(value)}
        else:
            params[key] = value
    return {"primitive": spec.primitive, "params": params}


def serialize_feature(fd: FeatureDefinition) -> str:
    """Canonical JSON text; byte-stable and parseable back to an equal value."""
    doc: dict = {"name": fd.name, "author": fd.author}
    if fd.description is not None:
        doc["description"] = fd.description
    doc["input"] = list(fd.input)
    doc["transformer"] = [_spec_to_doc(s) for s in fd.transformer]
    if fd.output is not None:
        doc["output"] = list(fd.output)
    if fd.source is not None:
        doc["source"] = fd.source
    return json.dumps(doc, indent=2, ensure_ascii=True, allow_nan=False) + "\n"


def iter_references(fd: FeatureDefinition):
    """Yield every feature_ref path in the transformer, in step order."""

    def walk(spec: TransformerSpec):
        if spec.primitive == "feature_ref":
            path = spec.params.get("path")
            if path is not None:
                yield path
        for value in spec.params.values():
            if isinstance(value, TransformerSpec):
                yield from walk(value)
            elif isinstance(value, (list, tuple)):
                for v in value:
                    if isinstance(v, TransformerSpec):
                        yield from walk(v)

    for step in fd.transformer:
        yield from walk(step)


def resolve_references(
    fd: FeatureDefinition, registry: dict[str, FeatureDefinition]
) -> ResolvedFeature:
    """Check every referenced path resolves and the reference graph is acyclic."""
    deps = tuple(dict.fromkeys(iter_references(fd)))  # unique, in order
    for path in deps:
        if path not in registry:
            raise FeatureError(f"{fd.key}: reference to missing feature document {path!r}")
    # cycle check over the full reachable graph
    WHITE, GRAY, BLACK = 0, 1, 2
    color: dict[str, int] = {}

    def visit(path: str, chain: tuple[str, ...]):
        state = color.get(path, WHITE)
        if state == GRAY:
            cycle = " -> ".join(chain + (path,))
            raise FeatureError(f"feature reference cycle: {cycle}")
        if state == BLACK:
            return
        color[path] = GRAY
        target = registry.get(path)
        if target is None:
            raise FeatureError(f"reference to missing feature document {path!r}")
        for sub in dict.fromkeys(iter_references(target)):
            visit(sub, chain + (path,))
        color[path] = BLACK

    for path in deps:
        visit(path, (f"<{fd.key}>",))
    return ResolvedFeature(fd, deps)


def infer_output_names(fd: FeatureDefinition, fitted_dim: int) -> list[str]:
    """Declared output names when provided, generated ones otherwise."""
    if fitted_dim < 1:
        raise FeatureError(f"{fd.key}: fitted dimensionality must be positive")
    if fd.output is not None:
        if len(fd.output) != fitted_dim:
            raise FeatureError(
                f"{fd.key}: declared {len(fd.output)} output names but the fitted "
                f"feature produces {fitted_dim} columns"
            )
        return list(fd.output)
    if fitted_dim == 1:
        return [fd.name]
    return [f"{fd.name}_{k}" for k in range(fitted_dim)]
