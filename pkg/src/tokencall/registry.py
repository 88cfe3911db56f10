"""Toolset registry: documentation, identifier tokens, and indexing strategies.

A registry maps every tool to exactly one identifier token (a "surface"
string the policy can emit) under one of four interchangeable indexing
strategies:

* ``atomic``       -- ``<<sanitized_name>>``, collisions suffixed ``#2``, ``#3``, ...
* ``semantic``     -- the raw tool name, collisions suffixed the same way
* ``numeric``      -- the tool index, zero-padded so lexicographic = numeric order
* ``hierarchical`` -- a dash-joined path from recursive clustering of the
                      documentation (term-frequency cosine similarity)

Registries are immutable once built; rebuild to change anything.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

JsonValue = Any

STRATEGIES = ("atomic", "semantic", "numeric", "hierarchical")
DEFAULT_BRANCHING = 10
REGISTRY_FILE_VERSION = 1

_PARAM_TYPES: dict[str, type | tuple[type, ...]] = {
    "string": str,
    "integer": int,
    "number": (int, float),
    "boolean": bool,
    "array": list,
    "object": dict,
}


class RegistryError(Exception):
    """Base class for registry failures."""


class EmptyToolset(RegistryError):
    pass


class DuplicateToolDoc(RegistryError):
    pass


class InvalidBranching(RegistryError):
    pass


class MalformedRegistryFile(RegistryError):
    pass


@dataclass(frozen=True)
class ParamSpec:
    """One named parameter of a tool, with its JSON type and optional default."""

    name: str
    value_type: str
    required: bool = True
    description: str = ""
    default: JsonValue = None  # None means "no default"; JSON null defaults unsupported

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("parameter name must be non-empty")
        if self.value_type not in _PARAM_TYPES:
            raise ValueError(f"unknown parameter type {self.value_type!r}")
        if self.default is not None:
            expected = _PARAM_TYPES[self.value_type]
            # bool is an int subclass; keep the JSON types distinct.
            if isinstance(self.default, bool) and self.value_type != "boolean":
                raise ValueError(f"default for {self.name!r} does not match type {self.value_type!r}")
            if not isinstance(self.default, expected):
                raise ValueError(f"default for {self.name!r} does not match type {self.value_type!r}")

    def to_json(self) -> dict:
        obj: dict[str, JsonValue] = {
            "name": self.name,
            "type": self.value_type,
            "required": self.required,
            "description": self.description,
        }
        if self.default is not None:
            obj["default"] = self.default
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ParamSpec":
        if not isinstance(obj, dict):
            raise ValueError("parameter spec must be an object")
        allowed = {"name", "type", "required", "description", "default"}
        extra = set(obj) - allowed
        if extra:
            raise ValueError(f"unknown parameter keys: {sorted(extra)}")
        name = obj.get("name", "")
        description = obj.get("description", "")
        if not isinstance(name, str) or not isinstance(description, str):
            raise ValueError("parameter name and description must be strings")
        return cls(
            name=name,
            value_type=obj.get("type", ""),
            required=bool(obj.get("required", True)),
            description=description,
            default=obj.get("default"),
        )


@dataclass(frozen=True)
class ToolDoc:
    """A tool's documentation: name, description, and parameter specs."""

    name: str
    description: str = ""
    parameters: tuple[ParamSpec, ...] = ()

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("tool name must be non-empty")
        if not isinstance(self.parameters, tuple):
            object.__setattr__(self, "parameters", tuple(self.parameters))
        names = [p.name for p in self.parameters]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate parameter names in tool {self.name!r}")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": [p.to_json() for p in sorted(self.parameters, key=lambda p: p.name)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ToolDoc":
        if not isinstance(obj, dict):
            raise ValueError("tool doc must be an object")
        allowed = {"name", "description", "parameters"}
        extra = set(obj) - allowed
        if extra:
            raise ValueError(f"unknown tool doc keys: {sorted(extra)}")
        params = obj.get("parameters", [])
        if not isinstance(params, list):
            raise ValueError("parameters must be a list")
        name = obj.get("name", "")
        description = obj.get("description", "")
        if not isinstance(name, str) or not isinstance(description, str):
            raise ValueError("tool name and description must be strings")
        return cls(
            name=name,
            description=description,
            parameters=tuple(ParamSpec.from_json(p) for p in params),
        )

    def canonical_text(self) -> str:
        """Deterministic one-line rendering: fixed field order, sorted parameters."""
        return json.dumps(self.to_json(), ensure_ascii=False)


@dataclass(frozen=True)
class ToolToken:
    """The identifier surface assigned to one tool."""

    surface: str
    tool_index: int

    def __post_init__(self) -> None:
        if not self.surface:
            raise ValueError("token surface must be non-empty")
        if self.tool_index < 0:
            raise ValueError("tool index must be >= 0")


@dataclass(frozen=True)
class ToolRegistry:
    """Immutable toolset with a tool <-> token bijection."""

    tools: tuple[ToolDoc, ...]
    tokens: tuple[ToolToken, ...]
    strategy: str
    _by_surface: dict = field(init=False, repr=False, compare=False)
    _name_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not isinstance(self.tools, tuple):
            object.__setattr__(self, "tools", tuple(self.tools))
        if not isinstance(self.tokens, tuple):
            object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(self.tools) != len(self.tokens):
            raise ValueError("tool/token count mismatch")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if sorted(t.tool_index for t in self.tokens) != list(range(len(self.tools))):
            raise ValueError("token indices must cover the toolset exactly once")
        by_surface = {}
        for token in self.tokens:
            if token.surface in by_surface:
                raise ValueError(f"duplicate token surface {token.surface!r}")
            by_surface[token.surface] = token.tool_index
        name_index: dict[str, int] = {}
        for i, doc in enumerate(self.tools):
            name_index.setdefault(doc.name, i)
        object.__setattr__(self, "_by_surface", by_surface)
        object.__setattr__(self, "_name_index", name_index)

    def __len__(self) -> int:
        return len(self.tools)

    def resolve(self, surface: str) -> tuple[ToolDoc, ToolToken] | None:
        """Look a token surface up; None when the surface is not registered."""
        idx = self._by_surface.get(surface)
        if idx is None:
            return None
        return self.tools[idx], self.tokens[idx]

    def surface_of(self, tool_index: int) -> str:
        return self.tokens[tool_index].surface

    def index_of_name(self, name: str) -> int | None:
        """First tool index carrying this raw name, if any."""
        return self._name_index.get(name)

    def surface_for_name(self, name: str) -> str | None:
        idx = self.index_of_name(name)
        return None if idx is None else self.surface_of(idx)


_CAMEL_SPLIT = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")
_NON_ALNUM = re.compile(r"[^a-z0-9]+")


def sanitize_name(name: str) -> str:
    """Normalize a tool name for atomic surfaces.

    Camel-case boundaries become underscores, everything is lowercased, runs
    of non-alphanumerics collapse to a single underscore, and edges are
    trimmed. Never returns an empty string.
    """
    s = _CAMEL_SPLIT.sub("_", name).lower()
    s = _NON_ALNUM.sub("_", s).strip("_")
    return s or "t"


def _dedupe(bases: list[str]) -> list[str]:
    # "#" never survives sanitization, so "#k" suffixes cannot collide with
    # other bases -- but a raw semantic name may already contain "#", hence
    # the upward probe.
    seen: set[str] = set()
    out: list[str] = []
    for base in bases:
        cand = base
        k = 2
        while cand in seen:
            cand = f"{base}#{k}"
            k += 1
        seen.add(cand)
        out.append(cand)
    return out


def _tf_vector(text: str) -> Counter:
    return Counter(re.findall(r"\w+", text.lower()))


def _cosine(a: Counter, b: Counter) -> float:
    if not a or not b:
        return 0.0
    dot = sum(v * b[k] for k, v in a.items() if k in b)
    na = sum(v * v for v in a.values()) ** 0.5
    nb = sum(v * v for v in b.values()) ** 0.5
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def _farthest_point_seeds(indices: list[int], vecs: list[Counter], k: int) -> list[int]:
    # First seed is the lowest original index; each next seed maximizes the
    # minimum distance (1 - cosine) to the chosen seeds, ties -> lowest index.
    seeds = [indices[0]]
    chosen = {indices[0]}
    while len(seeds) < k:
        best_idx = -1
        best_d = -1.0
        for idx in indices:
            if idx in chosen:
                continue
            d = min(1.0 - _cosine(vecs[idx], vecs[s]) for s in seeds)
            if d > best_d or (d == best_d and idx < best_idx):
                best_idx, best_d = idx, d
        seeds.append(best_idx)
        chosen.add(best_idx)
    return seeds


def hierarchical_paths(tools: list[ToolDoc] | tuple[ToolDoc, ...], branching: int = DEFAULT_BRANCHING) -> list[str]:
    """Assign each tool a unique dash-joined path via recursive k-way clustering.

    Clustering partitions on cosine similarity over term-frequency vectors of
    the serialized documentation, with farthest-point seeding; every tie
    breaks toward the lower original tool index. Sibling groups never exceed
    ``branching`` unless they are leaves.
    """
    if branching < 2:
        raise InvalidBranching(f"branching must be >= 2, got {branching}")
    vecs = [_tf_vector(doc.canonical_text()) for doc in tools]
    paths: list[list[int] | None] = [None] * len(tools)

    def assign(indices: list[int], prefix: list[int]) -> None:
        if len(indices) <= branching:
            for child, idx in enumerate(indices):
                paths[idx] = prefix + [child]
            return
        seeds = _farthest_point_seeds(indices, vecs, branching)
        seed_pos = {s: j for j, s in enumerate(seeds)}
        clusters: list[list[int]] = [[] for _ in range(branching)]
        for idx in indices:
            if idx in seed_pos:
                clusters[seed_pos[idx]].append(idx)
                continue
            best_pos = 0
            best_sim = -1.0
            for j, s in enumerate(seeds):
                sim = _cosine(vecs[idx], vecs[s])
                if sim > best_sim:
                    best_pos, best_sim = j, sim
            clusters[best_pos].append(idx)
        for child, cluster in enumerate(clusters):
            assign(sorted(cluster), prefix + [child])

    assign(list(range(len(tools))), [])
    return ["-".join(str(c) for c in p) for p in paths]  # type: ignore[union-attr]


def build_registry(
    tools: list[ToolDoc] | tuple[ToolDoc, ...],
    strategy: str = "atomic",
    *,
    branching: int = DEFAULT_BRANCHING,
) -> ToolRegistry:
    """Build an immutable registry assigning one token per tool."""
    if not tools:
        raise EmptyToolset("cannot build a registry from zero tools")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    seen_canon: dict[str, int] = {}
    for i, doc in enumerate(tools):
        canon = doc.canonical_text()
        if canon in seen_canon:
            raise DuplicateToolDoc(f"tools {seen_canon[canon]} and {i} are byte-identical ({doc.name!r})")
        seen_canon[canon] = i

    if strategy == "atomic":
        inner = _dedupe([sanitize_name(doc.name) for doc in tools])
        surfaces = [f"<<{s}>>" for s in inner]
    elif strategy == "semantic":
        surfaces = _dedupe([doc.name for doc in tools])
    elif strategy == "numeric":
        width = len(str(len(tools)))
        surfaces = [f"{i:0{width}d}" for i in range(len(tools))]
    else:
        surfaces = hierarchical_paths(tools, branching)

    tokens = tuple(ToolToken(surface=s, tool_index=i) for i, s in enumerate(surfaces))
    return ToolRegistry(tools=tuple(tools), tokens=tokens, strategy=strategy)


def _registry_doc(registry: ToolRegistry) -> dict:
    return {
        "version": REGISTRY_FILE_VERSION,
        "strategy": registry.strategy,
        "tools": [doc.to_json() for doc in registry.tools],
        "tokens": [{"surface": t.surface, "tool_index": t.tool_index} for t in registry.tokens],
    }


def _canonical_bytes(doc: dict) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def serialize_registry(registry: ToolRegistry) -> bytes:
    """Render the registry as versioned, checksummed, canonical JSON bytes."""
    doc = _registry_doc(registry)
    digest = hashlib.sha256(_canonical_bytes(doc)).hexdigest()
    doc["checksum"] = digest
    return _canonical_bytes(doc) + b"\n"


def load_registry(data: bytes) -> ToolRegistry:
    """Inverse of :func:`serialize_registry`; raises MalformedRegistryFile on any defect."""
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedRegistryFile(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedRegistryFile("registry file must hold a JSON object")
    checksum = doc.pop("checksum", None)
    if checksum is None:
        raise MalformedRegistryFile("missing checksum")
    expected = hashlib.sha256(_canonical_bytes(doc)).hexdigest()
    if checksum != expected:
        raise MalformedRegistryFile("checksum mismatch")
    if doc.get("version") != REGISTRY_FILE_VERSION:
        raise MalformedRegistryFile(f"unsupported version {doc.get('version')!r}")
    tools_json = doc.get("tools")
    tokens_json = doc.get("tokens")
    if not isinstance(tools_json, list) or not isinstance(tokens_json, list):
        raise MalformedRegistryFile("tools and tokens must be lists")
    if len(tools_json) != len(tokens_json):
        raise MalformedRegistryFile("token/tool count mismatch")
    try:
        tools = tuple(ToolDoc.from_json(t) for t in tools_json)
        tokens = tuple(
            ToolToken(surface=t["surface"], tool_index=t["tool_index"]) for t in tokens_json
        )
        return ToolRegistry(tools=tools, tokens=tokens, strategy=doc.get("strategy", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRegistryFile(str(exc)) from exc
