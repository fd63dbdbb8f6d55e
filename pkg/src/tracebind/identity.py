"""Scaffold states, grounded identities, ingredient activation, and grounding maps.

An identity is a conjunction of concrete ingredient conditions over scaffold
state components (context tokens, memory pairs, policy flags, retrieved
documents).  This module decides which ingredients are active in a given
state, measures distance between activation sets, and handles the layered
grounding maps that connect narrative and functional identity statements to
those ingredients.

Everything here is immutable and pure: repeated evaluation of the same
inputs always agrees, and values can be shared freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    FileFormatError,
    GroundingLookupError,
    StructuralError,
)

INGREDIENT_KINDS = ("context", "memory", "policy", "retrieval")


@dataclass(frozen=True)
class ScaffoldArchitecture:
    """Static description of a scaffold: capacities and component spaces."""

    token_alphabet_id: str
    memory_key_space_id: str
    n_policy_flags: int
    context_capacity: int
    corpus: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.context_capacity < 1:
            raise StructuralError("context_capacity must be >= 1")
        if self.n_policy_flags < 0:
            raise StructuralError("n_policy_flags must be >= 0")
        object.__setattr__(self, "corpus", frozenset(self.corpus))

    def check_state(self, state: ScaffoldState) -> None:
        """Raise StructuralError if ``state`` is not realizable here."""
        if len(state.context) > self.context_capacity:
            raise StructuralError(
                f"context length {len(state.context)} exceeds capacity "
                f"{self.context_capacity}"
            )
        if len(state.policy_flags) != self.n_policy_flags:
            raise StructuralError(
                f"policy flag vector has length {len(state.policy_flags)}, "
                f"architecture declares {self.n_policy_flags}"
            )
        stray = state.retrieved - self.corpus
        if stray:
            raise StructuralError(f"retrieved documents not in corpus: {sorted(stray)}")


@dataclass(frozen=True)
class ScaffoldState:
    """One objective-time snapshot of everything the agent can see."""

    context: tuple[str, ...]
    memory: Mapping[str, str]
    policy_flags: tuple[int, ...]
    retrieved: frozenset[str]
    step_index: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "context", tuple(self.context))
        object.__setattr__(self, "memory", dict(self.memory))
        object.__setattr__(self, "policy_flags", tuple(self.policy_flags))
        object.__setattr__(self, "retrieved", frozenset(self.retrieved))
        if self.step_index < 0:
            raise StructuralError("step_index must be >= 0")
        if any(flag not in (0, 1) for flag in self.policy_flags):
            raise StructuralError("policy flags must be 0 or 1")


@dataclass(frozen=True)
class IngredientSpec:
    """One conjunct of a grounded identity.

    Exactly the fields matching ``kind`` may be set:

    - ``context``: ``context_pattern`` (non-empty token sequence)
    - ``memory``: ``memory_key`` and ``memory_value``
    - ``policy``: ``flag_index``
    - ``retrieval``: ``doc_id``
    """

    ingredient_id: str
    kind: str
    context_pattern: tuple[str, ...] | None = None
    memory_key: str | None = None
    memory_value: str | None = None
    flag_index: int | None = None
    doc_id: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in INGREDIENT_KINDS:
            raise StructuralError(f"unknown ingredient kind {self.kind!r}")
        if not self.ingredient_id:
            raise StructuralError("ingredient_id must be non-empty")
        if self.context_pattern is not None:
            object.__setattr__(self, "context_pattern", tuple(self.context_pattern))
        provided = {
            "context_pattern": self.context_pattern is not None,
            "memory_key": self.memory_key is not None,
            "memory_value": self.memory_value is not None,
            "flag_index": self.flag_index is not None,
            "doc_id": self.doc_id is not None,
        }
        required = {
            "context": {"context_pattern"},
            "memory": {"memory_key", "memory_value"},
            "policy": {"flag_index"},
            "retrieval": {"doc_id"},
        }[self.kind]
        actual = {name for name, given in provided.items() if given}
        if actual != required:
            raise StructuralError(
                f"ingredient {self.ingredient_id!r} of kind {self.kind!r} must set "
                f"exactly {sorted(required)}, got {sorted(actual)}"
            )
        if self.kind == "context" and not self.context_pattern:
            raise StructuralError("context_pattern must be non-empty")
        if self.kind == "policy" and self.flag_index < 0:
            raise StructuralError("flag_index must be >= 0")


@dataclass(frozen=True)
class GroundedIdentity:
    """Conjunction of ingredient conditions; active iff all hold at once."""

    ingredients: tuple[IngredientSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ingredients", tuple(self.ingredients))
        if not self.ingredients:
            raise StructuralError("an identity needs at least one ingredient")
        ids = [spec.ingredient_id for spec in self.ingredients]
        if len(set(ids)) != len(ids):
            raise StructuralError("ingredient ids must be pairwise distinct")

    @property
    def k(self) -> int:
        return len(self.ingredients)

    @property
    def ingredient_ids(self) -> frozenset[str]:
        return frozenset(spec.ingredient_id for spec in self.ingredients)


@dataclass(frozen=True)
class ActivationSet:
    """The ingredient ids active at one objective step."""

    step_index: int
    active: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "active", frozenset(self.active))
        if self.step_index < 0:
            raise StructuralError("step_index must be >= 0")


@dataclass(frozen=True)
class LayeredIdentitySpec:
    """Grounding maps between narrative (layer 2), functional (layer 1), and
    ingredient-level (layer 0) identity statements.

    ``map_2_to_0`` is declared independently and checked against the
    composition of the other two maps by :func:`check_compositionality`.
    """

    layer2_statements: tuple[str, ...]
    layer1_statements: tuple[str, ...]
    map_2_to_1: Mapping[str, frozenset[str]]
    map_1_to_0: Mapping[str, frozenset[str]]
    map_2_to_0: Mapping[str, frozenset[str]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer2_statements", tuple(self.layer2_statements))
        object.__setattr__(self, "layer1_statements", tuple(self.layer1_statements))
        for name in ("map_2_to_1", "map_1_to_0", "map_2_to_0"):
            raw = getattr(self, name)
            object.__setattr__(
                self, name, {label: frozenset(targets) for label, targets in raw.items()}
            )
        layer1 = set(self.layer1_statements)
        for label, targets in self.map_2_to_1.items():
            missing = targets - layer1
            if missing:
                raise StructuralError(
                    f"map_2_to_1[{label!r}] references undeclared layer-1 "
                    f"labels {sorted(missing)}"
                )

    def validate_against(self, identity: GroundedIdentity) -> None:
        """Raise if any map references an ingredient the identity lacks."""
        known = identity.ingredient_ids
        for name in ("map_1_to_0", "map_2_to_0"):
            for label, targets in getattr(self, name).items():
                missing = targets - known
                if missing:
                    raise StructuralError(
                        f"{name}[{label!r}] references unknown ingredients "
                        f"{sorted(missing)}"
                    )


def evaluate_ingredient(
    state: ScaffoldState, spec: IngredientSpec, arch: ScaffoldArchitecture
) -> bool:
    """Decide whether one ingredient condition holds in ``state``.

    Context patterns match as contiguous token subsequences; memory requires
    the exact key/value pair; policy reads one flag; retrieval checks set
    membership of the document id.
    """
    if spec.kind == "context":
        return _contains_subsequence(state.context, spec.context_pattern)
    if spec.kind == "memory":
        return state.memory.get(spec.memory_key) == spec.memory_value
    if spec.kind == "policy":
        if spec.flag_index >= arch.n_policy_flags:
            raise StructuralError(
                f"flag_index {spec.flag_index} out of range for architecture "
                f"with {arch.n_policy_flags} flags"
            )
        if spec.flag_index >= len(state.policy_flags):
            raise StructuralError(
                f"flag_index {spec.flag_index} out of range for state with "
                f"{len(state.policy_flags)} flags"
            )
        return state.policy_flags[spec.flag_index] == 1
    if spec.kind == "retrieval":
        return spec.doc_id in state.retrieved
    raise StructuralError(f"unknown ingredient kind {spec.kind!r}")


def _contains_subsequence(tokens: Sequence[str], pattern: Sequence[str]) -> bool:
    n, m = len(tokens), len(pattern)
    if m == 0 or m > n:
        return False
    first = pattern[0]
    for i in range(n - m + 1):
        if tokens[i] == first and tuple(tokens[i : i + m]) == tuple(pattern):
            return True
    return False


def activation_set(
    state: ScaffoldState, identity: GroundedIdentity, arch: ScaffoldArchitecture
) -> ActivationSet:
    """Map a state to the set of identity ingredients active in it."""
    active = frozenset(
        spec.ingredient_id
        for spec in identity.ingredients
        if evaluate_ingredient(state, spec, arch)
    )
    return ActivationSet(step_index=state.step_index, active=active)


def activation_sets(
    states: Iterable[ScaffoldState],
    identity: GroundedIdentity,
    arch: ScaffoldArchitecture,
) -> list[ActivationSet]:
    """Activation sets of a whole trajectory, in step order."""
    return [activation_set(state, identity, arch) for state in states]


def state_distance(a: ActivationSet, b: ActivationSet, k: int) -> float:
    """Normalized symmetric-difference distance ``|a ^ b| / k`` in [0, 1]."""
    if k < 1:
        raise StructuralError("ingredient universe size k must be >= 1")
    return len(a.active ^ b.active) / k


def ground(
    statement: Sequence[str], spec: LayeredIdentitySpec, m: int
) -> frozenset[str]:
    """Ground a layer-``m`` conjunction of predicate labels to ingredient ids.

    A conjunction grounds to the union of its conjuncts' requirement sets.
    Layer 2 uses the directly declared ``map_2_to_0`` entries.
    """
    if m not in (1, 2):
        raise StructuralError(f"layer index must be 1 or 2, got {m}")
    mapping = spec.map_1_to_0 if m == 1 else spec.map_2_to_0
    declared = set(spec.layer1_statements if m == 1 else spec.layer2_statements)
    grounded: set[str] = set()
    for label in statement:
        if label not in declared or label not in mapping:
            raise GroundingLookupError(
                f"label {label!r} is not declared at layer {m}"
            )
        grounded |= mapping[label]
    return frozenset(grounded)


def compose_grounding(spec: LayeredIdentitySpec, label: str) -> frozenset[str]:
    """Ground one layer-2 label by routing through layer 1."""
    if label not in spec.map_2_to_1:
        raise GroundingLookupError(f"label {label!r} has no map_2_to_1 entry")
    grounded: set[str] = set()
    for mid in spec.map_2_to_1[label]:
        if mid not in spec.map_1_to_0:
            raise GroundingLookupError(f"layer-1 label {mid!r} has no map_1_to_0 entry")
        grounded |= spec.map_1_to_0[mid]
    return frozenset(grounded)


def check_compositionality(spec: LayeredIdentitySpec) -> list[str]:
    """Return the layer-2 labels whose direct grounding disagrees with the
    grounding composed through layer 1 (empty list = compositional)."""
    violations = []
    for label in spec.layer2_statements:
        if compose_grounding(spec, label) != spec.map_2_to_0.get(label, frozenset()):
            violations.append(label)
    return violations


def detect_grounding_failures(
    activations: Sequence[ActivationSet],
    statement: Sequence[str],
    layer_m_evaluator: Sequence[bool],
    identity: GroundedIdentity,
    spec: LayeredIdentitySpec,
    m: int = 2,
) -> list[int]:
    """Steps where the layer-``m`` statement is endorsed but its grounded
    conjunction is not fully active.

    ``layer_m_evaluator`` supplies one externally judged boolean per
    objective step (e.g. from a classifier over logged self-reports).
    """
    if len(layer_m_evaluator) != len(activations):
        raise StructuralError(
            f"evaluator series has length {len(layer_m_evaluator)}, "
            f"trajectory has {len(activations)} steps"
        )
    spec.validate_against(identity)
    required = ground(statement, spec, m)
    failures = []
    for act, endorsed in zip(activations, layer_m_evaluator):
        if endorsed and not required <= act.active:
            failures.append(act.step_index)
    return failures


# ---------------------------------------------------------------------------
# Identity spec files
# ---------------------------------------------------------------------------
#
# Either a single JSON document:
#
#   {"ingredients": [{"id": ..., "kind": ..., <kind fields>}, ...],
#    "layers": {"layer2": [...], "layer1": [...],
#               "map_2_to_1": {...}, "map_1_to_0": {...}, "map_2_to_0": {...}}}
#
# or line-delimited JSON where every line is one ingredient record.
# Unknown fields are rejected.

_KIND_FIELDS = {
    "context": {"context_pattern"},
    "memory": {"memory_key", "memory_value"},
    "policy": {"flag_index"},
    "retrieval": {"doc_id"},
}


def _ingredient_from_record(record: dict, where: str) -> IngredientSpec:
    if not isinstance(record, dict):
        raise FileFormatError(f"{where}: ingredient record must be an object")
    kind = record.get("kind")
    if kind not in _KIND_FIELDS:
        raise FileFormatError(f"{where}: unknown ingredient kind {kind!r}")
    allowed = {"id", "kind"} | _KIND_FIELDS[kind]
    unknown = set(record) - allowed
    if unknown:
        raise FileFormatError(f"{where}: unknown fields {sorted(unknown)}")
    missing = allowed - set(record)
    if missing:
        raise FileFormatError(f"{where}: missing fields {sorted(missing)}")
    try:
        return IngredientSpec(
            ingredient_id=record["id"],
            kind=kind,
            context_pattern=tuple(record["context_pattern"]) if kind == "context" else None,
            memory_key=record.get("memory_key"),
            memory_value=record.get("memory_value"),
            flag_index=record.get("flag_index"),
            doc_id=record.get("doc_id"),
        )
    except StructuralError as exc:
        raise FileFormatError(f"{where}: {exc}") from exc


_LAYER_FIELDS = {"layer2", "layer1", "map_2_to_1", "map_1_to_0", "map_2_to_0"}


def _layers_from_record(record: dict, identity: GroundedIdentity) -> LayeredIdentitySpec:
    unknown = set(record) - _LAYER_FIELDS
    if unknown:
        raise FileFormatError(f"layers: unknown fields {sorted(unknown)}")
    missing = _LAYER_FIELDS - set(record)
    if missing:
        raise FileFormatError(f"layers: missing fields {sorted(missing)}")
    try:
        spec = LayeredIdentitySpec(
            layer2_statements=tuple(record["layer2"]),
            layer1_statements=tuple(record["layer1"]),
            map_2_to_1={k: frozenset(v) for k, v in record["map_2_to_1"].items()},
            map_1_to_0={k: frozenset(v) for k, v in record["map_1_to_0"].items()},
            map_2_to_0={k: frozenset(v) for k, v in record["map_2_to_0"].items()},
        )
        spec.validate_against(identity)
    except StructuralError as exc:
        raise FileFormatError(f"layers: {exc}") from exc
    return spec


def parse_identity_document(
    doc: dict,
) -> tuple[GroundedIdentity, LayeredIdentitySpec | None]:
    """Build an identity (and optional layer maps) from a parsed document."""
    if not isinstance(doc, dict):
        raise FileFormatError("identity document must be an object")
    unknown = set(doc) - {"ingredients", "layers"}
    if unknown:
        raise FileFormatError(f"identity document: unknown fields {sorted(unknown)}")
    records = doc.get("ingredients")
    if not isinstance(records, list) or not records:
        raise FileFormatError("identity document needs a non-empty 'ingredients' list")
    ingredients = tuple(
        _ingredient_from_record(rec, f"ingredients[{i}]") for i, rec in enumerate(records)
    )
    try:
        identity = GroundedIdentity(ingredients)
    except StructuralError as exc:
        raise FileFormatError(str(exc)) from exc
    layers = None
    if doc.get("layers") is not None:
        layers = _layers_from_record(doc["layers"], identity)
    return identity, layers


def load_identity_file(
    path: str | Path,
) -> tuple[GroundedIdentity, LayeredIdentitySpec | None]:
    """Load an identity spec from a JSON document or JSONL ingredient list."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.strip()
    if not stripped:
        raise FileFormatError(f"{path}: empty identity spec")
    try:
        doc = json.loads(stripped)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict):
        return parse_identity_document(doc)
    # line-delimited form: one ingredient record per line, no layers
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    return parse_identity_document({"ingredients": records})


def identity_to_document(
    identity: GroundedIdentity, layers: LayeredIdentitySpec | None = None
) -> dict:
    """Serialize an identity (and optional layers) to the file document form."""
    records = []
    for spec in identity.ingredients:
        record: dict = {"id": spec.ingredient_id, "kind": spec.kind}
        if spec.kind == "context":
            record["context_pattern"] = list(spec.context_pattern)
        elif spec.kind == "memory":
            record["memory_key"] = spec.memory_key
            record["memory_value"] = spec.memory_value
        elif spec.kind == "policy":
            record["flag_index"] = spec.flag_index
        else:
            record["doc_id"] = spec.doc_id
        records.append(record)
    doc: dict = {"ingredients": records}
    if layers is not None:
        doc["layers"] = {
            "layer2": list(layers.layer2_statements),
            "layer1": list(layers.layer1_statements),
            "map_2_to_1": {k: sorted(v) for k, v in sorted(layers.map_2_to_1.items())},
            "map_1_to_0": {k: sorted(v) for k, v in sorted(layers.map_1_to_0.items())},
            "map_2_to_0": {k: sorted(v) for k, v in sorted(layers.map_2_to_0.items())},
        }
    return doc
