"""Deterministic scaffold simulator.

The transition function applies one action (inference, retrieval, memory
write, tool call) to a scaffold state under an architecture preset.  Context
is a bounded token window with oldest-first eviction of non-pinned tokens;
that single mechanism is what realizes displacement effects.

Five presets ladder up the feature set:

========== ======= ========= ====== ===== ===============
name       pinned  retrieval memory flags state persists
========== ======= ========= ====== ===== ===============
stateless  no      no        no     no    no (prompt only)
prompted   yes     no        no     no    yes
rag        no      yes       no     no    yes
memory     no      yes       yes    no    yes
controller yes     yes       yes    yes   yes
========== ======= ========= ====== ===== ===============

The scenario generators at the bottom build the exact trace shapes that the
architectural results call for, together with the window configuration under
which the claimed inequality is visible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import (
    CapacityError,
    FeatureError,
    ParameterError,
    ScenarioError,
    StructuralError,
)
from .identity import (
    ActivationSet,
    GroundedIdentity,
    IngredientSpec,
    ScaffoldArchitecture,
    ScaffoldState,
    activation_sets,
)
from .metrics import PersistenceResult, persistence
from .windows import WindowConfig

ACTION_KINDS = ("infer", "retrieve", "store", "tool")

PRESET_NAMES = ("stateless", "prompted", "rag", "memory", "controller")


@dataclass(frozen=True)
class Action:
    """One scaffold micro-step: what the agent does between two states."""

    kind: str
    tokens: tuple[str, ...] | None = None
    query: str | None = None
    key: str | None = None
    value: str | None = None
    flag_index: int | None = None
    flag_value: int = 1

    def __post_init__(self) -> None:
        if self.kind not in ACTION_KINDS:
            raise StructuralError(f"unknown action kind {self.kind!r}")
        if self.tokens is not None:
            object.__setattr__(self, "tokens", tuple(self.tokens))
        wanted = {
            "infer": self.tokens is not None and self.query is None
            and self.key is None and self.value is None and self.flag_index is None,
            "retrieve": self.query is not None and self.tokens is None
            and self.key is None and self.value is None and self.flag_index is None,
            "store": self.key is not None and self.value is not None
            and self.tokens is None and self.query is None and self.flag_index is None,
            "tool": self.tokens is None and self.query is None
            and self.key is None and self.value is None,
        }[self.kind]
        if not wanted:
            raise StructuralError(f"payload does not match action kind {self.kind!r}")
        if self.flag_value not in (0, 1):
            raise StructuralError("flag_value must be 0 or 1")


def infer(*tokens: str) -> Action:
    return Action(kind="infer", tokens=tuple(tokens))


def retrieve(query: str) -> Action:
    return Action(kind="retrieve", query=query)


def store(key: str, value: str) -> Action:
    return Action(kind="store", key=key, value=value)


def tool(flag_index: int | None = None, flag_value: int = 1) -> Action:
    """Tool call; with no flag index it is a pure no-op step."""
    return Action(kind="tool", flag_index=flag_index, flag_value=flag_value)


@dataclass(frozen=True)
class RetrievalPolicy:
    """Deterministic retrieval: query -> documents, plus injected token counts.

    ``identity_aware`` resolves an ingredient id to its designated document
    (and falls back to direct corpus lookup); ``query_driven`` resolves only
    direct corpus lookups; ``none`` retrieves nothing.

    A document linked to an ingredient injects that ingredient's id as its
    first token, so retrieving it activates a single-token context pattern
    equal to the ingredient id (and any retrieval-kind ingredient on the
    document itself).
    """

    mode: str
    ingredient_docs: Mapping[str, str] = field(default_factory=dict)
    injected_doc_lengths: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in ("none", "identity_aware", "query_driven"):
            raise StructuralError(f"unknown retrieval mode {self.mode!r}")
        object.__setattr__(self, "ingredient_docs", dict(self.ingredient_docs))
        object.__setattr__(self, "injected_doc_lengths", dict(self.injected_doc_lengths))
        for doc, length in self.injected_doc_lengths.items():
            if length < 0:
                raise StructuralError(f"document {doc!r} has negative length")
        missing = set(self.ingredient_docs.values()) - set(self.injected_doc_lengths)
        if missing:
            raise StructuralError(
                f"ingredient documents without declared lengths: {sorted(missing)}"
            )

    @property
    def corpus(self) -> frozenset[str]:
        return frozenset(self.injected_doc_lengths)

    def resolve(self, query: str) -> tuple[str, ...]:
        if self.mode == "none":
            return ()
        if self.mode == "identity_aware" and query in self.ingredient_docs:
            return (self.ingredient_docs[query],)
        if query in self.injected_doc_lengths:
            return (query,)
        return ()

    def doc_tokens(self, doc_id: str) -> tuple[str, ...]:
        length = self.injected_doc_lengths[doc_id]
        linked = sorted(ing for ing, doc in self.ingredient_docs.items() if doc == doc_id)
        tokens: list[str] = []
        if linked and length > 0:
            tokens.append(linked[0])
        while len(tokens) < length:
            tokens.append(f"{doc_id}/{len(tokens)}")
        return tuple(tokens)

    def validate_covers(self, identity: GroundedIdentity) -> None:
        """Identity-aware policies must be able to activate every ingredient."""
        for spec in identity.ingredients:
            doc = self.ingredient_docs.get(spec.ingredient_id)
            if doc is None:
                raise StructuralError(
                    f"identity-aware policy has no document for ingredient "
                    f"{spec.ingredient_id!r}"
                )
            if spec.kind in ("memory", "policy"):
                raise StructuralError(
                    f"no document can activate the {spec.kind}-kind ingredient "
                    f"{spec.ingredient_id!r}"
                )
            if spec.kind == "context":
                if spec.context_pattern != (spec.ingredient_id,):
                    raise StructuralError(
                        f"identity-aware documents inject the ingredient id as a "
                        f"token; context ingredient {spec.ingredient_id!r} must use "
                        f"the pattern ({spec.ingredient_id!r},)"
                    )
                if self.injected_doc_lengths[doc] < 1:
                    raise StructuralError(
                        f"document {doc!r} is too short to carry ingredient "
                        f"{spec.ingredient_id!r}"
                    )
            if spec.kind == "retrieval" and spec.doc_id != doc:
                raise StructuralError(
                    f"retrieval ingredient {spec.ingredient_id!r} expects document "
                    f"{spec.doc_id!r} but the policy injects {doc!r}"
                )


POLICY_NONE = RetrievalPolicy(mode="none")


@dataclass(frozen=True)
class ArchitecturePreset:
    """Feature configuration of one scaffold architecture.

    Eviction is always oldest-first over non-pinned tokens.
    """

    name: str
    context_capacity: int
    pinned_prefix: tuple[str, ...] = ()
    retrieval: RetrievalPolicy = POLICY_NONE
    memory_enabled: bool = False
    controller_flags_enabled: bool = False
    context_persists: bool = True
    n_policy_flags: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "pinned_prefix", tuple(self.pinned_prefix))
        if self.name not in PRESET_NAMES:
            raise StructuralError(f"unknown preset name {self.name!r}")
        if self.context_capacity < 1:
            raise StructuralError("context_capacity must be >= 1")
        if len(self.pinned_prefix) > self.context_capacity:
            raise StructuralError("pinned prefix exceeds context capacity")
        if self.n_policy_flags < 0:
            raise StructuralError("n_policy_flags must be >= 0")
        checks = {
            "stateless": (
                not self.pinned_prefix and self.retrieval.mode == "none"
                and not self.memory_enabled and not self.controller_flags_enabled
                and not self.context_persists
            ),
            "prompted": (
                self.retrieval.mode == "none" and not self.memory_enabled
                and not self.controller_flags_enabled and self.context_persists
            ),
            "rag": (
                not self.pinned_prefix and self.retrieval.mode != "none"
                and not self.memory_enabled and not self.controller_flags_enabled
                and self.context_persists
            ),
            "memory": (
                not self.pinned_prefix and self.memory_enabled
                and not self.controller_flags_enabled and self.context_persists
            ),
            "controller": (
                self.memory_enabled and self.controller_flags_enabled
                and self.context_persists
            ),
        }
        if not checks[self.name]:
            raise StructuralError(
                f"feature set does not match the {self.name!r} preset"
            )

    def architecture(self) -> ScaffoldArchitecture:
        return ScaffoldArchitecture(
            token_alphabet_id=f"{self.name}-tokens",
            memory_key_space_id=f"{self.name}-keys",
            n_policy_flags=self.n_policy_flags,
            context_capacity=self.context_capacity,
            corpus=self.retrieval.corpus,
        )

    def initial_state(self) -> ScaffoldState:
        return ScaffoldState(
            context=self.pinned_prefix,
            memory={},
            policy_flags=(0,) * self.n_policy_flags,
            retrieved=frozenset(),
            step_index=0,
        )

    def supports(self, action: Action) -> bool:
        if action.kind == "store":
            return self.memory_enabled
        if action.kind == "tool":
            return self.controller_flags_enabled
        return True


def make_preset(
    name: str,
    context_capacity: int = 24,
    pinned_prefix: Sequence[str] = (),
    retrieval: RetrievalPolicy | None = None,
    n_policy_flags: int = 1,
) -> ArchitecturePreset:
    """Build a preset with the feature set its name implies."""
    if name not in PRESET_NAMES:
        raise StructuralError(f"unknown preset name {name!r}")
    if name == "rag" and (retrieval is None or retrieval.mode == "none"):
        raise StructuralError("the rag preset needs a retrieval policy")
    policy = retrieval if retrieval is not None else POLICY_NONE
    features = {
        "stateless": dict(memory_enabled=False, controller_flags_enabled=False,
                          context_persists=False),
        "prompted": dict(memory_enabled=False, controller_flags_enabled=False,
                         context_persists=True),
        "rag": dict(memory_enabled=False, controller_flags_enabled=False,
                    context_persists=True),
        "memory": dict(memory_enabled=True, controller_flags_enabled=False,
                       context_persists=True),
        "controller": dict(memory_enabled=True, controller_flags_enabled=True,
                           context_persists=True),
    }[name]
    return ArchitecturePreset(
        name=name,
        context_capacity=context_capacity,
        pinned_prefix=tuple(pinned_prefix),
        retrieval=policy,
        n_policy_flags=n_policy_flags,
        **features,
    )


def _append_with_eviction(
    context: tuple[str, ...], new_tokens: Sequence[str], preset: ArchitecturePreset
) -> tuple[str, ...]:
    pinned = preset.pinned_prefix
    capacity = preset.context_capacity
    if len(pinned) + len(new_tokens) > capacity:
        raise CapacityError(
            f"cannot fit {len(new_tokens)} tokens next to a pinned prefix of "
            f"{len(pinned)} within capacity {capacity}"
        )
    tail = list(context[len(pinned):]) + list(new_tokens)
    overflow = len(pinned) + len(tail) - capacity
    if overflow > 0:
        tail = tail[overflow:]
    return pinned + tuple(tail)


def step(state: ScaffoldState, action: Action, preset: ArchitecturePreset) -> ScaffoldState:
    """Apply one action; deterministic in (state, action, preset)."""
    if preset.context_persists:
        context = state.context
        memory = dict(state.memory)
        flags = list(state.policy_flags)
        retrieved = set(state.retrieved)
    else:
        # prompt-only scaffolds rebuild their view from scratch each step
        context = preset.pinned_prefix
        memory = {}
        flags = [0] * preset.n_policy_flags
        retrieved = set()

    if action.kind == "infer":
        context = _append_with_eviction(context, action.tokens, preset)
    elif action.kind == "retrieve":
        for doc in preset.retrieval.resolve(action.query):
            retrieved.add(doc)
            context = _append_with_eviction(
                context, preset.retrieval.doc_tokens(doc), preset
            )
    elif action.kind == "store":
        if not preset.memory_enabled:
            raise FeatureError(f"preset {preset.name!r} has no memory module")
        memory[action.key] = action.value
    elif action.kind == "tool":
        if not preset.controller_flags_enabled:
            raise FeatureError(f"preset {preset.name!r} has no controller flags")
        if action.flag_index is not None:
            if not 0 <= action.flag_index < preset.n_policy_flags:
                raise StructuralError(
                    f"flag_index {action.flag_index} out of range for "
                    f"{preset.n_policy_flags} flags"
                )
            flags[action.flag_index] = action.flag_value

    return ScaffoldState(
        context=context,
        memory=memory,
        policy_flags=tuple(flags),
        retrieved=frozenset(retrieved),
        step_index=state.step_index + 1,
    )


def _noop_step(state: ScaffoldState, preset: ArchitecturePreset) -> ScaffoldState:
    if preset.context_persists:
        return ScaffoldState(
            context=state.context,
            memory=state.memory,
            policy_flags=state.policy_flags,
            retrieved=state.retrieved,
            step_index=state.step_index + 1,
        )
    blank = preset.initial_state()
    return ScaffoldState(
        context=blank.context,
        memory=blank.memory,
        policy_flags=blank.policy_flags,
        retrieved=blank.retrieved,
        step_index=state.step_index + 1,
    )


def run(
    preset: ArchitecturePreset,
    script: Sequence[Action],
    initial: ScaffoldState | None = None,
    skip_unsupported: bool = False,
) -> list[ScaffoldState]:
    """Fold :func:`step` over a script, returning every state incl. the initial.

    With ``skip_unsupported`` set, actions outside the preset's feature set
    (a store without memory, a tool call without controller flags) become
    plain no-op steps instead of errors; that keeps trajectories from
    different presets aligned step-for-step under a shared probe script.
    """
    if not script:
        raise ParameterError("script must be non-empty")
    if initial is None:
        initial = preset.initial_state()
    preset.architecture().check_state(initial)
    states = [initial]
    for index, action in enumerate(script):
        try:
            if skip_unsupported and not preset.supports(action):
                states.append(_noop_step(states[-1], preset))
            else:
                states.append(step(states[-1], action, preset))
        except (CapacityError, FeatureError, StructuralError) as exc:
            raise type(exc)(f"script step {index}: {exc}") from exc
    return states


# ---------------------------------------------------------------------------
# Scenario generators
# ---------------------------------------------------------------------------


def _context_identity(ids: Sequence[str]) -> GroundedIdentity:
    return GroundedIdentity(
        tuple(
            IngredientSpec(ingredient_id=i, kind="context", context_pattern=(i,))
            for i in ids
        )
    )


def scenario_noncommutation() -> tuple[list[ScaffoldState], GroundedIdentity, WindowConfig]:
    """Two steps, one ingredient each: the window covers both ingredients but
    no single step holds their conjunction."""
    identity = _context_identity(["p", "q"])
    preset = make_preset("prompted", context_capacity=1)
    initial = ScaffoldState(
        context=("p",), memory={}, policy_flags=(0,), retrieved=frozenset(), step_index=0
    )
    states = run(preset, [infer("q")], initial)
    cfg = WindowConfig(horizon=1, stride=1, eval_indices=(0,), horizon_max=8)
    return states, identity, cfg


def scenario_alternating(
    length: int, k_groups: int = 2
) -> tuple[list[ScaffoldState], GroundedIdentity, WindowConfig]:
    """One ingredient on even steps, the other on odd steps.

    Every two-step window sees both ingredients, so weak persistence is 1,
    while the conjunction is never active at any single step.
    """
    if k_groups != 2:
        raise ParameterError("the alternating construction uses exactly two groups")
    if length < 2:
        raise ParameterError("length must be >= 2")
    identity = _context_identity(["g1", "g2"])
    preset = make_preset("prompted", context_capacity=1)
    initial = ScaffoldState(
        context=("g1",), memory={}, policy_flags=(0,), retrieved=frozenset(), step_index=0
    )
    script = [infer("g2" if u % 2 else "g1") for u in range(1, length)]
    states = run(preset, script, initial)
    cfg = WindowConfig.all_valid(horizon=1, stride=1, trace_length=length, horizon_max=8)
    return states, identity, cfg


def scenario_capacity_limited(
    c: int, k: int, length: int
) -> tuple[list[ScaffoldState], GroundedIdentity]:
    """Rotating ``c``-subsets of ``k`` single-token ingredients under a context
    capacity of ``c`` tokens: no realizable state fits the full conjunction."""
    if c >= k:
        raise ParameterError("capacity c must be strictly less than k")
    if c < 1:
        raise ParameterError("capacity c must be >= 1")
    if length < 1:
        raise ParameterError("length must be >= 1")
    ids = [f"g{i}" for i in range(k)]
    identity = _context_identity(ids)
    preset = make_preset("prompted", context_capacity=c)

    def subset(u: int) -> tuple[str, ...]:
        return tuple(ids[(u + j) % k] for j in range(c))

    initial = ScaffoldState(
        context=subset(0), memory={}, policy_flags=(0,), retrieved=frozenset(), step_index=0
    )
    if length == 1:
        return [initial], identity
    script = [infer(*subset(u)) for u in range(1, length)]
    states = run(preset, script, initial)
    return states, identity


def scenario_rag_displacement(
    baseline_block_tokens: int = 3,
    passage_tokens: int = 10,
    capacity: int = 12,
) -> tuple[list[ScaffoldState], list[ScaffoldState], GroundedIdentity, WindowConfig]:
    """Baseline run with a compact identity block vs. the same agent with
    retrieval injecting a long passage that evicts part of the block.

    Returns (trajectory_without_rag, trajectory_with_rag, identity, cfg).
    The with-retrieval run keeps every ingredient occurring in every window
    (identity-aware re-retrieval) while losing co-instantiation in at least
    one, so strong persistence strictly drops and weak persistence does not.
    """
    k = baseline_block_tokens
    if k < 2:
        raise ParameterError("the identity block needs at least two ingredients")
    if passage_tokens < 0:
        raise ParameterError("passage_tokens must be >= 0")
    script_len = 2 + k
    if k + script_len > capacity:
        raise ScenarioError(
            "capacity cannot hold the baseline run without eviction; "
            "increase capacity or shrink the identity block"
        )
    if 0 < passage_tokens <= capacity - k - 1:
        raise ScenarioError(
            "passage too short to displace the identity block; needs more than "
            f"{capacity - k - 1} tokens"
        )
    if passage_tokens + 1 > capacity:
        raise ScenarioError("passage does not fit in the context at all")

    ids = [f"i{j}" for j in range(k)]
    identity = _context_identity(ids)
    block = tuple(ids)

    baseline_preset = make_preset("prompted", context_capacity=capacity)
    initial = ScaffoldState(
        context=block, memory={}, policy_flags=(0,), retrieved=frozenset(), step_index=0
    )
    baseline_script = [infer(f"task{j}") for j in range(script_len)]
    without_rag = run(baseline_preset, baseline_script, initial)

    policy = RetrievalPolicy(
        mode="identity_aware",
        ingredient_docs={i: f"d{j}" for j, i in enumerate(ids)},
        injected_doc_lengths={f"d{j}": 1 for j in range(k)} | {"passage": passage_tokens},
    )
    policy.validate_covers(identity)
    rag_preset = make_preset("rag", context_capacity=capacity, retrieval=policy)
    rag_script = [infer("task0"), retrieve("passage")] + [retrieve(i) for i in ids]
    with_rag = run(rag_preset, rag_script, initial)

    cfg = WindowConfig.all_valid(
        horizon=2, stride=1, trace_length=len(without_rag), horizon_max=16
    )

    arch_without = baseline_preset.architecture()
    arch_with = rag_preset.architecture()
    base = persistence(activation_sets(without_rag, identity, arch_without), identity, cfg)
    augmented = persistence(activation_sets(with_rag, identity, arch_with), identity, cfg)
    if passage_tokens > 0 and not augmented.p_strong < base.p_strong:
        raise ScenarioError(
            "parameters do not force displacement: strong persistence did not drop"
        )
    if augmented.p_weak < base.p_weak:
        raise ScenarioError(
            "identity-aware re-retrieval failed to preserve weak persistence"
        )
    return without_rag, with_rag, identity, cfg


def scenario_drift_recover(
    reference_ids: Iterable[str],
    drift_ids_removed: Iterable[str],
    controllable: Iterable[str],
    interventions: int,
) -> tuple[ActivationSet, ActivationSet, ActivationSet]:
    """Reference, drifted, and recovered activation sets where interventions
    can restore at most one controllable drifted ingredient per step."""
    reference = frozenset(reference_ids)
    removed = frozenset(drift_ids_removed)
    if not removed <= reference:
        raise ParameterError("drifted ingredients must be a subset of the reference")
    if interventions < 0:
        raise ParameterError("the intervention count must be >= 0")
    drifted = reference - removed
    restored = sorted(frozenset(controllable) & removed)[:interventions]
    return (
        ActivationSet(step_index=0, active=reference),
        ActivationSet(step_index=1, active=drifted),
        ActivationSet(step_index=2, active=drifted | frozenset(restored)),
    )


# ---------------------------------------------------------------------------
# Preset probe
# ---------------------------------------------------------------------------

PROBE_IDENTITY = GroundedIdentity(
    (
        IngredientSpec(ingredient_id="persona", kind="context", context_pattern=("Alice",)),
        IngredientSpec(ingredient_id="charter", kind="retrieval", doc_id="charter"),
    )
)

_PROBE_POLICY = RetrievalPolicy(
    mode="query_driven", injected_doc_lengths={"charter": 2}
)

_PROBE_CAPACITY = 8

_JUNK = tuple(f"task{j}" for j in range(7))


def probe_script(cycles: int = 6) -> list[Action]:
    """Fixed probe: restate the persona, do filler work, retrieve the charter,
    write a note, set a flag, do more filler work; repeat."""
    if cycles < 1:
        raise ParameterError("cycles must be >= 1")
    cycle = [
        infer("I", "am", "Alice"),
        infer(*_JUNK),
        retrieve("charter"),
        store("note", "seen"),
        tool(0),
        infer(*_JUNK),
    ]
    return cycle * cycles


def probe_presets() -> dict[str, ArchitecturePreset]:
    return {
        "stateless": make_preset("stateless", context_capacity=_PROBE_CAPACITY),
        "prompted": make_preset(
            "prompted", context_capacity=_PROBE_CAPACITY, pinned_prefix=("Alice",)
        ),
        "rag": make_preset(
            "rag", context_capacity=_PROBE_CAPACITY, retrieval=_PROBE_POLICY
        ),
        "memory": make_preset(
            "memory", context_capacity=_PROBE_CAPACITY, retrieval=_PROBE_POLICY
        ),
        "controller": make_preset(
            "controller",
            context_capacity=_PROBE_CAPACITY,
            pinned_prefix=("Alice",),
            retrieval=_PROBE_POLICY,
        ),
    }


def preset_probe(cycles: int = 6) -> dict[str, PersistenceResult]:
    """Run the fixed probe script under every preset and score persistence.

    Unsupported actions run as no-op steps so that all five trajectories
    stay aligned on the same objective time axis.
    """
    script = probe_script(cycles)
    results = {}
    cfg = WindowConfig.all_valid(
        horizon=1, stride=1, trace_length=len(script) + 1, horizon_max=8
    )
    for name, preset in probe_presets().items():
        states = run(preset, script, skip_unsupported=True)
        activations = activation_sets(states, PROBE_IDENTITY, preset.architecture())
        results[name] = persistence(activations, PROBE_IDENTITY, cfg)
    return results
