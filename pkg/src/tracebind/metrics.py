"""The identity metrics computed from activation traces.

Persistence counts windows: weak persistence is the fraction of evaluated
windows where every ingredient occurs somewhere, strong persistence the
fraction where some single step holds the full conjunction.  The gap ratio
compares the minimal horizons needed for each.  Identifiability, continuity,
consistency, and recovery are the auxiliary metrics over the activation-set
distance; morphospace compresses everything into three coordinates
(coherence, availability, binding).
"""

from __future__ import annotations

import json
import statistics
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .errors import (
    MetricError,
    OutOfRangeError,
    ParameterError,
    StreamOrderError,
    StructuralError,
)
from .identity import ActivationSet, GroundedIdentity, state_distance
from .windows import INFINITE, WindowConfig, minimal_horizons


@dataclass(frozen=True)
class PersistenceResult:
    """Weak/strong persistence scores plus the per-window flags behind them."""

    p_weak: float
    p_strong: float
    per_window: tuple[tuple[int, bool, bool], ...]


@dataclass(frozen=True)
class GapResult:
    """Per-layer-time minimal horizons and their median ratio.

    Layer times whose weak horizon is already infinite carry no gap
    information; they are excluded from the median and surface only in
    ``undefined_count``.
    """

    per_t: tuple[tuple[int, int | float, int | float], ...]
    ratio: float

    @property
    def undefined_count(self) -> int:
        return sum(1 for _, w_weak, _ in self.per_t if w_weak == INFINITE)


@dataclass(frozen=True)
class MorphospacePoint:
    """Coherence / availability / binding summary of an identity profile.

    Binding can never exceed availability: a window with the conjunction
    jointly active also has every ingredient occurring in it.
    """

    coherence: float
    availability: float
    binding: float
    alpha: float

    def __post_init__(self) -> None:
        if self.binding > self.availability:
            raise StructuralError(
                "binding cannot exceed availability; the scores were not "
                "computed from one persistence run"
            )


@dataclass(frozen=True)
class MetricParams:
    """Thresholds and weights for the auxiliary metrics.

    Defaults are mid-range and are echoed in every report so runs stay
    reproducible.
    """

    delta_i: float = 0.25
    delta_cons: float = 0.5
    epsilon: float = 0.01
    alpha: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.delta_i <= 1.0:
            raise ParameterError("delta_i must be in [0, 1]")
        if not 0.0 <= self.delta_cons <= 1.0:
            raise ParameterError("delta_cons must be in [0, 1]")
        if self.epsilon <= 0.0:
            raise ParameterError("epsilon must be > 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError("alpha must be in [0, 1]")


def _check_membership(act: ActivationSet, universe: frozenset[str]) -> None:
    if not act.active <= universe:
        raise StructuralError(
            f"activation set at step {act.step_index} contains ids outside "
            f"the identity universe"
        )


def persistence(
    activations: Sequence[ActivationSet],
    identity: GroundedIdentity,
    cfg: WindowConfig,
) -> PersistenceResult:
    """Window-counting persistence scores.

    Per layer time: the occur flag checks each ingredient for presence
    anywhere in the window, the coinst flag looks for a step whose
    activation set has full cardinality.  Scores are counts over ``|T|``.
    """
    if not cfg.eval_indices:
        raise ParameterError("evaluation index set T must be non-empty")
    universe = identity.ingredient_ids
    k = identity.k
    n = len(activations)
    per_window = []
    n_weak = 0
    n_strong = 0
    for t in cfg.eval_indices:
        start = cfg.stride * t
        end = start + cfg.horizon
        if end >= n:
            raise OutOfRangeError(
                f"window at t={t} covers steps {start}..{end}, trace has {n} steps"
            )
        covered: set[str] = set()
        coinst = False
        for u in range(start, end + 1):
            act = activations[u]
            _check_membership(act, universe)
            covered |= act.active
            if len(act.active) == k:
                coinst = True
        occur = universe <= covered
        n_weak += occur
        n_strong += coinst
        per_window.append((t, occur, coinst))
    n_t = len(cfg.eval_indices)
    return PersistenceResult(
        p_weak=n_weak / n_t,
        p_strong=n_strong / n_t,
        per_window=tuple(per_window),
    )


def persistence_streaming(
    activations: Iterable[ActivationSet],
    identity: GroundedIdentity,
    cfg: WindowConfig,
) -> PersistenceResult:
    """Single-pass equivalent of :func:`persistence`.

    Keeps a last-seen step per ingredient and a queue of full-conjunction
    steps inside the current window, so the cost is linear in the trace
    length instead of ``|T| * (horizon+1) * k``.  Input must arrive in step
    order; the output is identical to the naive computation on all inputs.
    """
    if not cfg.eval_indices:
        raise ParameterError("evaluation index set T must be non-empty")
    universe = identity.ingredient_ids
    k = identity.k
    stride = cfg.stride
    horizon = cfg.horizon
    order = {ingredient: i for i, ingredient in enumerate(sorted(universe))}

    pending = deque(cfg.eval_indices)
    per_window: list[tuple[int, bool, bool]] = []
    n_weak = 0
    n_strong = 0
    last_seen = [-1] * k
    full_steps: deque[int] = deque()

    expected_u = 0
    next_t = pending.popleft()
    next_end = stride * next_t + horizon
    done = False
    for act in activations:
        if act.step_index != expected_u:
            raise StreamOrderError(
                f"expected step {expected_u}, got {act.step_index}"
            )
        expected_u += 1
        if done:
            continue
        _check_membership(act, universe)
        u = act.step_index
        for ingredient in act.active:
            last_seen[order[ingredient]] = u
        if len(act.active) == k:
            full_steps.append(u)
        while not done and u == next_end:
            start = stride * next_t
            while full_steps and full_steps[0] < start:
                full_steps.popleft()
            occur = min(last_seen) >= start
            coinst = bool(full_steps)
            n_weak += occur
            n_strong += coinst
            per_window.append((next_t, occur, coinst))
            if pending:
                next_t = pending.popleft()
                next_end = stride * next_t + horizon
            else:
                done = True
    if not done:
        raise OutOfRangeError(
            f"window at t={next_t} needs step {next_end}, stream ended at "
            f"step {expected_u - 1}"
        )
    n_t = len(cfg.eval_indices)
    return PersistenceResult(
        p_weak=n_weak / n_t,
        p_strong=n_strong / n_t,
        per_window=tuple(per_window),
    )


def gap_ratio(
    activations: Sequence[ActivationSet],
    identity: GroundedIdentity,
    stride: int,
    eval_indices: Sequence[int],
    horizon_max: int,
) -> GapResult:
    """Median over layer times of ``(w_strong + 1) / (w_weak + 1)``.

    An infinite strong horizon over a finite weak one contributes an
    infinite term.  Layer times with an infinite weak horizon are undefined
    and excluded; if every layer time is undefined the ratio itself is
    undefined and a :class:`MetricError` is raised.
    """
    if not eval_indices:
        raise ParameterError("evaluation index set T must be non-empty")
    per_t = []
    terms = []
    for t in eval_indices:
        w_weak, w_strong = minimal_horizons(activations, identity, stride, t, horizon_max)
        per_t.append((t, w_weak, w_strong))
        if w_weak != INFINITE:
            terms.append((w_strong + 1) / (w_weak + 1))
    if not terms:
        raise MetricError(
            "gap ratio is undefined: no evaluated window has a finite weak horizon"
        )
    return GapResult(per_t=tuple(per_t), ratio=statistics.median(terms))


def identifiability(
    current: ActivationSet, reference: ActivationSet, k: int, delta_i: float
) -> int:
    """1 iff the current activation set is within ``delta_i`` of the reference."""
    return 1 if state_distance(current, reference, k) <= delta_i else 0


def continuity(
    activations: Sequence[ActivationSet],
    k: int,
    step_range: Sequence[int] | None = None,
) -> tuple[list[float], float]:
    """Stepwise continuity ``1 - d(F_u, F_{u-1})`` and its mean over the range.

    ``step_range`` defaults to every step with a predecessor.
    """
    if step_range is None:
        step_range = range(1, len(activations))
    steps = list(step_range)
    if not steps:
        raise ParameterError("continuity needs at least one step with a predecessor")
    per_step = []
    for u in steps:
        if u < 1 or u >= len(activations):
            raise OutOfRangeError(f"continuity step {u} needs a predecessor in range")
        per_step.append(1.0 - state_distance(activations[u], activations[u - 1], k))
    return per_step, sum(per_step) / len(per_step)


def jaccard_similarity(a: str, b: str) -> float:
    """Token-set Jaccard over whitespace-split, case-folded text."""
    ta = set(a.casefold().split())
    tb = set(b.casefold().split())
    if not ta and not tb:
        return 1.0
    return len(ta & tb) / len(ta | tb)


def consistency(
    outputs: Sequence[str],
    similarity: Callable[[str, str], float] = jaccard_similarity,
    delta_cons: float = 0.5,
) -> float:
    """Fraction of unordered output pairs whose similarity clears the threshold."""
    n = len(outputs)
    if n < 2:
        raise ParameterError("consistency needs at least two outputs")
    hits = 0
    for i in range(n):
        for j in range(i + 1, n):
            if similarity(outputs[i], outputs[j]) >= delta_cons:
                hits += 1
    return hits / (n * (n - 1) / 2)


def recovery(
    reference: ActivationSet,
    drifted: ActivationSet,
    recovered: ActivationSet,
    k: int,
    epsilon: float,
) -> float:
    """How much of the drift the corrective interventions undid, in [0, 1]."""
    if epsilon <= 0.0:
        raise ParameterError("epsilon must be > 0")
    d_recov = state_distance(recovered, reference, k)
    d_drift = state_distance(drifted, reference, k)
    return max(0.0, 1.0 - d_recov / (d_drift + epsilon))


def recovery_bound(
    reference: ActivationSet,
    drifted: ActivationSet,
    controllable: Iterable[str],
    k: int,
    epsilon: float,
) -> float:
    """Upper bound on recovery when interventions only reach ``controllable``
    ingredients: ``(|P & D| + eps*k) / (|D| + eps*k)`` over the drift set D."""
    if epsilon < 0.0:
        raise ParameterError("epsilon must be >= 0")
    drift_set = reference.active ^ drifted.active
    reachable = len(frozenset(controllable) & drift_set)
    if epsilon == 0.0 and not drift_set:
        return 1.0
    return (reachable + epsilon * k) / (len(drift_set) + epsilon * k)


def morphospace(
    identifiability_rate: float,
    consistency_score: float,
    p_weak: float,
    p_strong: float,
    alpha: float,
) -> MorphospacePoint:
    """Compress the metrics into (coherence, availability, binding)."""
    for name, value in (
        ("identifiability_rate", identifiability_rate),
        ("consistency", consistency_score),
        ("p_weak", p_weak),
        ("p_strong", p_strong),
        ("alpha", alpha),
    ):
        if not 0.0 <= value <= 1.0:
            raise ParameterError(f"{name} must be in [0, 1]")
    return MorphospacePoint(
        coherence=alpha * consistency_score + (1.0 - alpha) * identifiability_rate,
        availability=p_weak,
        binding=p_strong,
        alpha=alpha,
    )


# ---------------------------------------------------------------------------
# Report serialization (consumed by the CLI)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    """Everything one analysis run produced, ready for serialization.

    ``consistency`` and ``recovery`` stay ``None`` when the run had no
    behavioral outputs or drift/recovery snapshots to score; coherence is
    then unavailable too.
    """

    p_weak: float
    p_strong: float
    gap: GapResult
    continuity_mean: float
    identifiability_rate: float
    consistency: float | None
    recovery: float | None
    params: MetricParams
    horizon_max: int
    ref_index: int
    window_delta: int
    window_stride: int
    t_count: int

    def morphospace_point(self) -> MorphospacePoint:
        if self.consistency is None:
            raise MetricError("morphospace coherence needs a consistency score")
        return morphospace(
            self.identifiability_rate,
            self.consistency,
            self.p_weak,
            self.p_strong,
            self.params.alpha,
        )

    def to_document(self) -> dict:
        """Ordered mapping matching the documented report schema."""
        coh = None
        if self.consistency is not None:
            coh = self.morphospace_point().coherence
        return {
            "p_weak": self.p_weak,
            "p_strong": self.p_strong,
            "gap_ratio": self.gap.ratio,
            "gap_undefined_count": self.gap.undefined_count,
            "continuity_mean": self.continuity_mean,
            "identifiability_rate": self.identifiability_rate,
            "consistency": self.consistency,
            "recovery": self.recovery,
            "morphospace": {
                "coh": coh,
                "avail": self.p_weak,
                "bind": self.p_strong,
                "alpha": self.params.alpha,
            },
            "params": {
                "delta_i": self.params.delta_i,
                "delta_cons": self.params.delta_cons,
                "epsilon": self.params.epsilon,
                "alpha": self.params.alpha,
                "horizon_max": self.horizon_max,
                "ref_index": self.ref_index,
            },
            "window": {
                "delta": self.window_delta,
                "stride": self.window_stride,
                "t_count": self.t_count,
            },
        }


def render_number(value: float | int | None) -> str:
    """Fixed-precision rendering: 6 decimals, ``inf`` for infinities."""
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if value == INFINITE:
        return '"inf"'
    return f"{value:.6f}"


def render_json(value, indent: int = 0) -> str:
    """Deterministic JSON with 6-decimal floats and quoted ``"inf"``.

    Mapping insertion order is preserved, so documents built from the same
    inputs serialize to the same bytes.
    """
    pad = "  " * indent
    if isinstance(value, dict):
        if not value:
            return "{}"
        inner = ",\n".join(
            f'{pad}  "{key}": {render_json(val, indent + 1)}'
            for key, val in value.items()
        )
        return "{\n" + inner + "\n" + pad + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        return "[" + ", ".join(render_json(v, indent) for v in value) + "]"
    if isinstance(value, str):
        return json.dumps(value)
    return render_number(value)


def render_text(doc: dict, prefix: str = "") -> str:
    """Flat ``key = value`` rendering of a report document."""
    lines = []
    for key, value in doc.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            lines.append(render_text(value, prefix=f"{name}."))
        else:
            rendered = render_number(value)
            if rendered == '"inf"':
                rendered = "inf"
            lines.append(f"{name} = {rendered}")
    return "\n".join(lines)
