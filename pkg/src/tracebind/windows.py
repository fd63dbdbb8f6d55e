"""Windowing of activation traces and the two window predicates.

A window at layer time ``t`` covers objective steps ``s*t .. s*t + delta``.
``occurs`` asks whether every ingredient shows up somewhere in the window;
``coinstantiated`` asks whether some single step holds all of them at once.
The gap between the two is what the rest of the toolkit measures.

Windows are never truncated: a layer time whose window would overrun the
trace is out of range.  Missing minima are reported as ``INFINITE``
(``math.inf``), which sorts above every finite horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import OutOfRangeError, ParameterError, StructuralError
from .identity import ActivationSet, GroundedIdentity

INFINITE = math.inf

DEFAULT_HORIZON_MAX = 256


@dataclass(frozen=True)
class WindowConfig:
    """Horizon, stride, evaluation indices, and the minimal-horizon search cap."""

    horizon: int
    stride: int
    eval_indices: tuple[int, ...]
    horizon_max: int = DEFAULT_HORIZON_MAX

    def __post_init__(self) -> None:
        if self.horizon < 0:
            raise ParameterError("horizon must be >= 0")
        if self.stride < 1:
            raise ParameterError("stride must be >= 1")
        if self.horizon_max < 0:
            raise ParameterError("horizon_max must be >= 0")
        indices = tuple(sorted(set(self.eval_indices)))
        if any(t < 0 for t in indices):
            raise ParameterError("evaluation indices must be >= 0")
        object.__setattr__(self, "eval_indices", indices)

    @classmethod
    def all_valid(
        cls,
        horizon: int,
        stride: int,
        trace_length: int,
        horizon_max: int = DEFAULT_HORIZON_MAX,
    ) -> "WindowConfig":
        """Config whose T contains every layer time with a full window in range."""
        last = trace_length - 1 - horizon
        indices = tuple(range(0, last // stride + 1)) if last >= 0 else ()
        return cls(horizon, stride, indices, horizon_max)

    def restrict_to(self, trace_length: int) -> "WindowConfig":
        """Drop evaluation indices whose windows overrun a trace of this length."""
        kept = tuple(
            t for t in self.eval_indices
            if self.stride * t + self.horizon < trace_length
        )
        return WindowConfig(self.horizon, self.stride, kept, self.horizon_max)


@dataclass(frozen=True)
class WindowSegment:
    """The activation sets of one window, in objective-step order."""

    start: int
    activation_sets: tuple[ActivationSet, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "activation_sets", tuple(self.activation_sets))
        if not self.activation_sets:
            raise StructuralError("a window segment cannot be empty")
        for offset, act in enumerate(self.activation_sets):
            if act.step_index != self.start + offset:
                raise StructuralError(
                    f"segment steps must be consecutive from {self.start}; "
                    f"found step {act.step_index} at offset {offset}"
                )


def window(
    activations: Sequence[ActivationSet], cfg: WindowConfig, t: int
) -> WindowSegment:
    """Slice out the window at layer time ``t``."""
    start = cfg.stride * t
    end = start + cfg.horizon
    if t < 0 or end >= len(activations):
        raise OutOfRangeError(
            f"window at t={t} covers steps {start}..{end}, trace has "
            f"{len(activations)} steps"
        )
    return WindowSegment(start=start, activation_sets=tuple(activations[start : end + 1]))


def occurs(segment: WindowSegment, identity: GroundedIdentity) -> bool:
    """True iff every ingredient is active at some step of the window."""
    covered: set[str] = set()
    for act in segment.activation_sets:
        covered |= act.active
    return identity.ingredient_ids <= covered


def coinstantiated(segment: WindowSegment, identity: GroundedIdentity) -> bool:
    """True iff some single step of the window activates all k ingredients."""
    k = identity.k
    return any(len(act.active) == k for act in segment.activation_sets)


def diamond(segment: WindowSegment, ingredient_subset: Iterable[str]) -> bool:
    """Within-window existential lift: some single step holds the whole subset.

    ``occurs`` is the conjunction of ``diamond`` over singletons;
    ``coinstantiated`` is ``diamond`` of the full ingredient set.
    """
    subset = frozenset(ingredient_subset)
    if not subset:
        raise StructuralError("diamond needs a non-empty ingredient subset")
    return any(subset <= act.active for act in segment.activation_sets)


def minimal_horizons(
    activations: Sequence[ActivationSet],
    identity: GroundedIdentity,
    stride: int,
    t: int,
    horizon_max: int,
) -> tuple[int | float, int | float]:
    """Least horizons at which the window starting at ``stride*t`` first
    satisfies ``occurs`` and ``coinstantiated``.

    The search stops at ``horizon_max`` or the trace end, whichever comes
    first; a minimum not found by then is ``INFINITE``.  The strong horizon
    is never smaller than the weak one.
    """
    start = stride * t
    if t < 0 or start >= len(activations):
        raise OutOfRangeError(
            f"window start {start} is outside the trace of length {len(activations)}"
        )
    universe = identity.ingredient_ids
    k = identity.k
    limit = min(horizon_max, len(activations) - 1 - start)
    w_weak: int | float = INFINITE
    w_strong: int | float = INFINITE
    covered: set[str] = set()
    for delta in range(limit + 1):
        act = activations[start + delta]
        if not act.active <= universe:
            raise StructuralError(
                f"activation set at step {act.step_index} contains ids outside "
                f"the identity universe"
            )
        covered |= act.active
        if w_weak is INFINITE and universe <= covered:
            w_weak = delta
        if w_strong is INFINITE and len(act.active) == k:
            w_strong = delta
        if w_weak is not INFINITE and w_strong is not INFINITE:
            break
    return w_weak, w_strong
