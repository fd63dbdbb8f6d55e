"""Command-line front end: trace ingestion, metric reports, scenario traces.

Commands:

- ``analyze``  compute the metrics report for a trace + identity spec
- ``simulate`` write a scenario trace, its identity spec, and a sidecar of
  expected values
- ``probe``    score consistency over a file of recorded outputs

Trace files are line-delimited JSON, one record per objective step, in one
of two forms (never mixed within a file):

- full state:  ``{"u": 0, "C": [...], "M": {...}, "pi": [...], "D": [...]}``
- activation:  ``{"u": 0, "F": ["ingredient", ...]}``

Exit codes: 0 success, 2 input/usage errors, 3 metric errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import (
    FileFormatError,
    MetricError,
    OutOfRangeError,
    ParameterError,
    TracebindError,
)
from .identity import (
    ActivationSet,
    GroundedIdentity,
    IngredientSpec,
    ScaffoldArchitecture,
    ScaffoldState,
    activation_sets,
    identity_to_document,
    load_identity_file,
    state_distance,
)
from .metrics import (
    MetricParams,
    MetricsReport,
    consistency,
    continuity,
    gap_ratio,
    identifiability,
    persistence,
    recovery as recovery_metric,
    recovery_bound as recovery_bound_metric,
    render_json,
    render_number,
    render_text,
)
from .simulator import (
    PROBE_IDENTITY,
    probe_presets,
    probe_script,
    run,
    scenario_alternating,
    scenario_capacity_limited,
    scenario_drift_recover,
    scenario_noncommutation,
    scenario_rag_displacement,
)
from .windows import DEFAULT_HORIZON_MAX, WindowConfig


# ---------------------------------------------------------------------------
# Trace files
# ---------------------------------------------------------------------------

_STATE_KEYS = {"u", "C", "M", "pi", "D"}
_ACTIVATION_KEYS = {"u", "F"}


@dataclass(frozen=True)
class TraceData:
    """A parsed trace: either raw states or precomputed activation sets."""

    form: str
    states: tuple[ScaffoldState, ...] = ()
    activations: tuple[ActivationSet, ...] = ()

    def __len__(self) -> int:
        return len(self.states) if self.form == "state" else len(self.activations)

    def to_activations(self, identity: GroundedIdentity) -> list[ActivationSet]:
        if self.form == "activation":
            known = identity.ingredient_ids
            for act in self.activations:
                stray = act.active - known
                if stray:
                    raise FileFormatError(
                        f"step {act.step_index} references ingredients not in the "
                        f"identity spec: {sorted(stray)}"
                    )
            return list(self.activations)
        arch = self._derived_architecture()
        return activation_sets(self.states, identity, arch)

    def _derived_architecture(self) -> ScaffoldArchitecture:
        corpus: set[str] = set()
        capacity = 1
        for state in self.states:
            corpus |= state.retrieved
            capacity = max(capacity, len(state.context))
        n_flags = len(self.states[0].policy_flags) if self.states else 0
        return ScaffoldArchitecture(
            token_alphabet_id="trace",
            memory_key_space_id="trace",
            n_policy_flags=n_flags,
            context_capacity=capacity,
            corpus=frozenset(corpus),
        )


def _require(condition: bool, where: str, message: str) -> None:
    if not condition:
        raise FileFormatError(f"{where}: {message}")


def _string_list(value, where: str, name: str) -> list[str]:
    _require(isinstance(value, list), where, f"{name} must be a list")
    _require(all(isinstance(v, str) for v in value), where, f"{name} entries must be strings")
    return value


def parse_trace(path: str | Path) -> TraceData:
    """Parse a line-delimited trace file, validating form and step sequence."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    records: list[tuple[str, dict]] = []
    for lineno, line in enumerate(lines, start=1):
        where = f"{path}:{lineno}"
        if not line.strip():
            raise FileFormatError(f"{where}: blank line in trace")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{where}: invalid JSON: {exc}") from exc
        _require(isinstance(obj, dict), where, "record must be an object")
        records.append((where, obj))
    if not records:
        raise FileFormatError(f"{path}: empty trace")

    first_keys = set(records[0][1])
    if first_keys == _ACTIVATION_KEYS:
        form = "activation"
    elif first_keys == _STATE_KEYS:
        form = "state"
    else:
        raise FileFormatError(
            f"{records[0][0]}: record fields {sorted(first_keys)} match neither the "
            f"full-state nor the activation form"
        )
    expected_keys = _ACTIVATION_KEYS if form == "activation" else _STATE_KEYS

    states = []
    activations = []
    for index, (where, obj) in enumerate(records):
        _require(
            set(obj) == expected_keys,
            where,
            f"record fields {sorted(set(obj))} do not match the {form} form "
            f"used by this file",
        )
        _require(isinstance(obj["u"], int), where, "u must be an integer")
        _require(
            obj["u"] == index,
            where,
            f"step indices must increase from 0 without gaps; expected u={index}, "
            f"got u={obj['u']}",
        )
        if form == "activation":
            active = _string_list(obj["F"], where, "F")
            activations.append(ActivationSet(step_index=index, active=frozenset(active)))
            continue
        context = _string_list(obj["C"], where, "C")
        _require(isinstance(obj["M"], dict), where, "M must be an object")
        _require(
            all(isinstance(k, str) and isinstance(v, str) for k, v in obj["M"].items()),
            where,
            "M must map strings to strings",
        )
        _require(isinstance(obj["pi"], list), where, "pi must be a list")
        _require(
            all(flag in (0, 1) for flag in obj["pi"]), where, "pi entries must be 0 or 1"
        )
        retrieved = _string_list(obj["D"], where, "D")
        if states and len(obj["pi"]) != len(states[0].policy_flags):
            raise FileFormatError(f"{where}: pi length differs from earlier records")
        states.append(
            ScaffoldState(
                context=tuple(context),
                memory=obj["M"],
                policy_flags=tuple(obj["pi"]),
                retrieved=frozenset(retrieved),
                step_index=index,
            )
        )
    if form == "activation":
        return TraceData(form="activation", activations=tuple(activations))
    return TraceData(form="state", states=tuple(states))


def state_record(state: ScaffoldState) -> dict:
    return {
        "u": state.step_index,
        "C": list(state.context),
        "M": {key: state.memory[key] for key in sorted(state.memory)},
        "pi": list(state.policy_flags),
        "D": sorted(state.retrieved),
    }


def activation_record(act: ActivationSet) -> dict:
    return {"u": act.step_index, "F": sorted(act.active)}


def write_trace(path: Path, records: Sequence[dict]) -> None:
    lines = [json.dumps(record, separators=(",", ":")) for record in records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def _parse_eval_selector(value: str) -> tuple[int, ...] | None:
    if value == "all":
        return None
    try:
        indices = tuple(int(part) for part in value.split(",") if part.strip() != "")
    except ValueError as exc:
        raise ParameterError(f"--eval must be 'all' or a comma-separated list: {exc}")
    if not indices:
        raise ParameterError("--eval list is empty")
    return indices


def build_report(
    activations: Sequence[ActivationSet],
    identity: GroundedIdentity,
    cfg: WindowConfig,
    params: MetricParams,
    ref_index: int,
) -> MetricsReport:
    """Protocol run over precomputed activations: persistence, gap, and the
    trace-computable auxiliary metrics."""
    pers = persistence(activations, identity, cfg)
    gap = gap_ratio(activations, identity, cfg.stride, cfg.eval_indices, cfg.horizon_max)
    _, continuity_mean = continuity(activations, identity.k)
    if not 0 <= ref_index < len(activations):
        raise OutOfRangeError(
            f"reference index {ref_index} is outside the trace of length "
            f"{len(activations)}"
        )
    reference = activations[ref_index]
    indicators = [
        identifiability(activations[cfg.stride * t], reference, identity.k, params.delta_i)
        for t in cfg.eval_indices
    ]
    return MetricsReport(
        p_weak=pers.p_weak,
        p_strong=pers.p_strong,
        gap=gap,
        continuity_mean=continuity_mean,
        identifiability_rate=sum(indicators) / len(indicators),
        consistency=None,
        recovery=None,
        params=params,
        horizon_max=cfg.horizon_max,
        ref_index=ref_index,
        window_delta=cfg.horizon,
        window_stride=cfg.stride,
        t_count=len(cfg.eval_indices),
    )


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_analyze(args: argparse.Namespace) -> int:
    trace = parse_trace(args.trace)
    identity, _layers = load_identity_file(args.identity)
    activations = trace.to_activations(identity)
    explicit = _parse_eval_selector(args.eval)
    if explicit is None:
        cfg = WindowConfig.all_valid(
            args.delta, args.stride, len(activations), args.horizon_max
        )
    else:
        cfg = WindowConfig(
            args.delta, args.stride, explicit, args.horizon_max
        ).restrict_to(len(activations))
    if not cfg.eval_indices:
        raise ParameterError(
            "no evaluation window fits inside the trace; shrink --delta or the "
            "--eval list"
        )
    params = MetricParams(
        delta_i=args.delta_i,
        delta_cons=args.delta_cons,
        epsilon=args.epsilon,
        alpha=args.alpha,
    )
    report = build_report(activations, identity, cfg, params, args.ref_index)
    doc = report.to_document()
    if args.format == "json":
        _emit(render_json(doc) + "\n", args.out)
    else:
        _emit(render_text(doc) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

SCENARIOS = (
    "noncommutation",
    "alternating",
    "capacity",
    "rag-displacement",
    "drift-recover",
    "preset-probe",
)


def _window_doc(cfg: WindowConfig) -> dict:
    return {
        "delta": cfg.horizon,
        "stride": cfg.stride,
        "eval": list(cfg.eval_indices),
        "horizon_max": cfg.horizon_max,
    }


def _persistence_expect(activations, identity, cfg) -> dict:
    result = persistence(activations, identity, cfg)
    return {
        "p_weak": render_number(result.p_weak),
        "p_strong": render_number(result.p_strong),
    }


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = args.scenario_name or args.scenario
    if scenario is None:
        raise ParameterError("simulate needs a scenario name")
    if scenario not in SCENARIOS:
        raise ParameterError(
            f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}"
        )
    base = Path(args.out) if args.out else Path(scenario)
    base.parent.mkdir(parents=True, exist_ok=True)
    sidecar: dict = {"scenario": scenario}

    if scenario == "rag-displacement":
        without_rag, with_rag, identity, cfg = scenario_rag_displacement(
            baseline_block_tokens=args.block,
            passage_tokens=args.passage,
            capacity=args.capacity,
        )
        trace_without = base.with_name(base.name + ".without.trace.jsonl")
        trace_with = base.with_name(base.name + ".with.trace.jsonl")
        identity_path = base.with_name(base.name + ".identity.json")
        write_trace(trace_without, [state_record(s) for s in without_rag])
        write_trace(trace_with, [state_record(s) for s in with_rag])
        identity_path.write_text(
            render_json(identity_to_document(identity)) + "\n", encoding="utf-8"
        )
        trace = parse_trace(trace_without)
        expect_without = _persistence_expect(
            trace.to_activations(identity), identity, cfg
        )
        trace = parse_trace(trace_with)
        expect_with = _persistence_expect(trace.to_activations(identity), identity, cfg)
        sidecar.update(
            {
                "trace_without": trace_without.name,
                "trace_with": trace_with.name,
                "identity": identity_path.name,
                "window": _window_doc(cfg),
                "expect_without": expect_without,
                "expect_with": expect_with,
                "expect": {
                    "p_strong_strictly_drops": True,
                    "p_weak_preserved": True,
                },
            }
        )
    elif scenario == "drift-recover":
        if args.k < 1:
            raise ParameterError("--k must be >= 1")
        if not 0 <= args.drift <= args.k:
            raise ParameterError("--drift must be between 0 and --k")
        if not 0 <= args.controllable <= args.k:
            raise ParameterError("--controllable must be between 0 and --k")
        universe = [f"g{i}" for i in range(args.k)]
        removed = universe[-args.drift:] if args.drift else []
        controllable = universe[: args.controllable]
        reference, drifted, recovered = scenario_drift_recover(
            universe, removed, controllable, args.interventions
        )
        identity = GroundedIdentity(
            tuple(
                IngredientSpec(ingredient_id=i, kind="context", context_pattern=(i,))
                for i in universe
            )
        )
        trace_path = base.with_name(base.name + ".trace.jsonl")
        identity_path = base.with_name(base.name + ".identity.json")
        write_trace(
            trace_path,
            [activation_record(a) for a in (reference, drifted, recovered)],
        )
        identity_path.write_text(
            render_json(identity_to_document(identity)) + "\n", encoding="utf-8"
        )
        epsilon = args.epsilon
        bound = recovery_bound_metric(reference, drifted, controllable, args.k, epsilon)
        if epsilon > 0:
            measured = recovery_metric(reference, drifted, recovered, args.k, epsilon)
        else:
            # with a zero regularizer the ratio is taken directly; no drift
            # at all counts as fully recovered
            d_drift = state_distance(drifted, reference, args.k)
            d_recov = state_distance(recovered, reference, args.k)
            measured = 1.0 if d_drift == 0 else max(0.0, 1.0 - d_recov / d_drift)
        cfg = WindowConfig.all_valid(0, 1, 3, DEFAULT_HORIZON_MAX)
        activations = [reference, drifted, recovered]
        sidecar.update(
            {
                "trace": trace_path.name,
                "identity": identity_path.name,
                "window": _window_doc(cfg),
                "expect": _persistence_expect(activations, identity, cfg),
                "derived": {
                    "recovery_bound": render_number(bound),
                    "recovery_measured": render_number(measured),
                    "recovery_le_bound": measured <= bound + 1e-9,
                    "epsilon": render_number(epsilon),
                },
            }
        )
    else:
        if scenario == "noncommutation":
            states, identity, cfg = scenario_noncommutation()
            extra = {"occurs": True, "coinstantiated": False, "gap_ratio": "inf"}
        elif scenario == "alternating":
            states, identity, cfg = scenario_alternating(args.length)
            extra = {"gap_ratio": "inf"}
        elif scenario == "preset-probe":
            presets = probe_presets()
            if args.preset not in presets:
                raise ParameterError(
                    f"unknown preset {args.preset!r}; choose from "
                    f"{', '.join(sorted(presets))}"
                )
            states = run(
                presets[args.preset], probe_script(args.cycles), skip_unsupported=True
            )
            identity = PROBE_IDENTITY
            cfg = WindowConfig.all_valid(1, 1, len(states), 8)
            sidecar["preset"] = args.preset
            extra = {}
        else:
            states, identity = scenario_capacity_limited(args.c, args.k, args.length)
            cfg = WindowConfig.all_valid(args.delta, 1, len(states), DEFAULT_HORIZON_MAX)
            extra = {}
        trace_path = base.with_name(base.name + ".trace.jsonl")
        identity_path = base.with_name(base.name + ".identity.json")
        write_trace(trace_path, [state_record(s) for s in states])
        identity_path.write_text(
            render_json(identity_to_document(identity)) + "\n", encoding="utf-8"
        )
        trace = parse_trace(trace_path)
        expect = _persistence_expect(trace.to_activations(identity), identity, cfg)
        expect.update(extra)
        sidecar.update(
            {
                "trace": trace_path.name,
                "identity": identity_path.name,
                "window": _window_doc(cfg),
                "expect": expect,
            }
        )

    sidecar_path = base.with_name(base.name + ".expect.json")
    sidecar_path.write_text(render_json(sidecar) + "\n", encoding="utf-8")
    sys.stdout.write(f"wrote {scenario} scenario files next to {base}\n")
    return 0


# ---------------------------------------------------------------------------
# probe
# ---------------------------------------------------------------------------


def cmd_probe(args: argparse.Namespace) -> int:
    lines = Path(args.outputs).read_text(encoding="utf-8").splitlines()
    if len(lines) < 2:
        raise ParameterError("consistency needs at least two recorded outputs")
    score = consistency(lines, delta_cons=args.delta_cons)
    pairs = len(lines) * (len(lines) - 1) // 2
    doc = {
        "consistency": score,
        "pairs": pairs,
        "delta_cons": args.delta_cons,
    }
    if args.format == "json":
        _emit(render_json(doc) + "\n", args.out)
    else:
        _emit(render_text(doc) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tracebind",
        description=(
            "Decide whether identity ingredients merely occur across evaluation "
            "windows or actually co-instantiate at single steps, and compute the "
            "derived identity metrics."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="compute a metrics report for a trace")
    analyze.add_argument("--trace", required=True, help="trace file (JSONL)")
    analyze.add_argument("--identity", required=True, help="identity spec file (JSON)")
    analyze.add_argument("--delta", type=int, default=1, help="window horizon")
    analyze.add_argument("--stride", type=int, default=1, help="window stride")
    analyze.add_argument(
        "--eval",
        default="all",
        help="'all' for every valid layer time, or a comma-separated index list",
    )
    analyze.add_argument(
        "--horizon-max",
        type=int,
        default=DEFAULT_HORIZON_MAX,
        dest="horizon_max",
        help="search cap for minimal horizons in the gap ratio",
    )
    analyze.add_argument("--delta-i", type=float, default=0.25, dest="delta_i")
    analyze.add_argument("--delta-cons", type=float, default=0.5, dest="delta_cons")
    analyze.add_argument("--epsilon", type=float, default=0.01)
    analyze.add_argument("--alpha", type=float, default=0.5)
    analyze.add_argument(
        "--ref-index",
        type=int,
        default=0,
        dest="ref_index",
        help="objective step used as the identifiability reference state",
    )
    analyze.add_argument("--format", choices=("json", "text"), default="json")
    analyze.add_argument("--out", default=None, help="write the report here")
    analyze.set_defaults(func=cmd_analyze)

    simulate = sub.add_parser(
        "simulate", help="write a scenario trace plus expected-values sidecar"
    )
    simulate.add_argument(
        "scenario_name",
        nargs="?",
        default=None,
        metavar="scenario",
        help=f"one of: {', '.join(SCENARIOS)}",
    )
    simulate.add_argument("--scenario", default=None, help="alternative to the positional name")
    simulate.add_argument("--length", type=int, default=100)
    simulate.add_argument("--c", type=int, default=2, help="capacity scenario: max concurrent ingredients")
    simulate.add_argument("--k", type=int, default=3, help="ingredient count")
    simulate.add_argument("--delta", type=int, default=1, help="capacity scenario: window horizon")
    simulate.add_argument("--block", type=int, default=3, help="identity block tokens")
    simulate.add_argument("--passage", type=int, default=10, help="retrieved passage tokens")
    simulate.add_argument("--capacity", type=int, default=12, help="context capacity")
    simulate.add_argument("--drift", type=int, default=3, help="drifted ingredient count")
    simulate.add_argument(
        "--controllable", type=int, default=1, help="prompt-controllable ingredient count"
    )
    simulate.add_argument("--interventions", type=int, default=5)
    simulate.add_argument("--epsilon", type=float, default=0.0)
    simulate.add_argument(
        "--preset", default="controller", help="preset-probe scenario: preset name"
    )
    simulate.add_argument(
        "--cycles", type=int, default=6, help="preset-probe scenario: probe cycles"
    )
    simulate.add_argument("--out", default=None, help="base path for the written files")
    simulate.set_defaults(func=cmd_simulate)

    probe = sub.add_parser("probe", help="consistency over recorded outputs")
    probe.add_argument("outputs", help="file of line-delimited outputs")
    probe.add_argument("--delta-cons", type=float, default=0.5, dest="delta_cons")
    probe.add_argument("--format", choices=("json", "text"), default="text")
    probe.add_argument("--out", default=None)
    probe.set_defaults(func=cmd_probe)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MetricError as exc:
        print(f"tracebind: metric error: {exc}", file=sys.stderr)
        return 3
    except TracebindError as exc:
        print(f"tracebind: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"tracebind: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
