"""
Experiment specs: parsing, validation and execution

A spec is a JSON document naming one command (solve-mdp, simulate, sweep or
allocate), the channel, and the command's own blocks. Validation collects every
problem before reporting, and execution writes CSV (or policy text) artifacts.
"""
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import pandas as pd
import ujson

from .allocator import enumerate_allocate
from .channel import ChannelParams
from .exceptions import RunFailedError, SpecValidationError, SwitchingStructureError
from .mdp2 import ActionMode, MdpConfig, extract_boundaries, rvi_solve, verify_switching
from .scheduler import AoIState
from .sim.engine import SimConfig
from .sim.policies import POLICY_PARAMS, PolicySpec
from .sim.sweep import SweepPoint, sweep

logger = logging.getLogger(__name__)

COMMANDS = ("solve-mdp", "simulate", "sweep", "allocate")
TOP_LEVEL_KEYS = {"command", "description", "channel", "weights", "policies", "simulation", "sweep", "mdp", "ages", "output"}
CHANNEL_KEYS = {"distances", "snr_db", "path_loss_exp", "target_rate", "noise_power"}
SIMULATION_KEYS = {"horizon", "replications", "warmup", "seed", "initial_ages", "trace"}
SWEEP_AXES = {"snr_db", "n_clients"}
MDP_KEYS = {"levels", "delta_max", "mode", "eliminate", "span_tol"}
POLICY_KEYS = {"name", "label", "params"}


@dataclass
class ExperimentSpec:
    """Validated experiment document"""
    command: str
    channel: dict[str, Any]
    weights: tuple[float, ...] | None = None
    policies: list[PolicySpec] = field(default_factory=list)
    horizon: int = 0
    replications: int = 1
    warmup: int | None = None
    seed: int = 0
    initial_ages: tuple[int, ...] | None = None
    trace: bool = False
    axis: str | None = None
    axis_values: list[float | int] = field(default_factory=list)
    mdp: dict[str, Any] = field(default_factory=dict)
    ages: tuple[int, ...] | None = None
    output: Path | None = None
    description: str = ""

    def channel_at(self, snr_db: float | None = None, n_clients: int | None = None) -> ChannelParams:
        """Channel of one point; an N sweep places clients at d_i = N+1−i"""
        distances = self.channel.get("distances")
        if n_clients is not None:
            distances = [float(n_clients + 1 - i) for i in range(1, n_clients + 1)]
        return ChannelParams.from_snr_db(
            distances,
            self.channel["snr_db"] if snr_db is None else snr_db,
            path_loss_exp=self.channel.get("path_loss_exp", 2.0),
            target_rate=self.channel.get("target_rate", 1.0),
            noise_power=self.channel.get("noise_power", 1.0),
        )


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _check_unknown(block: dict, allowed: set[str], where: str, errors: list[str]) -> None:
    for key in sorted(set(block) - allowed):
        errors.append(f"unknown key '{key}' in {where}")


def _parse_channel(raw: Any, axis: str | None, errors: list[str]) -> dict[str, Any]:
    if not isinstance(raw, dict):
        errors.append("'channel' must be an object")
        return {}
    _check_unknown(raw, CHANNEL_KEYS, "channel", errors)
    channel: dict[str, Any] = {}

    distances = raw.get("distances")
    if distances is None:
        if axis != "n_clients":
            errors.append("missing required field 'channel.distances'")
    elif axis == "n_clients":
        errors.append("'channel.distances' must be omitted in an n_clients sweep (d_i = N+1-i)")
    elif not isinstance(distances, list) or not distances or not all(_is_number(d) and d > 0 for d in distances):
        errors.append("'channel.distances' must be a nonempty list of positive numbers")
    else:
        channel["distances"] = [float(d) for d in distances]

    snr = raw.get("snr_db")
    if snr is None:
        if axis != "snr_db":
            errors.append("missing required field 'channel.snr_db'")
    elif not _is_number(snr):
        errors.append(f"'channel.snr_db' must be a finite number, got {snr!r}")
    else:
        channel["snr_db"] = float(snr)

    for key in ("path_loss_exp", "target_rate", "noise_power"):
        if key in raw:
            if _is_number(raw[key]) and raw[key] > 0:
                channel[key] = float(raw[key])
            else:
                errors.append(f"'channel.{key}' must be a positive number, got {raw[key]!r}")
    return channel


def _parse_policies(raw: Any, errors: list[str]) -> list[PolicySpec]:
    if not isinstance(raw, list) or not raw:
        errors.append("'policies' must be a nonempty list")
        return []
    policies = []
    for i, entry in enumerate(raw):
        where = f"policies[{i}]"
        if isinstance(entry, str):
            entry = {"name": entry}
        if not isinstance(entry, dict):
            errors.append(f"{where} must be a policy name or an object")
            continue
        _check_unknown(entry, POLICY_KEYS, where, errors)
        name = entry.get("name")
        params = entry.get("params", {})
        if name not in POLICY_PARAMS:
            errors.append(f"{where}: unknown policy {name!r}, expected one of {sorted(POLICY_PARAMS)}")
            continue
        if not isinstance(params, dict):
            errors.append(f"{where}.params must be an object")
            continue
        for key in sorted(set(params) - POLICY_PARAMS[name]):
            errors.append(f"{where}: policy '{name}' does not take parameter '{key}'")
        if name == "ap-noma-f-k" and not _is_int(params.get("k")):
            errors.append(f"{where}: policy 'ap-noma-f-k' needs an integer parameter 'k'")
        if "mode" in params and params["mode"] not in {m.value for m in ActionMode}:
            errors.append(f"{where}: mode must be one of {[m.value for m in ActionMode]}")
        policies.append(PolicySpec(name=name, params=dict(params), label=entry.get("label")))
    return policies


def _parse_simulation(raw: Any, spec: ExperimentSpec, errors: list[str]) -> None:
    if not isinstance(raw, dict):
        errors.append("missing required field 'simulation.horizon'" if raw is None else "'simulation' must be an object")
        return
    _check_unknown(raw, SIMULATION_KEYS, "simulation", errors)
    horizon = raw.get("horizon")
    if horizon is None:
        errors.append("missing required field 'simulation.horizon'")
    elif not _is_int(horizon) or horizon < 1:
        errors.append(f"'simulation.horizon' must be a positive integer, got {horizon!r}")
    else:
        spec.horizon = horizon
    for key, low in (("replications", 1), ("seed", 0), ("warmup", 0)):
        if key in raw:
            value = raw[key]
            if not _is_int(value) or value < low:
                errors.append(f"'simulation.{key}' must be an integer >= {low}, got {value!r}")
            else:
                setattr(spec, key, value)
    if spec.warmup is not None and spec.horizon and spec.warmup >= spec.horizon:
        errors.append("'simulation.warmup' must be smaller than the horizon")
    if "initial_ages" in raw:
        ages = raw["initial_ages"]
        if not isinstance(ages, list) or not all(_is_int(a) and a >= 1 for a in ages):
            errors.append("'simulation.initial_ages' must be a list of integers >= 1")
        else:
            spec.initial_ages = tuple(ages)
    spec.trace = bool(raw.get("trace", False))


def _parse_sweep(raw: Any, errors: list[str]) -> tuple[str | None, list]:
    if not isinstance(raw, dict):
        errors.append("missing required field 'sweep' (one of snr_db, n_clients)")
        return None, []
    _check_unknown(raw, SWEEP_AXES, "sweep", errors)
    axes = [axis for axis in SWEEP_AXES if axis in raw]
    if len(axes) != 1:
        errors.append("'sweep' must name exactly one axis: snr_db or n_clients")
        return None, []
    axis = axes[0]
    values = raw[axis]
    if not isinstance(values, list) or not values:
        errors.append(f"'sweep.{axis}' must be a nonempty list")
        return axis, []
    if axis == "snr_db" and not all(_is_number(v) for v in values):
        errors.append("'sweep.snr_db' values must be finite numbers")
    if axis == "n_clients" and not all(_is_int(v) and v >= 1 for v in values):
        errors.append("'sweep.n_clients' values must be integers >= 1")
    return axis, list(values)


def _parse_mdp(raw: Any, errors: list[str]) -> dict[str, Any]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        errors.append("'mdp' must be an object")
        return {}
    _check_unknown(raw, MDP_KEYS, "mdp", errors)
    for key in ("levels", "delta_max"):
        if key in raw and (not _is_int(raw[key]) or raw[key] < 2):
            errors.append(f"'mdp.{key}' must be an integer >= 2")
    if "mode" in raw and raw["mode"] not in {m.value for m in ActionMode}:
        errors.append(f"'mdp.mode' must be one of {[m.value for m in ActionMode]}")
    if "span_tol" in raw and not (_is_number(raw["span_tol"]) and raw["span_tol"] > 0):
        errors.append("'mdp.span_tol' must be a positive number")
    return dict(raw)


def parse_spec(text: str) -> ExperimentSpec:
    """
    Parse and validate an experiment document

    Raises:
        SpecValidationError: carrying every problem found, not just the first
    """
    errors: list[str] = []
    try:
        document = ujson.loads(text) if text.strip() else {}
    except ValueError as e:
        raise SpecValidationError([f"document is not valid JSON: {e}"]) from e
    if not isinstance(document, dict):
        raise SpecValidationError(["document must be a JSON object"])

    _check_unknown(document, TOP_LEVEL_KEYS, "document", errors)
    command = document.get("command")
    if command is None:
        errors.append(f"missing required field 'command' (one of {', '.join(COMMANDS)})")
    elif command not in COMMANDS:
        errors.append(f"unknown command {command!r}, expected one of {', '.join(COMMANDS)}")

    axis, axis_values = None, []
    if command == "sweep":
        axis, axis_values = _parse_sweep(document.get("sweep"), errors)
    elif "sweep" in document:
        errors.append("'sweep' is only allowed with the sweep command")

    if "channel" in document:
        channel = _parse_channel(document["channel"], axis, errors)
    else:
        errors.append("missing required field 'channel'")
        channel = {}

    spec = ExperimentSpec(command=command or "", channel=channel, axis=axis, axis_values=axis_values)
    spec.description = str(document.get("description", ""))
    n_clients = len(channel["distances"]) if "distances" in channel else None

    if "weights" in document:
        weights = document["weights"]
        if axis == "n_clients":
            errors.append("'weights' cannot be given in an n_clients sweep (weights are 1/N)")
        elif not isinstance(weights, list) or not all(_is_number(w) and w >= 0 for w in weights):
            errors.append("'weights' must be a list of nonnegative numbers")
        else:
            if abs(sum(weights) - 1.0) > 1e-9:
                errors.append(f"'weights' must sum to 1, got {sum(weights):g}")
            if n_clients is not None and len(weights) != n_clients:
                errors.append(f"'weights' has {len(weights)} entries for {n_clients} clients")
            spec.weights = tuple(float(w) for w in weights)

    if command in ("simulate", "sweep"):
        spec.policies = _parse_policies(document.get("policies"), errors)
        _parse_simulation(document.get("simulation"), spec, errors)
    if command == "solve-mdp":
        spec.mdp = _parse_mdp(document.get("mdp"), errors)
        if n_clients is not None and n_clients != 2:
            errors.append("solve-mdp needs exactly two client distances")
    if command == "allocate":
        ages = document.get("ages")
        if ages is None:
            errors.append("missing required field 'ages'")
        elif not isinstance(ages, list) or not all(_is_int(a) and a >= 1 for a in ages):
            errors.append("'ages' must be a list of integers >= 1")
        elif n_clients is not None and len(ages) != n_clients:
            errors.append(f"'ages' has {len(ages)} entries for {n_clients} clients")
        else:
            spec.ages = tuple(ages)

    if "output" in document:
        if isinstance(document["output"], str) and document["output"]:
            spec.output = Path(document["output"])
        else:
            errors.append("'output' must be a nonempty path string")

    if errors:
        raise SpecValidationError(errors)
    return spec


def load_spec(path: str | Path) -> ExperimentSpec:
    """Read and parse a spec file (UTF-8)"""
    return parse_spec(Path(path).read_text(encoding="utf-8"))


@dataclass
class ExecutionReport:
    """Artifacts written by one execution"""
    command: str
    paths: list[Path] = field(default_factory=list)
    rows: int = 0


def _timestamp_line() -> str:
    return f"# generated_at={datetime.now(timezone.utc).isoformat(timespec='seconds')}\n"


def _write_csv(frame: pd.DataFrame, path: Path, timestamp: bool) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        if timestamp:
            f.write(_timestamp_line())
        frame.to_csv(f, index=False, lineterminator="\n")


def _write_text(text: str, path: Path, timestamp: bool) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text((_timestamp_line() if timestamp else "") + text, encoding="utf-8")


def _sibling(path: Path, suffix: str, extension: str) -> Path:
    return path.with_name(f"{path.stem}{suffix}{extension}")


def _simulation_points(spec: ExperimentSpec, seed: int, replications: int, workers: int | None) -> tuple[str, list[SweepPoint]]:
    axis = spec.axis or "snr_db"
    values = spec.axis_values if spec.command == "sweep" else [spec.channel["snr_db"]]
    points = []
    for policy in spec.policies:
        for value in values:
            if axis == "n_clients":
                channel, weights = spec.channel_at(n_clients=value), None
            else:
                channel, weights = spec.channel_at(snr_db=value), spec.weights
            config = SimConfig(
                channel=channel,
                policy=policy,
                horizon=spec.horizon,
                weights=weights,
                warmup=spec.warmup,
                seed=seed,
                replications=replications,
                initial_ages=spec.initial_ages if axis != "n_clients" else None,
                workers=workers,
                record_trace=spec.trace,
            )
            points.append(SweepPoint(config=config, axis_value=value))
    return axis, points


def _run_solve_mdp(spec: ExperimentSpec, out: Path, timestamp: bool, report: ExecutionReport) -> None:
    channel = spec.channel_at()
    options = spec.mdp
    config = MdpConfig(
        channel=channel,
        weights=spec.weights or (0.5, 0.5),
        levels=options.get("levels", 10),
        delta_max=options.get("delta_max", 100),
        span_tol=options.get("span_tol"),
        eliminate=options.get("eliminate", True),
        mode=ActionMode(options.get("mode", ActionMode.ADAPTIVE.value)),
    )
    table = rvi_solve(config)
    _write_text(table.to_text(), out, timestamp)
    report.paths.append(out)
    report.rows = table.actions.size

    check = verify_switching(table)
    logger.info(
        f"[experiment] J*={table.average_cost:.6f}, realized actions {table.realized_actions()}, "
        f"switching={'yes' if check.passed else 'no'}"
    )
    try:
        boundaries = extract_boundaries(table)
    except SwitchingStructureError as e:
        logger.warning(f"[experiment] No boundary file written: {e}")
        return
    boundary_path = _sibling(out, "_boundaries", ".txt")
    _write_text(boundaries.to_text(), boundary_path, timestamp)
    report.paths.append(boundary_path)


def _run_allocate(spec: ExperimentSpec, out: Path, timestamp: bool, report: ExecutionReport) -> None:
    channel = spec.channel_at()
    weights = spec.weights or (1.0 / channel.n_clients,) * channel.n_clients
    state = AoIState(spec.ages, weights)
    result = enumerate_allocate(state, channel)

    def row(candidate, label):
        allocation = candidate.allocation
        return {
            "candidate": label,
            "served": "/".join(str(i + 1) for i in allocation.served),
            "k": allocation.k,
            "raw_powers": " ".join(f"{allocation.raw_powers[i]:.12g}" for i in allocation.served),
            "hat_powers": " ".join(f"{h:.12g}" for h in allocation.hat_powers),
            "objective": candidate.objective,
            "expected_drop": candidate.objective - 1.0,
            "envelope_value": candidate.solution.envelope_value,
            "gap_bound": candidate.solution.gap_certificate,
        }

    best = pd.DataFrame([row(result.best, "best")])
    _write_csv(best, out, timestamp)
    per_k = pd.DataFrame([row(candidate, f"K={k}") for k, candidate in sorted(result.per_k.items())])
    per_k_path = _sibling(out, "_per_k", ".csv")
    _write_csv(per_k, per_k_path, timestamp)
    report.paths += [out, per_k_path]
    report.rows = 1
    logger.info(
        f"[experiment] Serving {best.loc[0, 'served']} (K*={result.k_star}), objective {result.objective:.6f}"
    )


def execute(
    spec: ExperimentSpec,
    out: str | Path | None = None,
    seed: int | None = None,
    replications: int | None = None,
    deterministic: bool = False,
    timestamp: bool = True,
    progress: bool = True,
) -> ExecutionReport:
    """
    Run a validated spec and write its artifacts

    Args:
        spec: Parsed spec
        out: Output path, overriding the spec's
        seed: Root seed override for simulations
        replications: Replication count override
        deterministic: Single worker process
        timestamp: Prepend a '# generated_at=' line to each artifact
        progress: Show sweep progress bars

    Raises:
        RunFailedError: a simulate row failed (the CSV is written first; sweep rows only fill their error column)
    """
    default_ext = ".txt" if spec.command == "solve-mdp" else ".csv"
    out = Path(out) if out is not None else spec.output or Path("results") / f"{spec.command}{default_ext}"
    report = ExecutionReport(command=spec.command)
    logger.info(f"[experiment] Running {spec.command} -> {out}")

    if spec.command == "solve-mdp":
        _run_solve_mdp(spec, out, timestamp, report)
    elif spec.command == "allocate":
        _run_allocate(spec, out, timestamp, report)
    else:
        axis, points = _simulation_points(
            spec,
            seed=spec.seed if seed is None else seed,
            replications=spec.replications if replications is None else replications,
            workers=1 if deterministic else None,
        )
        traces: dict[int, list[str]] = {}
        frame = sweep(points, axis=axis, progress=progress, traces=traces)
        _write_csv(frame, out, timestamp)
        report.paths.append(out)
        report.rows = len(frame)
        for index, lines in sorted(traces.items()):
            n = points[index].config.channel.n_clients
            header = ",".join(["slot", *(f"delta_{i}" for i in range(1, n + 1)), "decision", "successes"])
            trace_path = _sibling(out, f"_trace_{index}", ".csv")
            _write_text("\n".join([header, *lines]) + "\n", trace_path, timestamp)
            report.paths.append(trace_path)
        failed = frame[frame["error"] != ""]
        if spec.command == "simulate" and not failed.empty:
            raise RunFailedError([f"{row.policy}: {row.error}" for row in failed.itertuples(index=False)])
    return report
