"""Command-line front end.

    powattack simulate --scenario s.json --out runs/a
    powattack analyze  --scenario s.json --out runs/a
    powattack compare  --scenario s.json --out runs/a --reps 3
    powattack sweep    --scenario s.json --out runs/a --override alpha=0.1:0.45:0.05

Exit codes: 0 ok, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from . import analytics
from .engine import Simulation
from .scenario import InvalidScenario, Scenario, apply_override

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

METRICS_COLUMNS = ["rep", "seed", "miner", "strategy", "power", "blocks_found", "blocks_on_main",
                   "blocks_discarded", "share"]
COMPARE_COLUMNS = ["rep", "seed", "quantity", "state", "simulated", "analytical", "abs_diff"]
SWEEP_COLUMNS = ["point", "rep", "seed", "params", "attack", "alpha", "beta", "defense_enabled",
                 "winner", "pool_share_sim", "pool_share_markov", "main_chain_height", "dummy_blocks",
                 "rejected_blocks", "races", "attacker_race_win_rate", "occupancy_l1", "rho_hat", "z_hat",
                 "stop_reason"]


class ConfigError(Exception):
    pass


@dataclass
class RunSpec:
    command: str
    scenario_path: Path
    output_dir: Path
    overrides: list[tuple[str, str]] = field(default_factory=list)
    repetitions: int = 1
    quiet: bool = False
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ConfigError("--reps must be at least 1")
        if self.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if not self.scenario_path.is_file():
            raise ConfigError(f"scenario file not found: {self.scenario_path}")


def _split_override(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def _load_raw(path: Path) -> dict[str, Any]:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc


def build_scenario(raw: dict[str, Any], overrides: Sequence[tuple[str, Any]]) -> Scenario:
    data = copy.deepcopy(raw)
    try:
        for key, value in overrides:
            apply_override(data, key, value)
    except (KeyError, IndexError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot apply override: {exc}") from exc
    return Scenario.from_dict(data).validate()


def _emit(spec: RunSpec, msg: str) -> None:
    if not spec.quiet:
        print(msg)


def _dump_json(path: Path, obj: Any) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in columns})


def _fmt(v: Any) -> Any:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


# --- simulate ---------------------------------------------------------------------


def cmd_simulate(spec: RunSpec) -> int:
    scenario = build_scenario(_load_raw(spec.scenario_path), spec.overrides)
    spec.output_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(spec.repetitions):
        s = scenario.with_seed(scenario.seed + k)
        trace = Simulation(s).run()
        target = spec.output_dir if spec.repetitions == 1 else spec.output_dir / f"rep_{k:03d}"
        target.mkdir(parents=True, exist_ok=True)
        with open(target / "events.jsonl", "w") as fh:
            trace.write_events(fh)
        with open(target / "blocks.jsonl", "w") as fh:
            trace.write_blocks(fh)
        summary = analytics.summarize(trace)
        _dump_json(target / "summary.json", summary)
        shares = summary["shares"] or [None] * len(s.miners)
        for m in s.miners:
            rows.append({
                "rep": k, "seed": s.seed, "miner": m.id, "strategy": m.strategy, "power": m.power,
                "blocks_found": trace.blocks_found[m.id], "blocks_on_main": trace.blocks_on_main[m.id],
                "blocks_discarded": trace.blocks_discarded[m.id], "share": shares[m.id],
            })
        _emit(spec, f"rep {k} seed {s.seed}: height {summary['main_chain_height']}, "
                    f"stop {summary['stop_reason']}, shares {_short(summary['shares'])}")
    _write_csv(spec.output_dir / "metrics.csv", METRICS_COLUMNS, rows)
    return EXIT_OK


def _short(xs) -> str:
    if xs is None:
        return "n/a"
    return "[" + ", ".join(f"{x:.4f}" for x in xs) + "]"


# --- analyze ----------------------------------------------------------------------


def _race_prediction(s: Scenario) -> Optional[str]:
    att = s.attacker
    if att is None:
        return None
    if att.strategy == "bdos":
        return analytics.race_winner_eq1(s.beta, s.honest_power).value
    return analytics.race_winner_eq3(att.power, s.honest_power).value


def _attack_model(s: Scenario) -> analytics.MarkovModel:
    model = analytics.model_for_scenario(s)
    if model is None:
        raise ConfigError("scenario has no attacker; this command needs a bdos or selfish miner")
    return model


def cmd_analyze(spec: RunSpec) -> int:
    s = build_scenario(_load_raw(spec.scenario_path), spec.overrides)
    report = analytics.model_report(_attack_model(s))
    report["predictions"]["race_winner"] = _race_prediction(s)
    spec.output_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(spec.output_dir / "analysis.json", report)
    _emit(spec, json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


# --- compare ----------------------------------------------------------------------


def compare_rows(trace, rep: int) -> list[dict]:
    s = trace.scenario
    model = _attack_model(s)
    pi = analytics.stationary(model)
    occ = analytics.occupancy_from_trace(trace, len(model.states))
    base = {"rep": rep, "seed": s.seed}
    rows = []
    for k, name in enumerate(model.states):
        rows.append({**base, "quantity": "occupancy", "state": name, "simulated": float(occ[k]),
                     "analytical": float(pi[k]), "abs_diff": abs(float(occ[k] - pi[k]))})
    rows.append({**base, "quantity": "occupancy_l1", "simulated": analytics.l1(occ, pi), "analytical": 0.0,
                 "abs_diff": analytics.l1(occ, pi)})
    sim_share = trace.blocks_on_main[s.attacker.id] / max(1, sum(trace.blocks_on_main))
    markov = analytics.predicted_attacker_share(model, pi)
    rows.append({**base, "quantity": "attacker_share", "simulated": sim_share, "analytical": markov,
                 "abs_diff": abs(sim_share - markov)})
    if trace.races:
        won = sum(1 for r in trace.races if r.attacker_won) / len(trace.races)
        rows.append({**base, "quantity": "attacker_race_win_rate", "simulated": won})
        majority = "tie" if won == 0.5 else ("attacker" if won > 0.5 else "rational")
        if s.attack == "selfish":
            majority = {"attacker": "pool", "rational": "authentic"}.get(majority, majority)
        rows.append({**base, "quantity": "race_winner", "simulated": majority,
                     "analytical": _race_prediction(s)})
    return rows


def cmd_compare(spec: RunSpec) -> int:
    scenario = build_scenario(_load_raw(spec.scenario_path), spec.overrides)
    _attack_model(scenario)
    rows = []
    for k in range(spec.repetitions):
        trace = Simulation(scenario.with_seed(scenario.seed + k)).run()
        part = compare_rows(trace, k)
        rows.extend(part)
        l1 = next(r["simulated"] for r in part if r["quantity"] == "occupancy_l1")
        _emit(spec, f"rep {k} seed {trace.scenario.seed}: occupancy L1 {l1:.4f}")
    spec.output_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(spec.output_dir / "compare.csv", COMPARE_COLUMNS, rows)
    return EXIT_OK


# --- sweep ------------------------------------------------------------------------


def parse_range(text: str) -> Optional[list[Any]]:
    """``start:stop:step`` (stop included) or ``a,b,c``; None for a single value."""
    if "," in text:
        return [_scalar(v) for v in text.split(",") if v.strip()]
    parts = text.split(":")
    if len(parts) != 3:
        return None
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        return None
    if step <= 0 or stop < start:
        raise ConfigError(f"bad range {text!r}: need step > 0 and stop >= start")
    n = int(round((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 12) for k in range(n)]


def _scalar(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def sweep_points(overrides: Sequence[tuple[str, str]]) -> list[list[tuple[str, Any]]]:
    fixed, axes = [], []
    for key, value in overrides:
        values = parse_range(value)
        if values is None:
            fixed.append((key, value))
        else:
            axes.append((key, values))
    grid = itertools.product(*[[(k, v) for v in vs] for k, vs in axes])
    return [fixed + list(point) for point in grid]


def _sweep_row(job: tuple[int, int, Scenario, str]) -> dict:
    point, rep, s, params = job
    trace = Simulation(s).run()
    summ = analytics.summarize(trace)
    att = s.attacker
    row = {
        "point": point, "rep": rep, "seed": s.seed, "params": params, "attack": s.attack,
        "alpha": att.power if att else None, "beta": s.beta, "defense_enabled": int(s.defense_enabled),
        "winner": _race_prediction(s),
        "pool_share_sim": summ["shares"][att.id] if att and summ["shares"] else None,
        "pool_share_markov": summ.get("attacker_share_markov"),
        "main_chain_height": summ["main_chain_height"], "dummy_blocks": summ["dummy_blocks"],
        "rejected_blocks": summ["rejected_blocks"], "races": summ["races"],
        "attacker_race_win_rate": summ["races_won_by_attacker"] / summ["races"] if summ["races"] else None,
        "occupancy_l1": summ.get("occupancy_l1"), "stop_reason": summ["stop_reason"],
    }
    losses = summ.get("losses")
    if losses:
        row["rho_hat"], row["z_hat"] = losses["rho_hat"], losses["z_hat"]
    return row


def cmd_sweep(spec: RunSpec) -> int:
    raw = _load_raw(spec.scenario_path)
    jobs = []
    for p, point in enumerate(sweep_points(spec.overrides)):
        s = build_scenario(raw, point)
        params = ";".join(f"{k}={v if isinstance(v, str) else json.dumps(v)}" for k, v in point)
        for k in range(spec.repetitions):
            jobs.append((p, k, s.with_seed(s.seed + k), params))
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    rows.sort(key=lambda r: (r["point"], r["rep"]))
    spec.output_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(spec.output_dir / "sweep.csv", SWEEP_COLUMNS, rows)
    _emit(spec, f"{len(rows)} rows written to {spec.output_dir / 'sweep.csv'}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "compare": cmd_compare, "sweep": cmd_sweep}
HELP = {
    "simulate": "run the scenario and write traces, summary and per-miner metrics",
    "analyze": "solve the attack's Markov chain and report its predictions",
    "compare": "simulate and compare state occupancy and revenue against the Markov chain",
    "sweep": "run a grid of overrides (start:stop:step or a,b,c) and write one CSV row per run",
}


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="powattack", description="PoW withholding-attack simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--scenario", required=True, type=Path, help="scenario JSON file")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="set a scenario field (dotted keys; 'alpha' rescales the other miners)")
        p.add_argument("--reps", type=int, default=1, help="repetitions; seed of rep k is base seed + k")
        p.add_argument("--quiet", action="store_true")
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1, help="worker processes for grid points")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        spec = RunSpec(
            command=args.command,
            scenario_path=args.scenario,
            output_dir=args.out,
            overrides=[_split_override(o) for o in args.override],
            repetitions=args.reps,
            quiet=args.quiet,
            jobs=getattr(args, "jobs", 1),
        )
        return COMMANDS[spec.command](spec)
    except (ConfigError, InvalidScenario, analytics.InvalidPowers) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure inside a run maps to exit 3
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
