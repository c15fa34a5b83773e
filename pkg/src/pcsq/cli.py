"""Command line front end: simulate, plan, sweep, verify.

Every subcommand starts from a JSON config file (or the bare name of a
packaged preset).  ``simulate`` runs the full engine and writes packets.csv,
summary.txt, and plans.json into an output directory; its exit status is 0
only when the run finished with no bound or smoothness violations, so a CI
job can gate on it directly.  Deliberately failing baselines (a strict
priority run of a cyclic workload, say) pass ``--allow-violations`` to keep
the artifacts and the zero exit.

``plan`` stops after admission and prints each flow's verdict, cycle-tag
stack, and delay bounds.  ``sweep`` re-runs one config with a single dotted
parameter overridden per value and leaves one output directory per value;
runs are independent, executed serially, and each is single threaded.
``verify`` recomputes the admission plans from the config and re-checks an
existing packets.csv against them, which catches a CSV that was edited or
produced by a different build.

Config problems exit with status 2 and a diagnostic naming the offending
field; violations exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from . import metrics
from .config import ConfigError, parse_config
from .engine import ScenarioError, Scenario, plan_flows, run_scenario
from .metrics import warmup_end
from .packet import CLASS_TS


def _preset_names() -> list[str]:
    root = resources.files("pcsq") / "presets"
    return sorted(p.name[: -len(".json")] for p in root.iterdir()
                  if p.name.endswith(".json"))


def _load_config_dict(spec: str) -> dict:
    path = Path(spec)
    if path.exists():
        with open(path, encoding="utf-8") as fp:
            return json.load(fp)
    if path.suffix == "" and "/" not in spec:
        res = resources.files("pcsq") / "presets" / f"{spec}.json"
        if res.is_file():
            return json.loads(res.read_text(encoding="utf-8"))
        raise FileNotFoundError(
            f"no such config file or preset: {spec} "
            f"(presets: {', '.join(_preset_names())})"
        )
    raise FileNotFoundError(f"no such config file: {spec}")


def _scenario(args: argparse.Namespace) -> tuple[dict, Scenario]:
    cfg = _load_config_dict(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.setdefault("run", {})["seed"] = args.seed
    return cfg, parse_config(cfg)


def _us(v) -> str:
    return f"{v / 1e15:.3f}us"


def _write_outputs(out_dir: Path, res) -> metrics.MetricsSnapshot:
    out_dir.mkdir(parents=True, exist_ok=True)
    snap = metrics.finalize(res)
    with open(out_dir / "packets.csv", "w", encoding="utf-8", newline="") as fp:
        metrics.write_packets_csv(fp, res)
    with open(out_dir / "summary.txt", "w", encoding="utf-8") as fp:
        metrics.write_summary(fp, snap, res)
    with open(out_dir / "plans.json", "w", encoding="utf-8") as fp:
        metrics.write_plans_json(fp, res)
    return snap


def _report_verdict(snap: metrics.MetricsSnapshot) -> None:
    if snap.clean:
        print("verdict: clean")
    else:
        print("verdict: VIOLATIONS")
        for v in snap.violations:
            print(f"  {v}")


def cmd_simulate(args: argparse.Namespace) -> int:
    _, sc = _scenario(args)
    out_dir = Path(args.out) if args.out else Path(f"{Path(args.config).stem}_out")
    res = run_scenario(sc)
    snap = _write_outputs(out_dir, res)
    for name in ("packets.csv", "summary.txt", "plans.json"):
        print(f"wrote {out_dir / name}")
    _report_verdict(snap)
    if snap.clean or args.allow_violations:
        return 0
    return 1


def _plan_line(plan) -> str:
    if not plan.admitted:
        return f"{plan.flow_id} REJECT {plan.reason}"
    stack = " ".join(f"{e.out_port}:{e.cycle_offset}" for e in plan.sids)
    line = (
        f"{plan.flow_id} ADMIT sids=[{stack}]"
        f" d_min={plan.d_min} ({_us(plan.d_min)})"
        f" d_max={plan.d_max} ({_us(plan.d_max)})"
        f" jitter={plan.jitter} ({_us(plan.jitter)})"
    )
    if plan.shaped:
        line += f" shaping_cycles={plan.shaping_cycles}"
    return line


def cmd_plan(args: argparse.Namespace) -> int:
    _, sc = _scenario(args)
    plans, _ = plan_flows(sc)
    if not plans:
        print(f"scheduler '{sc.scheduler}' takes no cycle reservations")
        print("admitted 0/0")
        return 0
    admitted = 0
    for fid in sorted(plans):
        plan = plans[fid]
        admitted += plan.admitted
        print(_plan_line(plan))
    frac = admitted / len(plans)
    print(f"admitted {admitted}/{len(plans)} ({100 * frac:.1f}%)")
    return 0


def _set_by_path(cfg: dict, dotted: str, value) -> None:
    node = cfg
    parts = dotted.split(".")
    for i, part in enumerate(parts):
        last = i == len(parts) - 1
        if isinstance(node, list):
            try:
                idx = int(part)
            except ValueError:
                raise ValueError(
                    f"{dotted}: '{part}' indexes a list, expected a number"
                ) from None
            if not 0 <= idx < len(node):
                raise ValueError(f"{dotted}: index {idx} out of range")
            if last:
                node[idx] = value
            else:
                node = node[idx]
        elif isinstance(node, dict):
            if last:
                node[part] = value
            else:
                node = node.setdefault(part, {})
        else:
            raise ValueError(f"{dotted}: '{part}' descends into a scalar")


def _sweep_value(text: str):
    """A sweep value from the command line: JSON if it parses, else a string.

    Numbers and booleans come through as themselves; time and fraction
    literals like 20us or 15/100 stay strings for the config parser.
    """
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in text)


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _load_config_dict(args.config)
    if args.seed is not None:
        base.setdefault("run", {})["seed"] = args.seed
    out_root = Path(args.out) if args.out else Path(
        f"{Path(args.config).stem}_sweep"
    )
    all_clean = True
    for i, text in enumerate(args.values):
        cfg = json.loads(json.dumps(base))
        _set_by_path(cfg, args.parameter, _sweep_value(text))
        sc = parse_config(cfg)
        res = run_scenario(sc)
        snap = _write_outputs(out_root / f"{i}_{_slug(text)}", res)
        admitted = sum(p.admitted for p in res.plans.values())
        ts_jit = [
            st.jitter for st in snap.flows.values()
            if st.cls == CLASS_TS and st.jitter is not None
        ]
        worst = f"{_us(max(ts_jit))}" if ts_jit else "undefined"
        state = "clean" if snap.clean else "VIOLATIONS"
        print(
            f"{args.parameter}={text} admitted={admitted}/{len(res.plans)}"
            f" max_ts_jitter={worst} {state}"
        )
        all_clean = all_clean and snap.clean
    if all_clean or args.allow_violations:
        return 0
    return 1


def cmd_verify(args: argparse.Namespace) -> int:
    _, sc = _scenario(args)
    plans, _ = plan_flows(sc)
    with open(args.csv, encoding="utf-8", newline="") as fp:
        rows = metrics.read_packets_csv(fp)
    wu = warmup_end(sc)
    spec_of = {f.flow_id: f for f in sc.flows}
    failures = 0
    for fid in sorted(plans):
        plan = plans[fid]
        if not plan.admitted:
            continue
        flow_rows = rows.get(fid, [])
        triples = [(c, d, sh) for c, d, sh, _ in flow_rows if d >= 0]
        drops = sum(1 for _, d, _, _ in flow_rows if d < 0)
        check = metrics.check_flow_bounds(
            plan,
            metrics.bound_tolerance(
                plan, spec_of[fid].packet_size, sc.topology
            ),
            sc.cycle_len,
            wu,
            triples,
            deadline=spec_of[fid].deadline,
            drops=drops,
        )
        if not check.checked:
            print(f"{fid} no packets measured")
            continue
        status = "ok" if check.ok else "VIOLATED"
        line = (
            f"{fid} {status} measured={check.measured}"
            f" obs=[{check.obs_min},{check.obs_max}]"
            f" plan=[{check.plan_d_min},{check.plan_d_max}]"
        )
        if check.shifted_packets:
            line += f" shifted={check.shifted_packets}"
        print(line)
        for v in check.violations:
            print(f"  violation {v}")
            failures += 1
    if failures:
        print(f"verdict: {failures} violation(s)")
        return 1
    print("verdict: clean")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcsq",
        description=(
            "Cycle-scheduled network simulator. CONFIG is a JSON file or "
            "the name of a packaged preset."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a config and write results")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: <config>_out)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument(
        "--allow-violations", action="store_true",
        help="exit 0 even when bounds or smoothness fail",
    )
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plan", help="admission only; print per-flow plans")
    p.add_argument("config")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser(
        "sweep", help="re-run with one parameter overridden per value"
    )
    p.add_argument("config")
    p.add_argument(
        "parameter",
        help="dotted path into the config, e.g. scheduler.cycle_len",
    )
    p.add_argument("values", nargs="+", help="one run per value")
    p.add_argument("--out", help="output root (default: <config>_sweep)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument(
        "--allow-violations", action="store_true",
        help="exit 0 even when some run fails its bounds",
    )
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser(
        "verify", help="re-check an existing packets.csv against the config"
    )
    p.add_argument("config")
    p.add_argument("csv", help="packets.csv produced by simulate")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
