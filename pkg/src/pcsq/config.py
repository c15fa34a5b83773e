"""Run configuration: JSON schema, validation, and round-trip serialization.

A config file describes one complete scenario in five sections: topology,
scheduler, flows, control, run.  Every field is validated before anything is
simulated; errors name the offending field by path (``flows[2].generator``)
and unknown fields are rejected outright, so a typo cannot silently fall
back to a default.

Value conventions:

* Times are strings with an exact unit literal ("10us", "100500ns") or raw
  integer zeptosecond counts; they serialize back as the largest unit that
  stays exact.
* Fractions (clock error, BE gap, rate cap) are strings like "15/100" or
  "1e-11", or plain integers.  Floats are rejected: a binary float cannot
  say 0.15 exactly.
* Links are directed and explicit; a two-way connection is two entries.

Parse -> serialize -> parse is the identity on every field.
"""

from __future__ import annotations

import json
from fractions import Fraction
from typing import IO, Any

from .controlplane import FlowSpec
from .engine import (
    ADMISSION_MODES,
    REJECTED_POLICIES,
    SCHEDULERS,
    Scenario,
)
from .packet import CLASS_BE, CLASS_TS
from .scheduler import NUM_BE_PRIORITIES
from .timebase import NodeClock, format_time, parse_time
from .topology import Link, Node, Topology
from .traffic import GENERATOR_KINDS, GeneratorSpec

TAG_RECIPES = ("stop_and_go", "deadline_division", "fixed_stack", "edf_baseline")


class ConfigError(ValueError):
    """A config field is missing, unknown, or malformed; names the path."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


def _typename(v: Any) -> str:
    return type(v).__name__


def _section(cfg: dict, path: str, key: str, required: bool = True) -> dict:
    if key not in cfg:
        if required:
            raise ConfigError(key, "missing section")
        return {}
    v = cfg[key]
    if not isinstance(v, dict):
        raise ConfigError(key, f"expected an object, got {_typename(v)}")
    return v


def _reject_unknown(obj: dict, path: str, allowed: tuple[str, ...]) -> None:
    for k in obj:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}", "unknown field")


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _get(obj: dict, path: str, key: str, kind, default=None, required=False):
    at = _join(path, key)
    if key not in obj:
        if required:
            raise ConfigError(at, "missing required field")
        return default
    v = obj[key]
    if kind is int:
        # bool is an int subclass; a config saying true for a count is a bug.
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError(at, f"expected integer, got {_typename(v)}")
    elif kind is bool:
        if not isinstance(v, bool):
            raise ConfigError(at, f"expected boolean, got {_typename(v)}")
    elif kind is str:
        if not isinstance(v, str):
            raise ConfigError(at, f"expected string, got {_typename(v)}")
    elif kind is list:
        if not isinstance(v, list):
            raise ConfigError(at, f"expected array, got {_typename(v)}")
    return v


def _time(obj: dict, path: str, key: str, default=None, required=False):
    at = _join(path, key)
    if key not in obj:
        if required:
            raise ConfigError(at, "missing required field")
        return default
    v = obj[key]
    if isinstance(v, float):
        raise ConfigError(at, "floats are not exact; use a unit string")
    try:
        return parse_time(v)
    except (ValueError, TypeError) as e:
        raise ConfigError(at, str(e)) from None


def _fraction(obj: dict, path: str, key: str, default=None):
    at = _join(path, key)
    if key not in obj:
        return default
    v = obj[key]
    if isinstance(v, bool) or isinstance(v, float):
        raise ConfigError(at, "use an exact string like \"15/100\"")
    try:
        return Fraction(v)
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError(at, str(e)) from None


def _enum(obj: dict, path: str, key: str, allowed, default=None, required=False):
    v = _get(obj, path, key, str, default=default, required=required)
    if v is not None and v not in allowed:
        raise ConfigError(
            _join(path, key), f"expected one of {', '.join(allowed)}; got {v!r}"
        )
    return v


# --- parse ---------------------------------------------------------------------


def _parse_clock(obj: dict, path: str) -> NodeClock:
    _reject_unknown(obj, path, ("regime", "error", "phase"))
    regime = _enum(obj, path, "regime", ("ideal", "synce", "ptp", "free_running"),
                   default="ideal")
    err = _fraction(obj, path, "error", default=Fraction(0))
    phase = _time(obj, path, "phase", default=0)
    try:
        return NodeClock(regime=regime, frequency_error=err, phase_offset=phase)
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


def _parse_topology(sec: dict) -> Topology:
    _reject_unknown(sec, "topology", ("nodes", "links"))
    nodes = []
    for i, n in enumerate(_get(sec, "topology", "nodes", list, required=True)):
        path = f"topology.nodes[{i}]"
        if not isinstance(n, dict):
            raise ConfigError(path, "expected an object")
        _reject_unknown(n, path, ("id", "name", "clock", "proc_delay"))
        clock = _parse_clock(n.get("clock", {}), f"{path}.clock")
        nodes.append(
            Node(
                node_id=_get(n, path, "id", int, required=True),
                name=_get(n, path, "name", str, default=""),
                clock=clock,
                proc_delay=_time(n, path, "proc_delay", default=0),
            )
        )
    links = []
    for i, l in enumerate(_get(sec, "topology", "links", list, required=True)):
        path = f"topology.links[{i}]"
        if not isinstance(l, dict):
            raise ConfigError(path, "expected an object")
        _reject_unknown(l, path, ("id", "src", "dst", "rate_bps", "prop_delay"))
        try:
            links.append(
                Link(
                    link_id=_get(l, path, "id", int, required=True),
                    src=_get(l, path, "src", int, required=True),
                    dst=_get(l, path, "dst", int, required=True),
                    rate_bps=_get(l, path, "rate_bps", int, required=True),
                    prop_delay=_time(l, path, "prop_delay", required=True),
                )
            )
        except ValueError as e:
            raise ConfigError(path, str(e)) from None
    try:
        return Topology(nodes=nodes, links=links)
    except (ValueError, KeyError) as e:
        raise ConfigError("topology", str(e)) from None


_GEN_FIELDS = (
    "kind", "packet_size", "rate_bps", "burst_bytes", "burst_packets",
    "min_packet_size", "period", "phase", "frame_bytes", "mtu", "streams",
)


def _parse_generator(obj: dict, path: str, flow_id: str) -> GeneratorSpec:
    _reject_unknown(obj, path, _GEN_FIELDS)
    kind = _enum(obj, path, "kind", GENERATOR_KINDS, required=True)
    try:
        return GeneratorSpec(
            kind=kind,
            flow_id=flow_id,
            packet_size=_get(obj, path, "packet_size", int, required=True),
            rate_bps=_get(obj, path, "rate_bps", int, default=0),
            burst_bytes=_get(obj, path, "burst_bytes", int, default=0),
            burst_packets=_get(obj, path, "burst_packets", int, default=1),
            min_packet_size=_get(obj, path, "min_packet_size", int, default=0),
            period=_time(obj, path, "period"),
            phase=_time(obj, path, "phase", default=0),
            frame_bytes=_get(obj, path, "frame_bytes", int, default=0),
            mtu=_get(obj, path, "mtu", int, default=1500),
            streams=_get(obj, path, "streams", int, default=1),
        )
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


_FLOW_FIELDS = (
    "id", "path", "class", "be_priority", "rate_bps", "packet_size",
    "burst_bytes", "shaper_burst_bytes", "period", "phase", "deadline",
    "jitter_bound", "slot_locked", "generator",
)


def _parse_flows(
    sec: list,
) -> tuple[tuple[FlowSpec, ...], dict[str, GeneratorSpec]]:
    flows = []
    gens: dict[str, GeneratorSpec] = {}
    for i, f in enumerate(sec):
        path = f"flows[{i}]"
        if not isinstance(f, dict):
            raise ConfigError(path, "expected an object")
        _reject_unknown(f, path, _FLOW_FIELDS)
        fid = _get(f, path, "id", str, required=True)
        node_path = _get(f, path, "path", list, required=True)
        for j, nid in enumerate(node_path):
            if not isinstance(nid, int) or isinstance(nid, bool):
                raise ConfigError(f"{path}.path[{j}]", "expected a node id")
        cls = _enum(f, path, "class", (CLASS_TS, CLASS_BE), default=CLASS_TS)
        prio = _get(f, path, "be_priority", int, default=0)
        if not 0 <= prio < NUM_BE_PRIORITIES:
            raise ConfigError(
                f"{path}.be_priority", f"outside [0, {NUM_BE_PRIORITIES})"
            )
        try:
            spec = FlowSpec(
                flow_id=fid,
                path=tuple(node_path),
                rate_bps=_get(f, path, "rate_bps", int, required=True),
                packet_size=_get(f, path, "packet_size", int, required=True),
                burst_bytes=_get(f, path, "burst_bytes", int, default=0),
                shaper_burst_bytes=_get(
                    f, path, "shaper_burst_bytes", int, default=0
                ),
                period=_time(f, path, "period"),
                phase=_time(f, path, "phase", default=0),
                deadline=_time(f, path, "deadline"),
                jitter_bound=_time(f, path, "jitter_bound"),
                cls=cls,
                be_priority=prio,
                slot_locked=_get(f, path, "slot_locked", bool, default=True),
            )
        except ValueError as e:
            raise ConfigError(path, str(e)) from None
        flows.append(spec)
        gen = f.get("generator")
        if not isinstance(gen, dict):
            raise ConfigError(f"{path}.generator", "missing generator object")
        gens[fid] = _parse_generator(gen, f"{path}.generator", fid)
    return tuple(flows), gens


def _parse_tags(
    obj: dict, flows: tuple[FlowSpec, ...], scheduler: str
) -> dict[str, tuple[int, ...]]:
    by_id = {f.flow_id: f for f in flows}
    stacks: dict[str, tuple[int, ...]] = {}
    for fid, recipe in obj.items():
        path = f"control.tags.{fid}"
        f = by_id.get(fid)
        if f is None:
            raise ConfigError(path, "unknown flow")
        hops = len(f.path) - 1
        if isinstance(recipe, list):
            for j, off in enumerate(recipe):
                if not isinstance(off, int) or isinstance(off, bool):
                    raise ConfigError(f"{path}[{j}]", "expected an integer offset")
            stacks[fid] = tuple(recipe)
        elif recipe == "stop_and_go":
            stacks[fid] = (1,) * hops
        elif recipe == "deadline_division":
            if f.deadline is None:
                raise ConfigError(path, "deadline_division needs a flow deadline")
            # The planner splits the deadline on its own when one is set.
        elif recipe == "edf_baseline":
            if scheduler != "sp_edf":
                raise ConfigError(
                    path, "edf_baseline only applies to the sp_edf scheduler"
                )
        elif recipe == "fixed_stack":
            raise ConfigError(path, "give the stack itself, e.g. [1, 2, 1]")
        else:
            raise ConfigError(
                path, f"expected one of {', '.join(TAG_RECIPES)} or an array"
            )
    return stacks


_TOP_FIELDS = ("name", "topology", "scheduler", "flows", "control", "run")
_SCHED_FIELDS = (
    "kind", "cycle_len", "num_queues", "queue_cap_packets",
    "be_gap_fraction", "rate_cap",
)
_CONTROL_FIELDS = ("admission", "rejected_policy", "tags")
_RUN_FIELDS = (
    "seed", "horizon", "warmup_hypercycles", "record_tx_links",
    "record_be_packets", "validate_counters",
)


def parse_config(cfg: dict) -> Scenario:
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "expected a JSON object")
    for k in cfg:
        if k not in _TOP_FIELDS:
            raise ConfigError(k, "unknown field")
    name = _get(cfg, "", "name", str, default="")

    sched = _section(cfg, "scheduler", "scheduler")
    _reject_unknown(sched, "scheduler", _SCHED_FIELDS)
    kind = _enum(sched, "scheduler", "kind", SCHEDULERS, required=True)
    cycle_len = _time(sched, "scheduler", "cycle_len", default=0)
    rotating = kind in ("pcsq", "cq")
    if rotating and cycle_len <= 0:
        raise ConfigError("scheduler.cycle_len", "required for rotating schedulers")

    topo = _parse_topology(_section(cfg, "topology", "topology"))

    flows_sec = cfg.get("flows")
    if not isinstance(flows_sec, list):
        raise ConfigError("flows", "expected an array of flow objects")
    flows, gens = _parse_flows(flows_sec)

    control = _section(cfg, "control", "control", required=False)
    _reject_unknown(control, "control", _CONTROL_FIELDS)
    admission = _enum(control, "control", "admission", ADMISSION_MODES,
                      default="global")
    rejected = _enum(control, "control", "rejected_policy", REJECTED_POLICIES,
                     default="exclude")
    tags_obj = control.get("tags", {})
    if not isinstance(tags_obj, dict):
        raise ConfigError("control.tags", "expected an object")
    stacks = _parse_tags(tags_obj, flows, kind)

    run = _section(cfg, "run", "run")
    _reject_unknown(run, "run", _RUN_FIELDS)
    record_links = _get(run, "run", "record_tx_links", list, default=[])
    for j, lid in enumerate(record_links):
        if not isinstance(lid, int) or isinstance(lid, bool):
            raise ConfigError(f"run.record_tx_links[{j}]", "expected a link id")

    return Scenario(
        topology=topo,
        flows=flows,
        generators=gens,
        horizon=_time(run, "run", "horizon", required=True),
        cycle_len=cycle_len,
        num_queues=_get(sched, "scheduler", "num_queues", int, default=15),
        be_gap=_fraction(sched, "scheduler", "be_gap_fraction",
                         default=Fraction(15, 100)),
        queue_cap_packets=_get(sched, "scheduler", "queue_cap_packets", int,
                               default=64),
        scheduler=kind,
        admission=admission,
        rejected_policy=rejected,
        rate_cap=_fraction(sched, "scheduler", "rate_cap",
                           default=Fraction(12, 100)),
        seed=_get(run, "run", "seed", int, default=0),
        warmup_hypercycles=_get(run, "run", "warmup_hypercycles", int,
                                default=10),
        record_tx_links=tuple(record_links),
        record_be_packets=_get(run, "run", "record_be_packets", bool,
                               default=False),
        validate_counters=_get(run, "run", "validate_counters", bool,
                               default=True),
        name=name,
        fixed_stacks=stacks,
    )


def load_config(fp: IO[str]) -> Scenario:
    try:
        cfg = json.load(fp)
    except json.JSONDecodeError as e:
        raise ConfigError("<root>", f"not valid JSON: {e}") from None
    return parse_config(cfg)


# --- serialize -------------------------------------------------------------------


def _frac_str(f: Fraction) -> str | int:
    if f.denominator == 1:
        return int(f)
    return f"{f.numerator}/{f.denominator}"


def _clock_dict(c: NodeClock) -> dict:
    out: dict[str, Any] = {"regime": c.regime}
    if c.frequency_error:
        out["error"] = _frac_str(c.frequency_error)
    if c.phase_offset:
        out["phase"] = format_time(c.phase_offset)
    return out


def _gen_dict(g: GeneratorSpec) -> dict:
    out: dict[str, Any] = {"kind": g.kind, "packet_size": g.packet_size}
    if g.rate_bps:
        out["rate_bps"] = g.rate_bps
    if g.burst_bytes:
        out["burst_bytes"] = g.burst_bytes
    if g.burst_packets != 1:
        out["burst_packets"] = g.burst_packets
    if g.min_packet_size:
        out["min_packet_size"] = g.min_packet_size
    if g.period is not None:
        out["period"] = format_time(g.period)
    if g.phase:
        out["phase"] = format_time(g.phase)
    if g.frame_bytes:
        out["frame_bytes"] = g.frame_bytes
    if g.mtu != 1500:
        out["mtu"] = g.mtu
    if g.streams != 1:
        out["streams"] = g.streams
    return out


def scenario_to_config(sc: Scenario) -> dict:
    """The canonical dict form: parse(scenario_to_config(sc)) == sc."""
    nodes = []
    for nid in sorted(sc.topology.nodes):
        n = sc.topology.nodes[nid]
        nd: dict[str, Any] = {"id": n.node_id}
        if n.name:
            nd["name"] = n.name
        clock = _clock_dict(n.clock)
        if clock != {"regime": "ideal"}:
            nd["clock"] = clock
        if n.proc_delay:
            nd["proc_delay"] = format_time(n.proc_delay)
        nodes.append(nd)
    links = []
    for lid in sorted(sc.topology.links):
        l = sc.topology.links[lid]
        links.append(
            {
                "id": l.link_id,
                "src": l.src,
                "dst": l.dst,
                "rate_bps": l.rate_bps,
                "prop_delay": format_time(l.prop_delay),
            }
        )
    sched: dict[str, Any] = {"kind": sc.scheduler}
    if sc.cycle_len:
        sched["cycle_len"] = format_time(sc.cycle_len)
    if sc.num_queues != 15:
        sched["num_queues"] = sc.num_queues
    if sc.queue_cap_packets != 64:
        sched["queue_cap_packets"] = sc.queue_cap_packets
    if sc.be_gap != Fraction(15, 100):
        sched["be_gap_fraction"] = _frac_str(sc.be_gap)
    if sc.rate_cap != Fraction(12, 100):
        sched["rate_cap"] = _frac_str(sc.rate_cap)

    flows = []
    for f in sc.flows:
        fd: dict[str, Any] = {"id": f.flow_id, "path": list(f.path)}
        if f.cls != CLASS_TS:
            fd["class"] = f.cls
        if f.be_priority:
            fd["be_priority"] = f.be_priority
        fd["rate_bps"] = f.rate_bps
        fd["packet_size"] = f.packet_size
        if f.burst_bytes:
            fd["burst_bytes"] = f.burst_bytes
        if f.shaper_burst_bytes:
            fd["shaper_burst_bytes"] = f.shaper_burst_bytes
        if f.period is not None:
            fd["period"] = format_time(f.period)
        if f.phase:
            fd["phase"] = format_time(f.phase)
        if f.deadline is not None:
            fd["deadline"] = format_time(f.deadline)
        if f.jitter_bound is not None:
            fd["jitter_bound"] = format_time(f.jitter_bound)
        if not f.slot_locked:
            fd["slot_locked"] = False
        fd["generator"] = _gen_dict(sc.generators[f.flow_id])
        flows.append(fd)

    control: dict[str, Any] = {}
    if sc.admission != "global":
        control["admission"] = sc.admission
    if sc.rejected_policy != "exclude":
        control["rejected_policy"] = sc.rejected_policy
    if sc.fixed_stacks:
        control["tags"] = {
            fid: list(stack) for fid, stack in sc.fixed_stacks.items()
        }

    run: dict[str, Any] = {"horizon": format_time(sc.horizon)}
    if sc.seed:
        run["seed"] = sc.seed
    if sc.warmup_hypercycles != 10:
        run["warmup_hypercycles"] = sc.warmup_hypercycles
    if sc.record_tx_links:
        run["record_tx_links"] = list(sc.record_tx_links)
    if sc.record_be_packets:
        run["record_be_packets"] = True
    if not sc.validate_counters:
        run["validate_counters"] = False

    out: dict[str, Any] = {}
    if sc.name:
        out["name"] = sc.name
    out["topology"] = {"nodes": nodes, "links": links}
    out["scheduler"] = sched
    out["flows"] = flows
    if control:
        out["control"] = control
    out["run"] = run
    return out


def dump_config(fp: IO[str], sc: Scenario) -> None:
    json.dump(scenario_to_config(sc), fp, indent=2)
    fp.write("\n")
