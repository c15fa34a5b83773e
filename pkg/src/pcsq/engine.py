"""Scenario orchestration: validate, plan, prepare, run, account.

A `Scenario` is the complete description of one deterministic run: topology,
flow contracts, generators, scheduler choice, admission mode and seeds.
`run_scenario` turns it into a `RunResult` in four steps:

1. probe handshake to learn inter-node cycle mappings (rotating schedulers),
2. admission (or unchecked planning) per the scenario's admission mode,
3. flattening everything into a `PreparedSim` that the event cores consume,
4. the event core itself, selected at import time (compiled if available).

The cores only see plain integers, tuples and iterators; every object lookup
that can be resolved ahead of time is resolved here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterator

from .controlplane import (
    DEFAULT_RATE_CAP,
    FlowSpec,
    PathPlan,
    ResourceLedger,
    plan_unchecked,
)
from .controlplane import admit as admit_flow
from .mapping import CycleMappingTable, run_probe_handshake
from .packet import CLASS_BE, CLASS_TS
from .scheduler import NUM_BE_PRIORITIES
from .timebase import NodeClock, SimTime
from .topology import Topology
from .traffic import GeneratorSpec, be_streams, derive_seed, make_emitter

SCHEDULERS = ("pcsq", "cq", "sp", "sp_edf")
ADMISSION_MODES = ("global", "per_ingress", "none")
REJECTED_POLICIES = ("exclude", "best_effort")

# Rank base for deadline scheduling when a flow declares no deadline: far
# beyond any practical horizon, so such packets sort behind every
# deadline-bearing packet but stay FIFO among themselves.
NO_DEADLINE: SimTime = 10**24


class ScenarioError(ValueError):
    """The scenario is internally inconsistent (bad reference, bad knob)."""


@dataclass
class Scenario:
    """One complete, reproducible simulation setup."""

    topology: Topology
    flows: tuple[FlowSpec, ...]
    generators: dict[str, GeneratorSpec]
    horizon: SimTime
    cycle_len: SimTime = 0
    num_queues: int = 15
    be_gap: Fraction = Fraction(15, 100)
    queue_cap_packets: int = 64
    scheduler: str = "pcsq"
    admission: str = "global"
    rejected_policy: str = "exclude"
    rate_cap: Fraction = DEFAULT_RATE_CAP
    seed: int = 0
    warmup_hypercycles: int = 10
    record_tx_links: tuple[int, ...] = ()
    record_be_packets: bool = False
    validate_counters: bool = True
    name: str = ""
    # Per-flow tag override: flow_id -> explicit per-hop offset stack.
    # Flows not listed get the planner's automatic choice (deadline split
    # when encodable, else next-cycle forwarding).
    fixed_stacks: dict[str, tuple[int, ...]] = field(default_factory=dict)


# --- prepared (flattened) form -----------------------------------------------


@dataclass
class PortCfg:
    idx: int
    link_id: int
    src_node: int
    dst_node: int
    rate_bps: int
    prop_delay: SimTime
    dst_proc: SimTime
    record_tx: bool


@dataclass
class NodeCfg:
    idx: int
    node_id: int
    clock: NodeClock
    phase: SimTime
    rate_num: int
    rate_den: int
    out_ports: tuple[int, ...]


@dataclass
class FlowRt:
    """One runtime flow as the cores see it.

    `hops` is ((port_idx, cycle_offset), ...) along the path; offsets are
    ignored by non-rotating ports.  `parent_id` groups expanded background
    streams back under their declared flow for reporting.
    """

    idx: int
    flow_id: str
    parent_id: str
    cls: str
    be_priority: int
    ingress_node: int
    hops: tuple[tuple[int, int], ...]
    shaped: bool
    slots: dict[int, int]
    deadline: SimTime
    record: bool
    emitter: Iterator[tuple[SimTime, int]]


@dataclass
class PreparedSim:
    scheduler: str
    cycle_len: SimTime
    num_queues: int
    be_gap: Fraction
    queue_cap_packets: int
    horizon: SimTime
    nodes: tuple[NodeCfg, ...]
    ports: tuple[PortCfg, ...]
    flows: tuple[FlowRt, ...]
    validate: bool


@dataclass
class RunResult:
    scenario: Scenario
    plans: dict[str, PathPlan]
    tables: dict[int, CycleMappingTable]
    raw: "RawRun"
    prepared: PreparedSim


# The cores fill this in; engine and metrics read it.  Delay aggregates are
# kept for every flow; full per-packet logs only where FlowRt.record is set.
# A deliveries entry is (created, delivered, shift count, packet seq), one
# item per delivered packet in delivery order; a drop_log entry is
# (packet seq, created, reason) in drop order.
@dataclass
class RawRun:
    generated: list[int]
    delivered: list[int]
    dropped: list[dict[str, int]]
    resident: list[int]
    delay_sum: list[int]
    delay_min: list[int]  # -1 until the first delivery
    delay_max: list[int]
    deliveries: list[tuple[list[int], list[int], bytearray, list[int]] | None]
    drop_log: list[tuple[list[int], list[int], list[str]] | None]
    tx_times: dict[int, list[int]]
    tx_sizes: dict[int, list[int]]
    port_stats: list[dict[str, object]]
    event_count: int
    boundary_count: int


def _validate_scenario(sc: Scenario) -> None:
    if sc.scheduler not in SCHEDULERS:
        raise ScenarioError(f"unknown scheduler {sc.scheduler!r}")
    if sc.admission not in ADMISSION_MODES:
        raise ScenarioError(f"unknown admission mode {sc.admission!r}")
    if sc.rejected_policy not in REJECTED_POLICIES:
        raise ScenarioError(f"unknown rejected_policy {sc.rejected_policy!r}")
    if sc.horizon <= 0:
        raise ScenarioError("horizon must be positive")
    rotating = sc.scheduler in ("pcsq", "cq")
    if rotating and sc.cycle_len <= 0:
        raise ScenarioError("rotating schedulers need cycle_len > 0")
    seen: set[str] = set()
    for f in sc.flows:
        if f.flow_id in seen:
            raise ScenarioError(f"duplicate flow id {f.flow_id!r}")
        seen.add(f.flow_id)
        for n in f.path:
            if n not in sc.topology.nodes:
                raise ScenarioError(f"flow {f.flow_id}: unknown node {n}")
        # Raises KeyError with the missing pair if any hop has no link.
        sc.topology.path_links(f.path)
        gen = sc.generators.get(f.flow_id)
        if gen is None:
            raise ScenarioError(f"flow {f.flow_id}: no generator")
        if gen.kind == "be_background" and f.cls != CLASS_BE:
            raise ScenarioError(
                f"flow {f.flow_id}: be_background needs cls 'be'"
            )
    for fid in sc.generators:
        if fid not in seen:
            raise ScenarioError(f"generator for unknown flow {fid!r}")
    for lid in sc.record_tx_links:
        if lid not in sc.topology.links:
            raise ScenarioError(f"record_tx_links: unknown link {lid}")
    by_id = {f.flow_id: f for f in sc.flows}
    for fid, stack in sc.fixed_stacks.items():
        f = by_id.get(fid)
        if f is None:
            raise ScenarioError(f"fixed_stacks: unknown flow {fid!r}")
        if f.cls != CLASS_TS:
            raise ScenarioError(f"fixed_stacks: flow {fid!r} is not ts")
        if len(stack) != len(f.path) - 1:
            raise ScenarioError(
                f"fixed_stacks: flow {fid!r} stack length {len(stack)} "
                f"!= {len(f.path) - 1} hops"
            )


def plan_flows(
    sc: Scenario,
) -> tuple[dict[str, PathPlan], dict[int, CycleMappingTable]]:
    """Probe handshake plus admission, in flow-id order."""
    rotating = sc.scheduler in ("pcsq", "cq")
    if not rotating:
        return {}, {}
    # Tables exist to feed admission; with admission off nothing reads them
    # and the probe handshake would demand reverse links for replies.
    if sc.admission == "none":
        tables = {}
    else:
        tables = run_probe_handshake(sc.topology, sc.cycle_len, sc.num_queues)
    plans: dict[str, PathPlan] = {}
    ledgers: dict[object, ResourceLedger] = {}

    def ledger_for(flow: FlowSpec) -> ResourceLedger:
        key = flow.path[0] if sc.admission == "per_ingress" else None
        if key not in ledgers:
            ledgers[key] = ResourceLedger(
                sc.topology,
                sc.cycle_len,
                num_queues=sc.num_queues,
                be_gap=sc.be_gap,
                rate_cap=sc.rate_cap,
            )
        return ledgers[key]

    # Admission works through flows in flow-id order, first fit.  Contested
    # slots therefore resolve the same way no matter how a config lists its
    # flows.
    for flow in sorted(sc.flows, key=lambda f: f.flow_id):
        if flow.cls != CLASS_TS:
            continue
        stack = sc.fixed_stacks.get(flow.flow_id)
        if sc.admission == "none":
            plans[flow.flow_id] = plan_unchecked(
                flow,
                sc.topology,
                sc.cycle_len,
                fixed_stack=stack,
                num_queues=sc.num_queues,
            )
        else:
            plans[flow.flow_id] = admit_flow(
                flow,
                sc.topology,
                ledger_for(flow),
                tables,
                horizon=sc.horizon,
                fixed_stack=stack,
            )
    return plans, tables


def prepare(
    sc: Scenario,
) -> tuple[PreparedSim, dict[str, PathPlan], dict[int, CycleMappingTable]]:
    _validate_scenario(sc)
    plans, tables = plan_flows(sc)
    topo = sc.topology
    rotating = sc.scheduler in ("pcsq", "cq")

    node_idx = {nid: i for i, nid in enumerate(sorted(topo.nodes))}
    nodes = []
    for nid, i in node_idx.items():
        n = topo.nodes[nid]
        nodes.append(
            NodeCfg(
                idx=i,
                node_id=nid,
                clock=n.clock,
                phase=n.clock.phase_offset,
                rate_num=n.clock.rate_num,
                rate_den=n.clock.rate_den,
                out_ports=(),
            )
        )
    ports = []
    port_of_link: dict[int, int] = {}
    record_set = set(sc.record_tx_links)
    for lid in sorted(topo.links):
        link = topo.links[lid]
        idx = len(ports)
        port_of_link[lid] = idx
        ports.append(
            PortCfg(
                idx=idx,
                link_id=lid,
                src_node=node_idx[link.src],
                dst_node=node_idx[link.dst],
                rate_bps=link.rate_bps,
                prop_delay=link.prop_delay,
                dst_proc=topo.nodes[link.dst].proc_delay,
                record_tx=lid in record_set,
            )
        )
    by_node: dict[int, list[int]] = {i: [] for i in range(len(nodes))}
    for p in ports:
        by_node[p.src_node].append(p.idx)
    for cfg in nodes:
        cfg.out_ports = tuple(by_node[cfg.idx])

    def path_hops(path: tuple[int, ...], offset: int) -> tuple[tuple[int, int], ...]:
        links = topo.path_links(path)
        return tuple((port_of_link[ln.link_id], offset) for ln in links)

    flows: list[FlowRt] = []

    def add(
        flow_id: str,
        parent: str,
        cls: str,
        prio: int,
        ingress: int,
        hops: tuple[tuple[int, int], ...],
        shaped: bool,
        slots: dict[int, int],
        deadline: SimTime,
        record: bool,
        emitter: Iterator[tuple[SimTime, int]],
    ) -> None:
        flows.append(
            FlowRt(
                idx=len(flows),
                flow_id=flow_id,
                parent_id=parent,
                cls=cls,
                be_priority=prio,
                ingress_node=ingress,
                hops=hops,
                shaped=shaped,
                slots=slots,
                deadline=deadline,
                record=record,
                emitter=emitter,
            )
        )

    for f in sc.flows:
        gen = sc.generators[f.flow_id]
        ingress = node_idx[f.path[0]]
        deadline = f.deadline if f.deadline is not None else NO_DEADLINE
        if gen.kind == "be_background":
            for k, (label, it) in enumerate(be_streams(gen, sc.seed)):
                add(
                    label,
                    f.flow_id,
                    CLASS_BE,
                    (f.be_priority + k) % NUM_BE_PRIORITIES,
                    ingress,
                    path_hops(f.path, 0),
                    False,
                    {},
                    deadline,
                    sc.record_be_packets,
                    it,
                )
            continue
        emitter = make_emitter(gen, derive_seed(sc.seed, f.flow_id))
        if f.cls == CLASS_BE:
            add(
                f.flow_id,
                f.flow_id,
                CLASS_BE,
                f.be_priority,
                ingress,
                path_hops(f.path, 0),
                False,
                {},
                deadline,
                sc.record_be_packets,
                emitter,
            )
            continue
        plan = plans.get(f.flow_id)
        if rotating and plan is not None and not plan.admitted:
            if sc.rejected_policy == "exclude":
                continue
            # best_effort: carry the rejected flow at the weakest BE
            # priority so it cannot disturb anything that was admitted.
            add(
                f.flow_id,
                f.flow_id,
                CLASS_BE,
                NUM_BE_PRIORITIES - 1,
                ingress,
                path_hops(f.path, 0),
                False,
                {},
                deadline,
                True,
                emitter,
            )
            continue
        if rotating and plan is not None:
            hops = tuple(
                (port_of_link[e.out_port], e.cycle_offset) for e in plan.sids
            )
            add(
                f.flow_id,
                f.flow_id,
                CLASS_TS,
                0,
                ingress,
                hops,
                plan.shaped,
                dict(plan.release_quota),
                deadline,
                True,
                emitter,
            )
        else:
            add(
                f.flow_id,
                f.flow_id,
                CLASS_TS,
                0,
                ingress,
                path_hops(f.path, 0),
                False,
                {},
                deadline,
                True,
                emitter,
            )

    prep = PreparedSim(
        scheduler=sc.scheduler,
        cycle_len=sc.cycle_len,
        num_queues=sc.num_queues,
        be_gap=sc.be_gap,
        queue_cap_packets=sc.queue_cap_packets,
        horizon=sc.horizon,
        nodes=tuple(nodes),
        ports=tuple(ports),
        flows=tuple(flows),
        validate=sc.validate_counters,
    )
    return prep, plans, tables


def _check_counters(prep: PreparedSim, raw: RawRun) -> None:
    """Cross-module conservation: nothing created or lost unaccounted."""
    for f in prep.flows:
        i = f.idx
        dropped = sum(raw.dropped[i].values())
        total = raw.delivered[i] + dropped + raw.resident[i]
        if raw.generated[i] != total:
            raise AssertionError(
                f"flow {f.flow_id}: generated {raw.generated[i]} != "
                f"delivered {raw.delivered[i]} + dropped {dropped} + "
                f"resident {raw.resident[i]}"
            )
        if f.record and raw.deliveries[i] is not None:
            if len(raw.deliveries[i][0]) != raw.delivered[i]:
                raise AssertionError(
                    f"flow {f.flow_id}: delivery log length mismatch"
                )
        if f.record and raw.drop_log[i] is not None:
            if len(raw.drop_log[i][0]) != dropped:
                raise AssertionError(
                    f"flow {f.flow_id}: drop log length mismatch"
                )


def run_scenario(
    sc: Scenario,
    core: Callable[[PreparedSim], RawRun] | None = None,
) -> RunResult:
    """Plan and simulate one scenario with the selected event core."""
    prep, plans, tables = prepare(sc)
    if core is None:
        from ._speed import simulate as core  # deferred: avoids import cycle
    raw = core(prep)
    if prep.validate:
        _check_counters(prep, raw)
    return RunResult(
        scenario=sc, plans=plans, tables=tables, raw=raw, prepared=prep
    )
