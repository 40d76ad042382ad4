"""Build a world from a Scenario, run it, and write the run directory.

A run directory holds ``events.jsonl``, ``metrics.csv``, ``report.csv``,
``registry_snapshots.bin`` and ``summary.md``. Everything in it is a function
of the scenario and its master seed.
"""

import csv
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from fluxsim.core.dga import CostMode, lookup_cost, plan_registrations
from fluxsim.core.errors import ConfigError
from fluxsim.core.registrar import Registrar
from fluxsim.detection.formatter import format_cost_table, format_summary_markdown
from fluxsim.detection.report import METRICS_COLUMNS, METRICS_FILE, render_report
from fluxsim.detection.triggers import AssertionOutcome, evaluate_conditions
from fluxsim.sim.bot import Bot, BotState, Phase
from fluxsim.sim.botmaster import Botmaster, BotRecord
from fluxsim.sim.device import Device
from fluxsim.sim.eventlog import EVENTS_FILE
from fluxsim.sim.kernel import (
    DIRECTION_SMS,
    BotmasterCompromise,
    IpReassign,
    Recharge,
    ServerTakedown,
    SimKernel,
    Timer,
)
from fluxsim.sim.scenario import Scenario
from fluxsim.sim.server import CncServer

logger = logging.getLogger(__name__)

SNAPSHOTS_FILE = "registry_snapshots.bin"
SUMMARY_FILE = "summary.md"
BOTMASTER = "botmaster"


def server_name(ordinal: int) -> str:
    return f"cc-{ordinal:02d}"


def bot_name(ordinal: int) -> str:
    return f"bot-{ordinal:03d}"


@dataclass
class World:
    scenario: Scenario
    kernel: SimKernel
    botmaster: Botmaster
    servers: List[CncServer] = field(default_factory=list)
    bots: List[Bot] = field(default_factory=list)

    def server(self, name: str) -> CncServer:
        return self.kernel.node(name)

    def bot(self, name: str) -> Bot:
        return self.kernel.node(name)


@dataclass
class RunResult:
    name: str
    out_dir: Path
    summary: Dict[str, Any]
    outcomes: List[AssertionOutcome]

    @property
    def passed(self) -> bool:
        return all(o.passed for o in self.outcomes)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1


def _spawn_server(world: World):
    def spawn(kernel: SimKernel, ordinal: int) -> CncServer:
        server = CncServer(server_name(ordinal), world.botmaster.address)
        kernel.add_node(server)
        world.servers.append(server)
        return server
    return spawn


def _register_servers(world: World) -> None:
    scenario = world.scenario
    kernel = world.kernel
    domains = scenario.dga.domains()
    cfg = scenario.dga.window()
    seed = kernel.stream("registrar", "plan").next()
    if scenario.servers.registration == "single":
        # one random domain per server, no window structure
        rng = kernel.stream("registrar", "single")
        for server in world.servers:
            server.register_domain(kernel, domains[rng.below(cfg.alpha)])
        return
    plan = plan_registrations(domains, cfg, seed, scenario.servers.windows)
    for i, (window, index) in enumerate(plan.entries):
        server = world.servers[i % len(world.servers)]
        if not server.register_domain(kernel, domains[index]):
            logger.warning(f"⚠️ Window {window}: {domains[index]} already registered")


def _fault_spec(world: World, entry):
    if entry.type == "ServerTakedown":
        target = entry.target
        if target in world.kernel.nodes:
            target = world.kernel.node(target).address
        return ServerTakedown(target, entry.at_ms)
    if entry.type == "BotmasterCompromise":
        return BotmasterCompromise(entry.at_ms, entry.restore_delay_ms, entry.tamper_count, BOTMASTER)
    if entry.type == "IpReassign":
        return IpReassign(entry.target, entry.at_ms, entry.period_ms)
    if entry.type == "Recharge":
        return Recharge(entry.target, entry.at_ms)
    raise ConfigError(f"unknown fault type {entry.type!r}", path="faults")


def build_world(scenario: Scenario) -> World:
    kernel = SimKernel(scenario.master_seed, scenario.net, Registrar())
    botmaster = Botmaster(BOTMASTER, scenario.dga, scenario.timing.heartbeat_ms)
    kernel.add_node(botmaster)
    world = World(scenario, kernel, botmaster)
    botmaster.spawn_server = _spawn_server(world)

    for ordinal in range(1, scenario.servers.count + 1):
        server = _spawn_server(world)(kernel, ordinal)
        botmaster.add_server(server.name, server.address)
    _register_servers(world)

    ordinal = 0
    for group in scenario.bots:
        profile = scenario.device_profiles[group.profile]
        for _ in range(group.count):
            ordinal += 1
            state = BotState(
                device_id=f"dev{ordinal:03d}",
                device=Device(profile),
                poll_jitter=group.jitter,
                hop_interval=group.hop_interval_ms,
            )
            bot = Bot(bot_name(ordinal), state, scenario.dga, scenario.timing, scenario.payloads)
            kernel.add_node(bot)
            world.bots.append(bot)
            start = kernel.stream(bot.name, "start").below(scenario.timing.start_spread_ms)
            kernel.schedule(start, Timer(bot.name, "tick"))

    for entry in scenario.command_schedule:
        kernel.schedule(entry.at_ms, Timer(BOTMASTER, "publish", entry))
    kernel.schedule(scenario.timing.heartbeat_ms, Timer(BOTMASTER, "heartbeat"))
    for entry in scenario.faults:
        kernel.inject_fault(_fault_spec(world, entry))

    logger.info(f"🌍 World ready: {len(world.servers)} servers, {len(world.bots)} bots, "
                f"{len(kernel.registrar.registered)} domains registered")
    return world


# --- artifacts --------------------------------------------------------------

def bot_metrics(world: World) -> List[Dict[str, Any]]:
    up: Dict[str, int] = {}
    down: Dict[str, int] = {}
    for row in world.kernel.trace.rows:
        if row.direction == DIRECTION_SMS:
            continue
        up[row.src] = up.get(row.src, 0) + row.bytes
        if row.delivered:
            down[row.dst] = down.get(row.dst, 0) + row.bytes
    metrics = []
    for bot in world.bots:
        st = bot.state
        metrics.append({
            "bot_id": st.bot_id if st.bot_id is not None else "",
            "bytes_up": up.get(bot.name, 0),
            "bytes_down": down.get(bot.name, 0),
            "polls": st.stats.polls,
            "nx_misses": st.stats.nx_misses,
            "commands_ok": st.stats.commands_ok,
            "commands_denied": st.stats.commands_denied,
            "battery_end_mAh": f"{st.device.level:.2f}",
            "commands_failed": st.stats.commands_failed,
            "host": bot.name,
            "profile": st.device.profile.name,
        })
    return metrics


def write_metrics(metrics: List[Dict[str, Any]], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(metrics)


def collect_summary(world: World, report) -> Dict[str, Any]:
    kernel = world.kernel
    bots = [b.state for b in world.bots]
    acquisitions = [a for st in bots for a in st.stats.acquisitions if a.found]
    tags: Dict[str, int] = {}
    for row in kernel.trace.rows:
        tags[row.msg_tag] = tags.get(row.msg_tag, 0) + 1
    summary = {
        "bots": len(bots),
        "bots_registered": sum(1 for st in bots if st.phase is Phase.REGISTERED),
        "registry_size": len(world.botmaster.state.registry),
        "snapshot_versions": world.botmaster.state.snapshots.versions,
        "trace_rows": len(kernel.trace),
        "dcr_rows": tags.get("DCR", 0),
        "command_rows": tags.get("Command", 0),
        "upload_rows": tags.get("Upload", 0),
        "rcipb_rows": tags.get("RCIPB", 0),
        "rcad_rows": tags.get("RCAd", 0),
        "sms_rows": tags.get("SpamSms", 0),
        "uploads_acked": sum(len(st.stats.acked_unique_ids) for st in bots),
        "commands_ok": sum(st.stats.commands_ok for st in bots),
        "commands_denied": sum(st.stats.commands_denied for st in bots),
        "commands_failed": sum(st.stats.commands_failed for st in bots),
        "duplicate_commands": sum(st.stats.duplicate_commands for st in bots),
        "sms_commands": sum(st.stats.sms_commands for st in bots),
        "spam_discarded": sum(st.stats.spam_discarded for st in bots),
        "duplicate_uploads": world.botmaster.duplicate_uploads,
        "server_switches": sum(len(st.server_history) for st in bots),
        "freed_bytes": sum(st.stats.freed_bytes for st in bots),
        "nxdomain_total": len(kernel.registrar.nx_log),
        "mean_polls_per_acquisition": round(statistics.fmean(a.polls for a in acquisitions), 4) if acquisitions else 0,
        "max_nx_per_acquisition": max((a.misses for st in bots for a in st.stats.acquisitions), default=0),
        "server_replacements": world.botmaster.replacements,
        "restores": world.botmaster.restores,
        "dropped_messages": kernel.stats.dropped_at_send + kernel.stats.dropped_in_flight,
        "regularity_flagged_fraction": report.flagged_fraction("regularity_flag"),
        "persistence_flagged_fraction": report.flagged_fraction("persistence_flag"),
        "nxdomain_flagged_fraction": report.flagged_fraction("nxdomain_flag"),
    }
    if report.overhead_percent is not None:
        summary["overhead_percent"] = report.overhead_percent
    if report.battery_decline_percent is not None:
        summary["battery_decline_percent"] = round(report.battery_decline_percent, 4)
    return summary


def cost_table(scenario: Scenario) -> str:
    cfg = scenario.dga.window()
    model = scenario.cost_model
    return format_cost_table([lookup_cost(cfg, model.bytes_per_access, model.seconds_per_access, mode) for mode in CostMode])


def run_world(world: World) -> None:
    kernel = world.kernel
    scenario = world.scenario
    logger.info(f"▶️ Running {scenario.name} for {scenario.duration_ms} ms (seed {scenario.master_seed})")
    result = kernel.run_until(scenario.duration_ms)
    for bot in world.bots:
        bot.finalize(kernel.now)
    logger.info(f"⏹️ {scenario.name} done: {result.events_processed} events, {result.rows} trace rows, "
                f"{result.dropped} dropped")


def run_scenario(scenario: Scenario, out_dir: Optional[Path] = None) -> RunResult:
    out_dir = Path(out_dir or scenario.output_dir or Path("runs") / scenario.name)
    out_dir.mkdir(parents=True, exist_ok=True)
    world = build_world(scenario)
    run_world(world)

    kernel = world.kernel
    kernel.log.set_run_record(scenario.to_dict())
    kernel.log.write(out_dir / EVENTS_FILE)
    write_metrics(bot_metrics(world), out_dir / METRICS_FILE)
    world.botmaster.state.snapshots.dump(str(out_dir / SNAPSHOTS_FILE), BotRecord.to_dict)

    report = render_report(out_dir)
    summary = collect_summary(world, report)
    outcomes = evaluate_conditions(summary, scenario.assertions)
    with open(out_dir / SUMMARY_FILE, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_summary_markdown(scenario.name, summary, outcomes, cost_table(scenario)))

    result = RunResult(scenario.name, out_dir, summary, outcomes)
    if result.passed:
        logger.info(f"✅ {scenario.name}: artifacts in {out_dir}")
    else:
        failed = [o.metric for o in outcomes if not o.passed]
        logger.warning(f"❌ {scenario.name}: assertions failed on {failed}")
    return result
