"""Command-line front end.

Subcommands:

* ``run``          one simulation (idle / single phase / trace workload)
* ``sweep``        the full 4-config x 27-phase synthetic sweep
* ``compare``      replay a trace with power-down on and off and diff
* ``calc``         closed-form system standby / self-refresh power
* ``export-trace`` run a workload and emit only the command trace

Exit codes: 0 success, 2 configuration error, 3 input error, 4 protocol
violation inside the simulation.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from dlps import report as rpt
from dlps.config import ConfigError, RunConfig, load_run_config
from dlps.controller import ControllerConfig, PagePolicy
from dlps.device import DeviceConfig, ProtocolError, make_config
from dlps.engine import US
from dlps.power import (
    DIMM_PRESETS,
    DimmConfig,
    export_drampower_trace,
    selfrefresh_power_system,
    standby_power_system,
)
from dlps.sim import RunResult, Simulation
from dlps.workload import (
    PhaseConfig,
    SweepConfig,
    TraceFormatError,
    parse_trace,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_PROTOCOL = 4


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _export_trace_files(result: RunResult, prefix: str) -> list[str]:
    paths = []
    for rank in range(result.device_cfg.ranks):
        path = f"{prefix}.rank{rank}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            export_drampower_trace(result.records, fh, result.device_cfg.tCK, rank=rank)
        paths.append(path)
    return paths


def _run_workload(rc: RunConfig, powerdown: bool | None = None,
                  label: str = "run") -> tuple[RunResult, str, bool]:
    ctl = rc.controller
    if powerdown is not None:
        ctl = replace(ctl, powerdown_enabled=powerdown)
    sim = Simulation(rc.device, ctl, label=label)
    pd = ctl.powerdown_enabled
    if rc.workload_kind == "idle":
        result = sim.run_idle(rc.idle_duration_ps, rc.idle_open_banks)
    elif rc.workload_kind == "phase":
        itt_min = rc.itt_min_ps if rc.itt_min_ps is not None else rc.device.tCCD
        if rc.itt_max_ps is None:
            raise ConfigError("phase workload requires workload.itt_max_ps")
        phase = PhaseConfig(
            itt_min=itt_min, itt_max=rc.itt_max_ps, n_seq_bytes=rc.n_seq_bytes,
            bank_util_num=rc.bank_util[0], duration=rc.duration_ps,
            addr_range=rc.addr_range_bytes, seed=rc.seed, label="phase",
        )
        result = sim.run_phases([phase])
    elif rc.workload_kind == "trace":
        records = parse_trace(rc.trace_path)
        result = sim.run_trace(records)
    else:
        raise ConfigError(f"subcommand does not handle workload {rc.workload_kind!r}")
    return result, rc.controller.page_policy.value, pd


def cmd_run(args: argparse.Namespace) -> int:
    rc = load_run_config(args.config)
    _apply_flags(rc, args)
    if rc.workload_kind == "sweep":
        return cmd_sweep(args)
    result, policy, pd = _run_workload(rc)
    out = _ensure_out(rc.out_dir)
    rows = rpt.rows_from_run(result, config_id=f"r{rc.device.ranks}-{policy.split('_')[0]}",
                             page_policy=policy, powerdown=pd)
    rpt.write_report_csv(rows, os.path.join(out, "report.csv"))
    rpt.write_summary(rows, os.path.join(out, "summary.txt"))
    if not args.no_figures:
        rpt.render_residency_stack(rows, os.path.join(out, "residency.png"))
        rpt.render_energy_stack(rows, os.path.join(out, "energy.png"))
    if args.drampower_trace:
        _export_trace_files(result, args.drampower_trace)
    print(f"wrote {len(rows)} report rows to {out}/report.csv "
          f"({result.stats.commands} commands, E={result.online_energy.total:.4e} J)")
    return EXIT_OK


def _sweep_point(task) -> list:
    config_id, ranks, policy, base_seed, duration, device_overrides, pd = task
    device = make_config(ranks=ranks, **device_overrides)
    ctl = ControllerConfig(page_policy=PagePolicy(policy), powerdown_enabled=pd)
    sweep = SweepConfig(base_seed=base_seed, phase_duration=duration)
    sim = Simulation(device, ctl, label=config_id)
    result = sim.run_phases(sweep.phases(device))
    return rpt.rows_from_run(result, config_id, policy, pd)


def cmd_sweep(args: argparse.Namespace) -> int:
    rc = load_run_config(args.config)
    _apply_flags(rc, args)
    out = _ensure_out(rc.out_dir)
    duration = rc.sweep_phase_duration_ps
    if getattr(args, "phase_duration_us", None):
        duration = args.phase_duration_us * US
    sweep = SweepConfig(base_seed=rc.seed, phase_duration=duration)
    pd = rc.controller.powerdown_enabled
    tasks = [
        (config_id, ranks, policy, rc.seed, duration, {}, pd)
        for config_id, ranks, policy in sweep.memory_configs()
    ]
    workers = int(os.environ.get("DLPS_THREADS", "0")) or min(4, os.cpu_count() or 1)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            row_lists = list(pool.map(_sweep_point, tasks))
    else:
        row_lists = [_sweep_point(t) for t in tasks]
    rows: list[rpt.ReportRow] = []
    for rl in row_lists:
        rows.extend(rl)
    rpt.write_report_csv(rows, os.path.join(out, "sweep.csv"))
    rpt.write_pivots(rows, out)
    rpt.write_summary(rows, os.path.join(out, "summary.txt"))
    if not args.no_figures:
        for config_id, _, _ in sweep.memory_configs():
            sub = [r for r in rows if r.config_id == config_id]
            rpt.render_residency_stack(
                sub, os.path.join(out, f"residency_{config_id}.png"),
                title=f"{config_id}: time in power states")
            rpt.render_energy_stack(
                sub, os.path.join(out, f"energy_{config_id}.png"),
                title=f"{config_id}: energy by component")
    print(f"wrote {len(rows)} sweep rows to {out}/sweep.csv")
    return EXIT_OK


def compare_traces(rc: RunConfig, trace_path: str) -> dict:
    records = parse_trace(trace_path)
    results = {}
    for pd in (False, True):
        ctl = ControllerConfig(
            read_queue_depth=rc.controller.read_queue_depth,
            write_queue_depth=rc.controller.write_queue_depth,
            page_policy=rc.controller.page_policy,
            powerdown_enabled=pd,
        )
        sim = Simulation(rc.device, ctl, label=f"pd-{'on' if pd else 'off'}")
        results[pd] = sim.run_trace(records)
    on, off = results[True], results[False]
    e_on = on.online_energy.total
    e_off = off.online_energy.total
    t_on = on.stats.last_response_at or on.stats.last_command_at
    t_off = off.stats.last_response_at or off.stats.last_command_at
    low_on = on.online_energy
    return {
        "trace": trace_path,
        "requests": on.injected,
        "energy_on_j": e_on,
        "energy_off_j": e_off,
        "energy_delta_pct": 100.0 * (e_on - e_off) / e_off if e_off else 0.0,
        "exec_time_on_ps": t_on,
        "exec_time_off_ps": t_off,
        "exec_delta_pct": 100.0 * (t_on - t_off) / t_off if t_off else 0.0,
        "share_pdna_pct": 100.0 * low_on.pdna / e_on if e_on else 0.0,
        "share_pdnp_pct": 100.0 * low_on.pdnp / e_on if e_on else 0.0,
        "share_sref_pct": 100.0 * low_on.sref / e_on if e_on else 0.0,
        "result_on": on,
        "result_off": off,
    }


def cmd_compare(args: argparse.Namespace) -> int:
    rc = load_run_config(args.config)
    _apply_flags(rc, args)
    trace = args.trace or rc.trace_path
    if not trace:
        raise ConfigError("compare requires --trace PATH or workload.trace in the config")
    if not os.path.exists(trace):
        raise TraceFormatError(f"trace file not found: {trace}")
    rep = compare_traces(rc, trace)
    out = _ensure_out(rc.out_dir)
    path = os.path.join(out, "compare.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        keys = ["trace", "requests", "energy_on_j", "energy_off_j",
                "energy_delta_pct", "exec_time_on_ps", "exec_time_off_ps",
                "exec_delta_pct", "share_pdna_pct", "share_pdnp_pct",
                "share_sref_pct"]
        writer.writerow(keys)
        writer.writerow([rep[k] for k in keys])
    if not args.no_figures:
        rpt.render_compare(rep, os.path.join(out, "compare.png"))
    print(f"energy: on={rep['energy_on_j']:.4e} J off={rep['energy_off_j']:.4e} J "
          f"({rep['energy_delta_pct']:+.2f}%)")
    print(f"exec time: on={rep['exec_time_on_ps']} ps off={rep['exec_time_off_ps']} ps "
          f"({rep['exec_delta_pct']:+.2f}%)")
    print(f"low-power energy shares: PDNA={rep['share_pdna_pct']:.1f}% "
          f"PDNP={rep['share_pdnp_pct']:.1f}% SREF={rep['share_sref_pct']:.1f}%")
    return EXIT_OK


def cmd_calc(args: argparse.Namespace) -> int:
    dimm = DIMM_PRESETS[args.dimm]
    overrides = {}
    for name in ("IDD5B", "IPP5B", "IDD2N", "IDD6", "IPP6", "VDD", "VPP"):
        v = getattr(args, name.lower(), None)
        if v is not None:
            overrides[name] = v
    if args.trfc_ns is not None:
        overrides["tRFC"] = int(args.trfc_ns * 1000)
    if args.trefi_us is not None:
        overrides["tREFI"] = int(args.trefi_us * 1_000_000)
    if overrides:
        dimm = replace(dimm, **overrides)
    if args.what == "standby":
        watts = standby_power_system(args.n_dimms, dimm)
    else:
        watts = selfrefresh_power_system(args.n_dimms, dimm)
    print(f"{watts:.6f} W")
    return EXIT_OK


def cmd_export_trace(args: argparse.Namespace) -> int:
    rc = load_run_config(args.config)
    _apply_flags(rc, args)
    result, _, _ = _run_workload(rc)
    prefix = args.drampower_trace or os.path.join(_ensure_out(rc.out_dir), "cmdtrace")
    paths = _export_trace_files(result, prefix)
    print(f"wrote {len(result.records)} commands to {', '.join(paths)}")
    return EXIT_OK


def _apply_flags(rc: RunConfig, args: argparse.Namespace) -> None:
    if getattr(args, "seed", None) is not None:
        rc.seed = args.seed
    if getattr(args, "out", None) is not None:
        rc.out_dir = args.out
    if getattr(args, "powerdown", None) is not None:
        rc.controller.powerdown_enabled = args.powerdown == "on"
    if getattr(args, "trace", None):
        rc.trace_path = args.trace
        rc.workload_kind = "trace"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="run configuration file")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--powerdown", choices=("on", "off"),
                   help="force low-power management on or off")
    p.add_argument("--no-figures", action="store_true",
                   help="skip rendering figures")
    p.add_argument("--drampower-trace", metavar="PREFIX",
                   help="also export the command trace (one file per rank)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dlps",
        description="Event-driven DRAM low-power simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one simulation from a config")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the 4-config x 27-phase traffic sweep")
    _add_common(p)
    p.add_argument("--phase-duration-us", type=int,
                   help="shorten each phase (default 250)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="replay a trace with power-down on vs off")
    _add_common(p)
    p.add_argument("--trace", metavar="PATH", help="replay trace file")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("calc", help="closed-form system power")
    p.add_argument("what", choices=("standby", "sref"))
    p.add_argument("--n-dimms", type=int, default=512)
    p.add_argument("--dimm", choices=sorted(DIMM_PRESETS), default="ddr4-8gb-dimm")
    p.add_argument("--idd5b", type=float, dest="idd5b", help="mA")
    p.add_argument("--ipp5b", type=float, dest="ipp5b", help="mA")
    p.add_argument("--idd2n", type=float, dest="idd2n", help="mA")
    p.add_argument("--idd6", type=float, dest="idd6", help="mA")
    p.add_argument("--ipp6", type=float, dest="ipp6", help="mA")
    p.add_argument("--vdd", type=float, dest="vdd", help="V")
    p.add_argument("--vpp", type=float, dest="vpp", help="V")
    p.add_argument("--trfc-ns", type=float)
    p.add_argument("--trefi-us", type=float)
    p.set_defaults(func=cmd_calc)

    p = sub.add_parser("export-trace", help="run and export only the command trace")
    _add_common(p)
    p.set_defaults(func=cmd_export_trace)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ProtocolError as exc:
        print(f"protocol violation: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
