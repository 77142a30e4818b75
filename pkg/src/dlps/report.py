"""Report emission: per-phase CSV rows, pivot tables for the residency and
energy stacks, and rendered figures alongside the delimited output.

Units are fixed and carried in the column names: picoseconds for times,
joules for energies, watts for powers.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

from dlps.device import PowerState
from dlps.power import EnergyBreakdown
from dlps.sim import PhaseWindow, RunResult

RESIDENCY_STATES = ("ACT", "IDLE", "REF", "PDNA", "PDNP", "SREF")
ENERGY_COMPONENTS = ("act", "pre", "rd", "wr", "ref",
                     "act_back", "pre_back", "pdna", "pdnp", "sref")

COLUMNS = [
    "config_id", "phase_index", "phase_label", "ranks", "page_policy",
    "powerdown", "itt_min_ps", "itt_max_ps", "n_seq_bytes", "bank_util",
    "t_start_ps", "duration_ps",
    "requests", "row_hits", "row_misses", "refresh_cmds", "sref_epochs",
    "avg_read_queue", "bus_utilization",
    "pd_checks_one_pending", "pd_checks_one_pending_pre",
    "t_act_ps", "t_idle_ps", "t_ref_ps", "t_pdna_ps", "t_pdnp_ps", "t_sref_ps",
    "e_act_j", "e_pre_j", "e_rd_j", "e_wr_j", "e_ref_j",
    "e_act_back_j", "e_pre_back_j", "e_pdna_j", "e_pdnp_j", "e_sref_j",
    "e_total_j",
    "exec_time_ps",
]


@dataclass
class ReportRow:
    config_id: str
    phase_index: int
    phase_label: str
    ranks: int
    page_policy: str
    powerdown: str
    itt_min_ps: int
    itt_max_ps: int
    n_seq_bytes: int
    bank_util: str
    t_start_ps: int
    duration_ps: int
    requests: int
    row_hits: int
    row_misses: int
    refresh_cmds: int
    sref_epochs: float
    avg_read_queue: float
    bus_utilization: float
    pd_checks_one_pending: int
    pd_checks_one_pending_pre: int
    residency_ps: dict[str, int]
    energy: EnergyBreakdown
    exec_time_ps: int

    # Per-rank detail kept out of the CSV but used by validation and tests.
    refresh_cmds_per_rank: list[int] | None = None
    sref_ps_per_rank: list[int] | None = None

    def to_csv(self) -> list:
        e = self.energy
        return [
            self.config_id, self.phase_index, self.phase_label, self.ranks,
            self.page_policy, self.powerdown, self.itt_min_ps, self.itt_max_ps,
            self.n_seq_bytes, self.bank_util, self.t_start_ps, self.duration_ps,
            self.requests, self.row_hits, self.row_misses, self.refresh_cmds,
            f"{self.sref_epochs:.6f}",
            f"{self.avg_read_queue:.6f}", f"{self.bus_utilization:.6f}",
            self.pd_checks_one_pending, self.pd_checks_one_pending_pre,
            *(self.residency_ps[s] for s in RESIDENCY_STATES),
            *(f"{getattr(e, c):.12e}" for c in ENERGY_COMPONENTS),
            f"{e.total:.12e}",
            self.exec_time_ps,
        ]


def rows_from_run(result: RunResult, config_id: str, page_policy: str,
                  powerdown: bool) -> list[ReportRow]:
    """Slice one run into per-phase report rows."""
    cfg = result.device_cfg
    rows = []
    for index, win in enumerate(result.windows):
        d = win.stats_after
        b = win.stats_before
        duration = win.t_end - win.t_start
        residency = {s: 0 for s in RESIDENCY_STATES}
        sref_per_rank = []
        for rank in range(cfg.ranks):
            per = result.residency(rank, win.t_start, win.t_end)
            for state, dt in per.items():
                residency[state.name] += dt
            sref_per_rank.append(per[PowerState.SREF])
        energy = result.energy(win.t_start, win.t_end)
        refa_per_rank = [a - bb for a, bb in zip(d.refa, b.refa)]
        sref_epochs = sum(sref_per_rank) / cfg.tREFI
        phase = win.phase
        rows.append(ReportRow(
            config_id=config_id,
            phase_index=index,
            phase_label=phase.label if phase is not None and phase.label else str(index),
            ranks=cfg.ranks,
            page_policy=page_policy,
            powerdown="on" if powerdown else "off",
            itt_min_ps=phase.itt_min if phase else 0,
            itt_max_ps=phase.itt_max if phase else 0,
            n_seq_bytes=phase.n_seq_bytes if phase else 0,
            bank_util=f"{phase.bank_util_num}/{phase.bank_util_den}" if phase else "-",
            t_start_ps=win.t_start,
            duration_ps=duration,
            requests=d.accepted - b.accepted,
            row_hits=d.row_hits - b.row_hits,
            row_misses=d.row_misses - b.row_misses,
            refresh_cmds=sum(refa_per_rank),
            sref_epochs=sref_epochs,
            avg_read_queue=(d.occ_integral - b.occ_integral) / duration,
            bus_utilization=(d.burst_ps - b.burst_ps) / duration,
            pd_checks_one_pending=d.checks_one_pending - b.checks_one_pending,
            pd_checks_one_pending_pre=(d.checks_one_pending_pre
                                       - b.checks_one_pending_pre),
            residency_ps=residency,
            energy=energy,
            exec_time_ps=result.stats.last_response_at or result.stats.last_command_at,
            refresh_cmds_per_rank=refa_per_rank,
            sref_ps_per_rank=sref_per_rank,
        ))
    return rows


def write_report_csv(rows: list[ReportRow], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow(row.to_csv())


def write_pivots(rows: list[ReportRow], out_dir: str | os.PathLike) -> None:
    """Tidy pivot files for the residency and energy stacks."""
    res_path = os.path.join(out_dir, "residency_pivot.csv")
    with open(res_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["config_id", "phase_index", "phase_label"]
                        + [f"t_{s.lower()}_ps" for s in RESIDENCY_STATES])
        for row in rows:
            writer.writerow([row.config_id, row.phase_index, row.phase_label]
                            + [row.residency_ps[s] for s in RESIDENCY_STATES])
    e_path = os.path.join(out_dir, "energy_pivot.csv")
    with open(e_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["config_id", "phase_index", "phase_label"]
                        + [f"e_{c}_j" for c in ENERGY_COMPONENTS])
        for row in rows:
            writer.writerow([row.config_id, row.phase_index, row.phase_label]
                            + [f"{getattr(row.energy, c):.12e}" for c in ENERGY_COMPONENTS])


def write_summary(rows: list[ReportRow], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            total_us = row.duration_ps / 1e6
            fh.write(
                f"{row.config_id} phase {row.phase_index:2d} [{row.phase_label}] "
                f"dur={total_us:.1f}us req={row.requests} "
                f"hit={row.row_hits} miss={row.row_misses} ref={row.refresh_cmds} "
                f"E={row.energy.total:.4e} J "
                f"pd(ns): PDNA={row.residency_ps['PDNA']/1e3:.1f} "
                f"PDNP={row.residency_ps['PDNP']/1e3:.1f} "
                f"SREF={row.residency_ps['SREF']/1e3:.1f}\n"
            )


# ----------------------------------------------------------------------
# Figures.

_STATE_COLORS = {
    "ACT": "#d62728", "IDLE": "#bcbd22", "REF": "#111111",
    "PDNA": "#aec7e8", "PDNP": "#1f77b4", "SREF": "#e0e0e0",
}


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def render_residency_stack(rows: list[ReportRow], path: str | os.PathLike,
                           title: str = "") -> None:
    """Stacked per-phase bars of the time spent in each power state."""
    plt = _pyplot()
    labels = [r.phase_label for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(6, 0.45 * len(rows) + 2), 4.2))
    bottom = [0.0] * len(rows)
    for state in RESIDENCY_STATES:
        vals = [r.residency_ps[state] / 1e6 / r.ranks for r in rows]
        ax.bar(x, vals, bottom=bottom, label=state,
               color=_STATE_COLORS[state], edgecolor="black", linewidth=0.3)
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=75, fontsize=7)
    ax.set_ylabel("time per rank (us)")
    ax.set_title(title or "Time spent in power states")
    ax.legend(fontsize=7, ncol=3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_energy_stack(rows: list[ReportRow], path: str | os.PathLike,
                        title: str = "") -> None:
    """Stacked per-phase bars of the energy components."""
    plt = _pyplot()
    labels = [r.phase_label for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(6, 0.45 * len(rows) + 2), 4.2))
    bottom = [0.0] * len(rows)
    cmap = _pyplot().get_cmap("tab10")
    for i, comp in enumerate(ENERGY_COMPONENTS):
        vals = [getattr(r.energy, comp) * 1e6 for r in rows]  # uJ
        ax.bar(x, vals, bottom=bottom, label=comp, color=cmap(i % 10),
               edgecolor="black", linewidth=0.3)
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=75, fontsize=7)
    ax.set_ylabel("energy (uJ)")
    ax.set_title(title or "Energy consumed by power states")
    ax.legend(fontsize=7, ncol=3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_compare(report: dict, path: str | os.PathLike) -> None:
    """Two-panel bar chart of execution time and energy, power-down on vs off."""
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7, 3.4))
    labels = ["off", "on"]
    times = [report["exec_time_off_ps"] / 1e9, report["exec_time_on_ps"] / 1e9]
    energies = [report["energy_off_j"] * 1e3, report["energy_on_j"] * 1e3]
    ax1.bar(labels, times, color=["#999999", "#1f77b4"])
    ax1.set_ylabel("execution time (ms)")
    ax2.bar(labels, energies, color=["#999999", "#1f77b4"])
    ax2.set_ylabel("energy (mJ)")
    for ax in (ax1, ax2):
        ax.set_xlabel("power-down")
    fig.suptitle(
        f"dE={report['energy_delta_pct']:+.1f}%  dT={report['exec_delta_pct']:+.1f}%")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
