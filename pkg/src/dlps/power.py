"""Residency accounting, the current-parameterized energy model, and the
closed-form system-level standby / self-refresh power calculators.

Energy is split into the components plotted by the report path:

* pulse components booked per command: ``act``, ``pre`` (per bank closed),
  ``rd``, ``wr``, ``ref``;
* background components integrated over power-state residency: ``act_back``
  (active standby), ``pre_back`` (precharged standby, including the refresh
  sub-state), ``pdna``, ``pdnp``, ``sref``.

Pulse energies are excess charge over the matching standby baseline, in the
style of the vendor power calculators:

    E_ACT = tRAS * (VDD*(IDD0-IDD3N) + VPP*(IPP0-IPP3N))
    E_PRE = tRP  *  VDD*(IDD0-IDD2N)                       per bank closed
    E_RD  = tBURST * VDD*(IDD4R-IDD3N)
    E_WR  = tBURST * VDD*(IDD4W-IDD3N)
    E_REF = tRFC * (VDD*(IDD5-IDD2N) + VPP*(IPP5-IPP2N))

Background power per state:

    P(ACT)  = VDD*IDD3N + VPP*IPP3N       P(PDNA) = VDD*IDD3P + VPP*IPP3P
    P(IDLE) = VDD*IDD2N + VPP*IPP2N       P(PDNP) = VDD*IDD2P + VPP*IPP2N
    P(REF)  = P(IDLE)                     P(SREF) = VDD*IDD6  + VPP*IPP6

Timestamps stay integer picoseconds throughout so residency sums are exact;
energies accumulate as double-precision joules.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence, TextIO

from dlps.device import CmdKind, DeviceConfig, PowerState
from dlps.engine import SimTime

_PS = 1e-12
_MA = 1e-3


class AccountingError(RuntimeError):
    """State history handed to the accountant is overlapping or out of order."""


@dataclass(frozen=True)
class CommandRecord:
    """One timestamped command as it left the controller."""
    issue_at: SimTime
    kind: CmdKind
    rank: int
    bank: int | None = None
    prior_state: PowerState | None = None


@dataclass
class EnergyBreakdown:
    act: float = 0.0
    pre: float = 0.0
    rd: float = 0.0
    wr: float = 0.0
    ref: float = 0.0
    act_back: float = 0.0
    pre_back: float = 0.0
    pdna: float = 0.0
    pdnp: float = 0.0
    sref: float = 0.0

    @property
    def total(self) -> float:
        return (self.act + self.pre + self.rd + self.wr + self.ref
                + self.act_back + self.pre_back + self.pdna + self.pdnp + self.sref)

    def add(self, other: "EnergyBreakdown") -> "EnergyBreakdown":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self


#: Which background bucket each power state charges.
_BACKGROUND_BUCKET = {
    PowerState.ACT: "act_back",
    PowerState.IDLE: "pre_back",
    PowerState.REF: "pre_back",
    PowerState.PDNA: "pdna",
    PowerState.PDNP: "pdnp",
    PowerState.SREF: "sref",
}


def background_power(state: PowerState, cfg: DeviceConfig) -> float:
    """Standby power drawn in ``state``, in watts."""
    vdd, vpp = cfg.VDD, cfg.VPP
    if state is PowerState.ACT:
        return vdd * cfg.IDD3N * _MA + vpp * cfg.IPP3N * _MA
    if state is PowerState.IDLE or state is PowerState.REF:
        return vdd * cfg.IDD2N * _MA + vpp * cfg.IPP2N * _MA
    if state is PowerState.PDNA:
        return vdd * cfg.IDD3P * _MA + vpp * cfg.IPP3P * _MA
    if state is PowerState.PDNP:
        return vdd * cfg.IDD2P * _MA + vpp * cfg.IPP2N * _MA
    if state is PowerState.SREF:
        return vdd * cfg.IDD6 * _MA + vpp * cfg.IPP6 * _MA
    raise ValueError(f"no background power defined for {state}")


def background_energy(state: PowerState, dt: SimTime, cfg: DeviceConfig) -> float:
    """Joules drawn by ``dt`` picoseconds of residency in ``state``."""
    if dt < 0:
        raise ValueError(f"negative residency {dt} ps")
    return background_power(state, cfg) * dt * _PS


def event_energy(kind: CmdKind, cfg: DeviceConfig, banks_closed: int = 1) -> EnergyBreakdown:
    """Per-command pulse energy increments.

    ``banks_closed`` scales the precharge part (a precharge-all closes several
    banks at once). RDA/WRA book both their column part and one precharge.
    """
    vdd, vpp = cfg.VDD, cfg.VPP
    e = EnergyBreakdown()
    pre_pulse = cfg.tRP * _PS * vdd * (cfg.IDD0 - cfg.IDD2N) * _MA
    if kind is CmdKind.ACT:
        e.act = cfg.tRAS * _PS * (vdd * (cfg.IDD0 - cfg.IDD3N) * _MA
                                  + vpp * (cfg.IPP0 - cfg.IPP3N) * _MA)
    elif kind in (CmdKind.PRE, CmdKind.PREA):
        e.pre = pre_pulse * banks_closed
    elif kind is CmdKind.RD:
        e.rd = cfg.tBURST * _PS * vdd * (cfg.IDD4R - cfg.IDD3N) * _MA
    elif kind is CmdKind.WR:
        e.wr = cfg.tBURST * _PS * vdd * (cfg.IDD4W - cfg.IDD3N) * _MA
    elif kind is CmdKind.RDA:
        e.rd = cfg.tBURST * _PS * vdd * (cfg.IDD4R - cfg.IDD3N) * _MA
        e.pre = pre_pulse
    elif kind is CmdKind.WRA:
        e.wr = cfg.tBURST * _PS * vdd * (cfg.IDD4W - cfg.IDD3N) * _MA
        e.pre = pre_pulse
    elif kind is CmdKind.REFA:
        e.ref = cfg.tRFC * _PS * (vdd * (cfg.IDD5 - cfg.IDD2N) * _MA
                                  + vpp * (cfg.IPP5 - cfg.IPP2N) * _MA)
    # Power-mode transitions carry no pulse energy of their own.
    return e


# ----------------------------------------------------------------------
# Residency accounting.

def accumulate_residency(history: Sequence[tuple[SimTime, PowerState]],
                         t_end: SimTime,
                         t_start: SimTime = 0) -> dict[PowerState, SimTime]:
    """Sum per-state residency of one rank over [t_start, t_end).

    ``history`` is the gap-free (enter_at, state) sequence recorded by the
    device; the last state extends to ``t_end``. The result partitions the
    window exactly.
    """
    if t_end < t_start:
        raise AccountingError(f"window ends before it starts: [{t_start}, {t_end})")
    out: dict[PowerState, SimTime] = {s: 0 for s in PowerState}
    if not history:
        raise AccountingError("empty state history")
    prev_t = None
    for i, (at, state) in enumerate(history):
        if prev_t is not None and at < prev_t:
            raise AccountingError(f"state history out of order at index {i} (t={at})")
        prev_t = at
        end = history[i + 1][0] if i + 1 < len(history) else t_end
        lo = max(at, t_start)
        hi = min(end, t_end)
        if hi > lo:
            out[state] += hi - lo
    if history[0][0] > t_start:
        raise AccountingError(
            f"history starts at {history[0][0]} ps, after window start {t_start} ps"
        )
    total = sum(out.values())
    if total != t_end - t_start:
        raise AccountingError(
            f"residency {total} ps does not partition window of {t_end - t_start} ps"
        )
    return out


class EnergyMeter:
    """Online accumulator fed during the run.

    Counts pulse energy per issued command and background energy on each
    power-state change; ``finalize`` closes the trailing intervals.
    """

    def __init__(self, cfg: DeviceConfig) -> None:
        self.cfg = cfg
        self.totals = EnergyBreakdown()
        self._last: list[tuple[SimTime, PowerState]] = [
            (0, PowerState.IDLE) for _ in range(cfg.ranks)
        ]
        self._finalized = False

    def on_command(self, record: CommandRecord, banks_closed: int) -> None:
        self.totals.add(event_energy(record.kind, self.cfg, banks_closed))

    def on_state_change(self, rank: int, at: SimTime, state: PowerState) -> None:
        last_t, last_state = self._last[rank]
        if at > last_t:
            bucket = _BACKGROUND_BUCKET[last_state]
            setattr(self.totals, bucket,
                    getattr(self.totals, bucket)
                    + background_energy(last_state, at - last_t, self.cfg))
        self._last[rank] = (at, state)

    def finalize(self, t_end: SimTime) -> EnergyBreakdown:
        if not self._finalized:
            for rank, (last_t, last_state) in enumerate(self._last):
                if t_end > last_t:
                    bucket = _BACKGROUND_BUCKET[last_state]
                    setattr(self.totals, bucket,
                            getattr(self.totals, bucket)
                            + background_energy(last_state, t_end - last_t, self.cfg))
                self._last[rank] = (t_end, last_state)
            self._finalized = True
        return self.totals


def energy_from_trace(records: Sequence[CommandRecord],
                      histories: Sequence[Sequence[tuple[SimTime, PowerState]]],
                      cfg: DeviceConfig,
                      t_start: SimTime,
                      t_end: SimTime) -> EnergyBreakdown:
    """Recompute the energy of a window from the command trace and histories.

    Serves as the offline replay cross-check of the online meter and as the
    per-phase report path. Bank open/close state is reconstructed from the
    trace itself so precharge-all commands can be billed per bank closed.
    """
    e = EnergyBreakdown()
    open_rows: dict[tuple[int, int], bool] = {}
    for rec in records:
        kind = rec.kind
        key = (rec.rank, rec.bank)
        if kind is CmdKind.PREA:
            closed = sum(1 for (r, _), v in open_rows.items() if r == rec.rank and v)
            if t_start <= rec.issue_at < t_end:
                e.add(event_energy(kind, cfg, banks_closed=closed))
            for k in open_rows:
                if k[0] == rec.rank:
                    open_rows[k] = False
            continue
        if t_start <= rec.issue_at < t_end:
            e.add(event_energy(kind, cfg))
        if kind is CmdKind.ACT:
            open_rows[key] = True
        elif kind in (CmdKind.PRE, CmdKind.RDA, CmdKind.WRA):
            open_rows[key] = False
    for history in histories:
        residency = accumulate_residency(history, t_end, t_start)
        for state, dt in residency.items():
            if dt:
                bucket = _BACKGROUND_BUCKET[state]
                setattr(e, bucket, getattr(e, bucket) + background_energy(state, dt, cfg))
    return e


# ----------------------------------------------------------------------
# Closed-form system power calculators.

@dataclass(frozen=True)
class DimmConfig:
    """Per-DIMM parameters for the first-approximation system power math.

    The defaults describe an 8 GB DDR4 registered DIMM (Micron
    MTA8ATF1G64AZ class).
    """
    IDD5B: float = 1800.0   # burst auto-refresh current, mA
    IPP5B: float = 240.0
    IDD2N: float = 400.0
    IDD6: float = 240.0
    IPP6: float = 40.0
    tRFC: int = 350_000     # ps
    tREFI: int = 7_800_000  # ps
    VDD: float = 1.2
    VPP: float = 2.5


DIMM_PRESETS: dict[str, DimmConfig] = {
    "ddr4-8gb-dimm": DimmConfig(),
}


def standby_power_system(n_dimms: int, dimm: DimmConfig) -> float:
    """Idle standby power of ``n_dimms`` DIMMs that are refreshed normally.

    Averages the refresh burst over the refresh interval:

        P = n * [tRFC*(VDD*IDD5B + VPP*IPP5B) + VDD*(tREFI-tRFC)*IDD2N] / tREFI
    """
    if n_dimms < 0:
        raise ValueError("n_dimms must be non-negative")
    if dimm.tREFI <= dimm.tRFC:
        raise ValueError("tREFI must exceed tRFC")
    burst = dimm.tRFC * _PS * (dimm.VDD * dimm.IDD5B * _MA + dimm.VPP * dimm.IPP5B * _MA)
    standby = dimm.VDD * (dimm.tREFI - dimm.tRFC) * _PS * dimm.IDD2N * _MA
    return n_dimms * (burst + standby) / (dimm.tREFI * _PS)


def selfrefresh_power_system(n_dimms: int, dimm: DimmConfig) -> float:
    """Power of ``n_dimms`` DIMMs parked in self-refresh:

        P = n * (VDD*IDD6 + VPP*IPP6)
    """
    if n_dimms < 0:
        raise ValueError("n_dimms must be non-negative")
    return n_dimms * (dimm.VDD * dimm.IDD6 * _MA + dimm.VPP * dimm.IPP6 * _MA)


# ----------------------------------------------------------------------
# Trace export.

_EXPORT_NAMES = {
    CmdKind.ACT: "ACT",
    CmdKind.PRE: "PRE",
    CmdKind.PREA: "PREA",
    CmdKind.RD: "RD",
    CmdKind.RDA: "RDA",
    CmdKind.WR: "WR",
    CmdKind.WRA: "WRA",
    CmdKind.REFA: "REF",
    CmdKind.SREFEN: "SREN",
    CmdKind.SREFEX: "SREX",
}


def _export_name(rec: CommandRecord) -> str:
    if rec.kind is CmdKind.PDE:
        return "PDN_F_ACT" if rec.prior_state is PowerState.ACT else "PDN_F_PRE"
    if rec.kind is CmdKind.PDX:
        return "PUP_ACT" if rec.prior_state is PowerState.PDNA else "PUP_PRE"
    return _EXPORT_NAMES[rec.kind]


def export_drampower_trace(records: Iterable[CommandRecord], out: TextIO,
                           tck: SimTime, rank: int | None = None) -> int:
    """Write records as ``<cycle>,<CMD>,<bank>`` lines (DRAMPower style).

    Timestamps are floored to clock cycles; rank-scoped commands carry bank 0.
    When ``rank`` is given only that rank's commands are written. Returns the
    number of lines written.
    """
    n = 0
    for rec in records:
        if rank is not None and rec.rank != rank:
            continue
        bank = rec.bank if rec.bank is not None else 0
        out.write(f"{rec.issue_at // tck},{_export_name(rec)},{bank}\n")
        n += 1
    return n
