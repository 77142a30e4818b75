"""DRAM device model: per-rank power states, bank states, command legality.

The rank is the atomic power-state unit. A rank is in exactly one of six
states:

* ``ACT``  - at least one bank has an open row, clock enable high.
* ``IDLE`` - all banks precharged and closed, clock enable high.
* ``PDNA`` - active power-down: cke low with at least one open row.
* ``PDNP`` - precharge power-down: cke low, all banks closed.
* ``SREF`` - self-refresh: cke low, all banks closed, the device refreshes
  itself internally so the controller owes it no refresh commands.
* ``REF``  - an auto-refresh is in progress (an accounting sub-state of the
  standby states lasting tRFC, kept distinct so refresh residency and energy
  can be reported separately).

``legal``/``earliest_issue``/``apply`` enforce both the state machine and the
pairwise JEDEC timing constraints (tRCD, tRAS, tRP, tCCD, tRRD, tRFC, tXP,
tXS, tCKE). All times are integer picoseconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum, auto
from typing import Callable, Optional

from dlps.engine import SimTime


class ProtocolError(RuntimeError):
    """A command was applied that the device state or timing does not allow."""


class PowerState(Enum):
    ACT = auto()
    IDLE = auto()
    PDNA = auto()
    PDNP = auto()
    SREF = auto()
    REF = auto()


#: States in which the clock-enable signal is driven low.
CKE_LOW_STATES = frozenset({PowerState.PDNA, PowerState.PDNP, PowerState.SREF})


class CmdKind(Enum):
    ACT = auto()
    PRE = auto()
    PREA = auto()
    RD = auto()
    WR = auto()
    RDA = auto()
    WRA = auto()
    REFA = auto()
    PDE = auto()
    PDX = auto()
    SREFEN = auto()
    SREFEX = auto()


COLUMN_CMDS = frozenset({CmdKind.RD, CmdKind.WR, CmdKind.RDA, CmdKind.WRA})
RANK_SCOPED_CMDS = frozenset(
    {CmdKind.PREA, CmdKind.REFA, CmdKind.PDE, CmdKind.PDX, CmdKind.SREFEN, CmdKind.SREFEX}
)


@dataclass(frozen=True)
class Command:
    kind: CmdKind
    rank: int
    bank: int | None = None
    row: int | None = None
    column: int | None = None

    def __str__(self) -> str:
        loc = "" if self.bank is None else f" b{self.bank}"
        if self.row is not None:
            loc += f" r{self.row}"
        return f"{self.kind.name}@rank{self.rank}{loc}"


@dataclass(frozen=True)
class DeviceConfig:
    """Timing, current, voltage and geometry parameters of one device.

    The defaults are the built-in ``ddr4-2400-8gb-x4`` preset (Micron
    DDR4-2400 8 Gb class part behind a x64 DIMM interface). Timings are
    picoseconds, currents milliamperes, voltages volts.
    """

    # Timing (ps).
    tCK: int = 833
    tCCD: int = 3332
    tRP: int = 14_160
    tRAS: int = 32_000
    tRCD: int = 14_160
    tRL: int = 14_160
    tWL: int = 12_000
    tBURST: int = 3332
    tRTP: int = 7500
    tWR: int = 15_000
    tRRD: int = 4900
    tRFC: int = 350_000
    tREFI: int = 7_800_000
    tXP: int = 4998        # power-down exit to first valid command (6 clocks)
    tXS: int = 339_864     # self-refresh exit to first valid command (408 clocks)
    tCKE: int = 4165       # minimum power-down residence (5 clocks)

    # Currents (mA).
    IDD0: float = 43.0
    IPP0: float = 3.0
    IDD2N: float = 34.0
    IDD3N: float = 38.0
    IPP3N: float = 3.0
    IDD2P: float = 25.0
    IDD3P: float = 32.0
    IDD5: float = 250.0
    IDD6: float = 30.0
    IDD4R: float = 110.0
    IDD4W: float = 103.0
    IPP2N: float = 0.0
    IPP3P: float = 0.0
    IPP5: float = 0.0
    IPP6: float = 0.0

    # Voltages (V).
    VDD: float = 1.2
    VPP: float = 2.5

    # Geometry.
    channels: int = 1
    ranks: int = 1
    banks_per_rank: int = 16
    rows_per_bank: int = 65_536
    row_buffer_bytes: int = 2048
    burst_bytes: int = 64

    def __post_init__(self) -> None:
        for name in ("tCK", "tCCD", "tRP", "tRAS", "tRCD", "tRL", "tWL",
                     "tBURST", "tRTP", "tWR", "tRRD", "tRFC", "tREFI",
                     "tXP", "tXS"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.tCKE < 0:
            raise ValueError(f"tCKE must be non-negative, got {self.tCKE}")
        if self.tRAS < self.tRCD:
            raise ValueError(f"tRAS ({self.tRAS}) must be >= tRCD ({self.tRCD})")
        if self.tRFC >= self.tREFI:
            raise ValueError(f"tRFC ({self.tRFC}) must be < tREFI ({self.tREFI})")
        if self.channels != 1:
            raise ValueError("only a single channel is modeled")
        if self.ranks not in (1, 2):
            raise ValueError(f"ranks must be 1 or 2, got {self.ranks}")
        for name in ("banks_per_rank", "rows_per_bank", "row_buffer_bytes", "burst_bytes"):
            v = getattr(self, name)
            if v <= 0 or v & (v - 1):
                raise ValueError(f"{name} must be a positive power of two, got {v}")
        if self.row_buffer_bytes % self.burst_bytes:
            raise ValueError("row_buffer_bytes must be a multiple of burst_bytes")

    # Address-map bit widths (used by the controller's decoder).
    @property
    def column_bits(self) -> int:
        return (self.row_buffer_bytes // self.burst_bytes).bit_length() - 1

    @property
    def bank_bits(self) -> int:
        return self.banks_per_rank.bit_length() - 1

    @property
    def rank_bits(self) -> int:
        return self.ranks.bit_length() - 1

    @property
    def offset_bits(self) -> int:
        return self.burst_bytes.bit_length() - 1

    @property
    def capacity_bytes(self) -> int:
        return self.ranks * self.banks_per_rank * self.rows_per_bank * self.row_buffer_bytes


PRESETS: dict[str, dict] = {
    "ddr4-2400-8gb-x4": {},
}


def make_config(preset: str = "ddr4-2400-8gb-x4", **overrides) -> DeviceConfig:
    """Build a DeviceConfig from a named preset plus overrides.

    Clock-derived timings (tBURST, tXP, tXS, tCKE) are rescaled when tCK is
    overridden and the derived value is not itself overridden.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown device preset {preset!r}; known: {sorted(PRESETS)}")
    params = dict(PRESETS[preset])
    params.update(overrides)
    tck = params.get("tCK", DeviceConfig.tCK)
    params.setdefault("tBURST", 4 * tck)
    params.setdefault("tXP", 6 * tck)
    params.setdefault("tXS", 408 * tck)
    params.setdefault("tCKE", 5 * tck)
    return DeviceConfig(**params)


def compute_tpde(cfg: DeviceConfig) -> SimTime:
    """Earliest opportunity after an activate to enter a power-down state.

    An activate must be held open for tRAS, the following precharge takes
    tRP, and the power-down entry itself occupies one further clock.
    """
    return cfg.tRAS + cfg.tRP + cfg.tCK


class BankState:
    """One bank: the open row (if any) and its earliest-issue constraints."""

    __slots__ = ("open_row", "act_at", "act_ok_at", "col_ok_at", "pre_ok_at")

    def __init__(self) -> None:
        self.open_row: int | None = None
        self.act_at: SimTime = 0        # issue time of the last activate
        self.act_ok_at: SimTime = 0     # earliest next activate (tRP after close)
        self.col_ok_at: SimTime = 0     # earliest column command (tRCD after act)
        self.pre_ok_at: SimTime = 0     # earliest precharge (tRAS / tRTP / write recovery)


class RankState:
    """One rank: power state, clock enable, banks and rank-wide constraints."""

    __slots__ = (
        "index", "power", "cke", "banks", "refresh_deadline",
        "pd_entered_at", "wake_ok_at", "next_act_at", "next_col_at",
        "ref_busy_until", "pd_ok_at", "history",
    )

    def __init__(self, index: int, n_banks: int) -> None:
        self.index = index
        self.power = PowerState.IDLE
        self.cke = True
        self.banks = [BankState() for _ in range(n_banks)]
        self.refresh_deadline: SimTime = 0
        self.pd_entered_at: SimTime = 0
        self.wake_ok_at: SimTime = 0    # tXP / tXS gate after a power-down exit
        self.next_act_at: SimTime = 0   # tRRD gate, rank-wide
        self.next_col_at: SimTime = 0   # tCCD gate on the shared data bus
        self.ref_busy_until: SimTime = 0
        self.pd_ok_at: SimTime = 0      # earliest power-down entry
        self.history: list[tuple[SimTime, PowerState]] = [(0, PowerState.IDLE)]

    def open_banks(self) -> int:
        return sum(1 for b in self.banks if b.open_row is not None)

    def any_open(self) -> bool:
        return any(b.open_row is not None for b in self.banks)


class Device:
    """All ranks of one channel plus the command legality/timing rules."""

    def __init__(self, cfg: DeviceConfig, record_history: bool = True) -> None:
        self.cfg = cfg
        self.record_history = record_history
        self.ranks = [RankState(i, cfg.banks_per_rank) for i in range(cfg.ranks)]
        self.state_listeners: list[Callable[[int, SimTime, PowerState], None]] = []

    # ------------------------------------------------------------------
    # State machine legality (ignores timing).

    def _state_legal(self, cmd: Command, rank: RankState) -> bool:
        kind = cmd.kind
        power = rank.power
        if power is PowerState.REF:
            return False
        if power is PowerState.SREF:
            return kind is CmdKind.SREFEX
        if power is PowerState.PDNA:
            return kind is CmdKind.PDX
        if power is PowerState.PDNP:
            # SREFEN acts as an exit from PDNP straight into the deeper mode.
            return kind in (CmdKind.PDX, CmdKind.SREFEN)

        # Standby (ACT / IDLE), cke high.
        if kind is CmdKind.ACT:
            return rank.banks[cmd.bank].open_row is None
        if kind is CmdKind.PRE:
            return rank.banks[cmd.bank].open_row is not None
        if kind is CmdKind.PREA:
            return rank.any_open()
        if kind in COLUMN_CMDS:
            return rank.banks[cmd.bank].open_row == cmd.row
        if kind is CmdKind.REFA:
            return not rank.any_open()
        if kind is CmdKind.PDE:
            return True
        if kind is CmdKind.SREFEN:
            return not rank.any_open()
        return False  # PDX / SREFEX while not powered down

    def earliest_issue(self, cmd: Command) -> SimTime:
        """Earliest time the command satisfies every timing constraint.

        Assumes the command is legal for the current state; the caller is
        expected to have checked ``_state_legal`` (``legal`` combines both).
        """
        rank = self.ranks[cmd.rank]
        kind = cmd.kind
        if kind is CmdKind.PDX or kind is CmdKind.SREFEX:
            return rank.pd_entered_at + self.cfg.tCKE
        if kind is CmdKind.SREFEN and rank.power is PowerState.PDNP:
            return rank.pd_entered_at + self.cfg.tCKE

        t = max(rank.wake_ok_at, rank.ref_busy_until)
        if kind is CmdKind.ACT:
            bank = rank.banks[cmd.bank]
            return max(t, bank.act_ok_at, rank.next_act_at)
        if kind is CmdKind.PRE:
            return max(t, rank.banks[cmd.bank].pre_ok_at)
        if kind is CmdKind.PREA:
            for b in rank.banks:
                if b.open_row is not None and b.pre_ok_at > t:
                    t = b.pre_ok_at
            return t
        if kind in COLUMN_CMDS:
            bank = rank.banks[cmd.bank]
            return max(t, bank.col_ok_at, rank.next_col_at)
        if kind is CmdKind.REFA or kind is CmdKind.SREFEN:
            # Every bank must be fully precharged (tRP elapsed).
            for b in rank.banks:
                if b.act_ok_at > t:
                    t = b.act_ok_at
            return t
        if kind is CmdKind.PDE:
            return max(t, rank.pd_ok_at)
        raise ProtocolError(f"no timing rule for {cmd}")

    def legal(self, cmd: Command, now: SimTime) -> bool:
        rank = self.ranks[cmd.rank]
        return self._state_legal(cmd, rank) and now >= self.earliest_issue(cmd)

    # ------------------------------------------------------------------
    # Command application.

    def apply(self, cmd: Command, now: SimTime) -> RankState:
        rank = self.ranks[cmd.rank]
        if not self._state_legal(cmd, rank):
            raise ProtocolError(
                f"illegal command {cmd} in state {rank.power.name} at t={now} ps"
            )
        t_ok = self.earliest_issue(cmd)
        if now < t_ok:
            raise ProtocolError(
                f"{cmd} violates timing at t={now} ps (earliest {t_ok} ps), "
                f"state {rank.power.name}"
            )
        cfg = self.cfg
        kind = cmd.kind

        if kind is CmdKind.ACT:
            bank = rank.banks[cmd.bank]
            bank.open_row = cmd.row
            bank.act_at = now
            bank.col_ok_at = now + cfg.tRCD
            bank.pre_ok_at = now + cfg.tRAS
            rank.next_act_at = now + cfg.tRRD
            rank.pd_ok_at = max(rank.pd_ok_at, now + cfg.tCK)
            self._set_power(rank, PowerState.ACT, now)

        elif kind is CmdKind.PRE:
            bank = rank.banks[cmd.bank]
            bank.open_row = None
            bank.act_ok_at = now + cfg.tRP
            rank.pd_ok_at = max(rank.pd_ok_at, now + cfg.tRP + cfg.tCK)
            self._refresh_standby_state(rank, now)

        elif kind is CmdKind.PREA:
            for bank in rank.banks:
                if bank.open_row is not None:
                    bank.open_row = None
                    bank.act_ok_at = now + cfg.tRP
            rank.pd_ok_at = max(rank.pd_ok_at, now + cfg.tRP + cfg.tCK)
            self._set_power(rank, PowerState.IDLE, now)

        elif kind is CmdKind.RD or kind is CmdKind.RDA:
            bank = rank.banks[cmd.bank]
            rank.next_col_at = now + cfg.tCCD
            bank.pre_ok_at = max(bank.pre_ok_at, now + cfg.tRTP)
            rank.pd_ok_at = max(rank.pd_ok_at, now + cfg.tRL + cfg.tBURST + cfg.tCK)
            if kind is CmdKind.RDA:
                pre_at = self.auto_precharge_start(cmd.rank, cmd.bank, now, is_read=True)
                bank.open_row = None
                bank.act_ok_at = pre_at + cfg.tRP
                rank.pd_ok_at = max(rank.pd_ok_at, pre_at + cfg.tRP + cfg.tCK)
                self._refresh_standby_state(rank, now)

        elif kind is CmdKind.WR or kind is CmdKind.WRA:
            bank = rank.banks[cmd.bank]
            rank.next_col_at = now + cfg.tCCD
            write_done = now + cfg.tWL + cfg.tBURST + cfg.tWR
            bank.pre_ok_at = max(bank.pre_ok_at, write_done)
            rank.pd_ok_at = max(rank.pd_ok_at, write_done + cfg.tCK)
            if kind is CmdKind.WRA:
                pre_at = self.auto_precharge_start(cmd.rank, cmd.bank, now, is_read=False)
                bank.open_row = None
                bank.act_ok_at = pre_at + cfg.tRP
                rank.pd_ok_at = max(rank.pd_ok_at, pre_at + cfg.tRP + cfg.tCK)
                self._refresh_standby_state(rank, now)

        elif kind is CmdKind.REFA:
            rank.ref_busy_until = now + cfg.tRFC
            rank.refresh_deadline += cfg.tREFI
            rank.pd_ok_at = max(rank.pd_ok_at, now + cfg.tRFC + cfg.tCK)
            self._set_power(rank, PowerState.REF, now)

        elif kind is CmdKind.PDE:
            rank.pd_entered_at = now
            target = PowerState.PDNA if rank.any_open() else PowerState.PDNP
            self._set_power(rank, target, now)

        elif kind is CmdKind.PDX:
            rank.wake_ok_at = now + cfg.tXP
            self._refresh_standby_state(rank, now)

        elif kind is CmdKind.SREFEN:
            rank.pd_entered_at = now
            self._set_power(rank, PowerState.SREF, now)

        elif kind is CmdKind.SREFEX:
            rank.wake_ok_at = now + cfg.tXS
            rank.refresh_deadline = now + cfg.tREFI
            self._set_power(rank, PowerState.IDLE, now)

        else:
            raise ProtocolError(f"unhandled command {cmd}")

        self._check_invariants(rank, now)
        return rank

    def finish_refresh(self, rank_index: int, now: SimTime) -> None:
        """Leave the REF sub-state once tRFC has elapsed."""
        rank = self.ranks[rank_index]
        if rank.power is not PowerState.REF:
            raise ProtocolError(
                f"finish_refresh in state {rank.power.name} at t={now} ps"
            )
        if now < rank.ref_busy_until:
            raise ProtocolError(
                f"finish_refresh at t={now} ps before tRFC elapsed "
                f"({rank.ref_busy_until} ps)"
            )
        self._set_power(rank, PowerState.IDLE, now)
        self._check_invariants(rank, now)

    def auto_precharge_start(self, rank_index: int, bank_index: int, now: SimTime,
                             is_read: bool) -> SimTime:
        """When the internal precharge of an RDA/WRA begins.

        Reads: tRTP after the column command. Writes: after write recovery.
        Never earlier than tRAS past the activate.
        """
        cfg = self.cfg
        bank = self.ranks[rank_index].banks[bank_index]
        if is_read:
            start = now + cfg.tRTP
        else:
            start = now + cfg.tWL + cfg.tBURST + cfg.tWR
        return max(start, bank.act_at + cfg.tRAS)

    # ------------------------------------------------------------------
    # Internals.

    def _refresh_standby_state(self, rank: RankState, now: SimTime) -> None:
        """Recompute ACT vs IDLE after a row opens or closes (cke high only)."""
        if rank.power in (PowerState.ACT, PowerState.IDLE):
            target = PowerState.ACT if rank.any_open() else PowerState.IDLE
            self._set_power(rank, target, now)
        elif rank.power in CKE_LOW_STATES:
            # Only reachable from PDX, which restores the matching standby state.
            target = PowerState.ACT if rank.any_open() else PowerState.IDLE
            self._set_power(rank, target, now)

    def _set_power(self, rank: RankState, state: PowerState, now: SimTime) -> None:
        if state is rank.power:
            return
        rank.power = state
        rank.cke = state not in CKE_LOW_STATES
        if self.record_history:
            hist = rank.history
            if hist and hist[-1][0] == now:
                hist[-1] = (now, state)
            else:
                hist.append((now, state))
        for listener in self.state_listeners:
            listener(rank.index, now, state)

    def _check_invariants(self, rank: RankState, now: SimTime) -> None:
        power = rank.power
        if rank.cke != (power not in CKE_LOW_STATES):
            raise ProtocolError(f"cke inconsistent with {power.name} at t={now} ps")
        if power is PowerState.PDNA and not rank.any_open():
            raise ProtocolError(f"PDNA with no open bank at t={now} ps")
        if power in (PowerState.PDNP, PowerState.SREF, PowerState.REF) and rank.any_open():
            raise ProtocolError(f"{power.name} with an open bank at t={now} ps")
