"""Memory controller: queues, FR-FCFS scheduling, page policies, refresh
management and the staggered low-power state manager.

The controller is driven entirely by engine events. Each event dispatch is
one command slot on the shared command/address bus: at most one command is
issued per dispatch, and consecutive commands are at least one clock apart.
Scheduling priority within a slot is fixed:

1. overdue refresh sequences (wake, precharge-all, refresh),
2. request servicing picked by FR-FCFS (row hits first, then oldest),
3. page-policy precharges for quiescent banks,
4. power-down entries.

Power-down entry requires an empty request queue for the rank and no pending
events (outstanding precharges, in-flight refresh, undelivered read data).
Those conditions are observed at the natural trigger points: refresh start
and end, data response, and precharge completion. Refresh deadlines drive
the staggered descent: an idle rank walks active power-down into precharge
power-down at its next refresh, and into self-refresh at the one after that,
with no timeout counters involved.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from dlps.device import (
    CmdKind,
    Command,
    Device,
    DeviceConfig,
    PowerState,
)
from dlps.engine import Engine, Event, EventKind, SimTime
from dlps.power import CommandRecord


class PagePolicy(Enum):
    OPEN_ADAPTIVE = "open_adaptive"
    CLOSED_ADAPTIVE = "closed_adaptive"


@dataclass
class ControllerConfig:
    read_queue_depth: int = 64
    write_queue_depth: int = 64
    page_policy: PagePolicy = PagePolicy.OPEN_ADAPTIVE
    powerdown_enabled: bool = True
    address_map: str = "RoRaBaCoCh"

    def __post_init__(self) -> None:
        if self.read_queue_depth < 1 or self.write_queue_depth < 1:
            raise ValueError("queue depths must be >= 1")
        if self.address_map != "RoRaBaCoCh":
            raise ValueError(f"unsupported address map {self.address_map!r}")


def decode(address: int, geom: DeviceConfig) -> tuple[int, int, int, int, int]:
    """Split a byte address into (channel, rank, bank, row, column).

    Bit layout above the burst offset, least significant first: channel
    (zero bits for the single channel), column, bank, rank, row. Reading
    most-significant first that is row / rank / bank / column / channel.
    """
    if address < 0 or address >= geom.capacity_bytes:
        raise ValueError(
            f"address {address:#x} outside configured range "
            f"[0, {geom.capacity_bytes:#x})"
        )
    x = address >> geom.offset_bits
    column = x & ((1 << geom.column_bits) - 1)
    x >>= geom.column_bits
    bank = x & ((1 << geom.bank_bits) - 1)
    x >>= geom.bank_bits
    rank = x & ((1 << geom.rank_bits) - 1)
    x >>= geom.rank_bits
    row = x
    return (0, rank, bank, row, column)


class Request:
    __slots__ = ("id", "arrive_at", "op", "address", "size",
                 "rank", "bank", "row", "column", "needed_act")

    def __init__(self, req_id: int, arrive_at: SimTime, op: str, address: int,
                 size: int, geom: DeviceConfig) -> None:
        if op not in ("R", "W"):
            raise ValueError(f"op must be 'R' or 'W', got {op!r}")
        self.id = req_id
        self.arrive_at = arrive_at
        self.op = op
        self.address = address
        self.size = size
        _, self.rank, self.bank, self.row, self.column = decode(address, geom)
        self.needed_act = False

    def __repr__(self) -> str:
        return (f"Request(#{self.id} {self.op} addr={self.address:#x} "
                f"rank={self.rank} bank={self.bank} row={self.row})")


@dataclass
class ControllerStats:
    accepted: int = 0
    rejected: int = 0
    responses: int = 0
    row_hits: int = 0
    row_misses: int = 0
    commands: int = 0
    burst_ps: int = 0
    checks_one_pending: int = 0
    checks_one_pending_pre: int = 0
    occ_integral: int = 0       # read-queue length integrated over time (entries*ps)
    last_response_at: SimTime = 0
    last_command_at: SimTime = 0
    refa: list[int] = field(default_factory=list)
    pde: int = 0
    srefen: int = 0

    def snapshot(self) -> "ControllerStats":
        copy = ControllerStats(**{k: v for k, v in self.__dict__.items() if k != "refa"})
        copy.refa = list(self.refa)
        return copy


class Controller:
    """Event-driven controller for one channel."""

    def __init__(self, engine: Engine, device: Device, cfg: ControllerConfig) -> None:
        self.engine = engine
        self.device = device
        self.cfg = cfg
        self.dcfg = device.cfg
        n_ranks = self.dcfg.ranks
        self.stats = ControllerStats(refa=[0] * n_ranks)

        self._bankq: dict[tuple[int, int], deque[Request]] = {}
        self._nread = 0
        self._nwrite = 0
        self._rank_load = [0] * n_ranks
        self._pend_pre = [0] * n_ranks
        self._pend_reads = [0] * n_ranks
        self._ref_pending = [False] * n_ranks
        self._ref_inflight = [False] * n_ranks
        self._intent = ["none"] * n_ranks

        self._cmd_bus_free_at: SimTime = 0
        self._window_armed_at: SimTime | None = None
        self._occ_last_t: SimTime = 0

        self.trace: list[CommandRecord] = []
        # Called with (record, banks_closed_by_it) on every issued command.
        self.command_listeners = []
        # Called with no arguments whenever a queue slot frees up.
        self.vacancy_listeners = []

        engine.subscribe(EventKind.ISSUE_WINDOW, self._on_window)
        engine.subscribe(EventKind.REFRESH_DUE, self._on_refresh_due)
        engine.subscribe(EventKind.PRECHARGE_COMPLETE, self._on_precharge_complete)
        engine.subscribe(EventKind.READ_DATA, self._on_read_data)
        engine.subscribe(EventKind.REFRESH_COMPLETE, self._on_refresh_complete)
        engine.subscribe(EventKind.POWERDOWN_CHECK, self._on_powerdown_check)

    # ------------------------------------------------------------------
    # Setup.

    def start(self) -> None:
        """Schedule the initial refresh deadlines, staggered across ranks."""
        n = self.dcfg.ranks
        for r, rank in enumerate(self.device.ranks):
            deadline = self.dcfg.tREFI * (r + 1) // n
            rank.refresh_deadline = deadline
            self.engine.schedule_at(deadline, EventKind.REFRESH_DUE, (r, deadline))
        self._arm_window(self.engine.now)

    def preactivate(self, bank: int, row: int = 0) -> None:
        """Open a row directly (used to start idle runs from an active state)."""
        cmd = Command(CmdKind.ACT, rank=0, bank=bank, row=row)
        self._issue(cmd, self.engine.now)

    # ------------------------------------------------------------------
    # Request intake.

    def enqueue(self, req: Request) -> bool:
        """Queue a request; False signals back-pressure (caller must retry)."""
        if req.op == "R":
            if self._nread >= self.cfg.read_queue_depth:
                self.stats.rejected += 1
                return False
        else:
            if self._nwrite >= self.cfg.write_queue_depth:
                self.stats.rejected += 1
                return False
        now = self.engine.now
        self._tick_occupancy(now)
        key = (req.rank, req.bank)
        dq = self._bankq.get(key)
        if dq is None:
            dq = self._bankq[key] = deque()
        dq.append(req)
        if req.op == "R":
            self._nread += 1
        else:
            self._nwrite += 1
        self._rank_load[req.rank] += 1
        self.stats.accepted += 1
        self._arm_window(now)
        return True

    def queued(self, rank: int | None = None) -> int:
        if rank is None:
            return self._nread + self._nwrite
        return self._rank_load[rank]

    # ------------------------------------------------------------------
    # Low-power manager predicates.

    def pending_events(self, rank: int) -> int:
        n = self._pend_pre[rank] + self._pend_reads[rank]
        if self._ref_pending[rank] or self._ref_inflight[rank]:
            n += 1
        return n

    def can_power_down(self, rank: int) -> bool:
        """True iff no queued request targets the rank and nothing is in flight."""
        return self._rank_load[rank] == 0 and self.pending_events(rank) == 0

    def powerdown_check(self, rank: int) -> Command | None:
        """Emit a power-down entry if the rank qualifies right now."""
        if not self.cfg.powerdown_enabled:
            return None
        state = self.device.ranks[rank].power
        if state not in (PowerState.ACT, PowerState.IDLE):
            return None
        if not self.can_power_down(rank):
            return None
        self._intent[rank] = "pdna" if self.device.ranks[rank].any_open() else "pdnp"
        return Command(CmdKind.PDE, rank=rank)

    def page_policy_decide(self, rank: int, bank: int, row: int,
                           exclude: Request | None = None) -> bool:
        """True means close the page, False means keep it open.

        ``row`` is the row that is (or will be) open; ``exclude`` removes the
        request currently being serviced from consideration.
        """
        dq = self._bankq.get((rank, bank))
        has_req = False
        has_hit = False
        if dq:
            for r in dq:
                if r is exclude:
                    continue
                has_req = True
                if r.row == row:
                    has_hit = True
                    break
        if self.cfg.page_policy is PagePolicy.CLOSED_ADAPTIVE:
            return not has_hit
        return has_req and not has_hit

    # ------------------------------------------------------------------
    # Event handlers.

    def _on_window(self, ev: Event) -> None:
        if self._window_armed_at != ev.fire_at:
            return  # superseded by an earlier re-arm
        self._window_armed_at = None
        self._pump()

    def _on_refresh_due(self, ev: Event) -> None:
        rank_idx, deadline = ev.payload
        rank = self.device.ranks[rank_idx]
        if rank.power is PowerState.SREF:
            return  # deadline suspended; self-timed refresh is running
        if deadline != rank.refresh_deadline:
            return  # stale: the deadline moved (refresh issued or SREF exit)
        self._ref_pending[rank_idx] = True
        self._pump()

    def _on_precharge_complete(self, ev: Event) -> None:
        rank_idx = ev.payload
        self._pend_pre[rank_idx] -= 1
        self._observe(rank_idx)
        self._pump()

    def _on_read_data(self, ev: Event) -> None:
        req: Request = ev.payload
        self._pend_reads[req.rank] -= 1
        self.stats.responses += 1
        self.stats.last_response_at = self.engine.now
        self._observe(req.rank)
        self._pump()

    def _on_refresh_complete(self, ev: Event) -> None:
        rank_idx = ev.payload
        self._ref_inflight[rank_idx] = False
        self.device.finish_refresh(rank_idx, self.engine.now)
        self._observe(rank_idx)
        self._pump()

    def _on_powerdown_check(self, ev: Event) -> None:
        if ev.payload is not None:
            self._observe(ev.payload)
        self._pump()

    def _observe(self, rank: int) -> None:
        """Record a power-down opportunity check at a trigger event."""
        if self._rank_load[rank] == 0:
            pend = self.pending_events(rank)
            if pend == 1:
                self.stats.checks_one_pending += 1
                if self._pend_pre[rank] == 1:
                    self.stats.checks_one_pending_pre += 1

    # ------------------------------------------------------------------
    # The command pump: one command per dispatch slot.

    def _arm_window(self, at: SimTime) -> None:
        if self._window_armed_at is None or at < self._window_armed_at:
            self._window_armed_at = at
            self.engine.schedule_at(at, EventKind.ISSUE_WINDOW)

    def _pump(self) -> None:
        now = self.engine.now
        if now < self._cmd_bus_free_at:
            self._arm_window(self._cmd_bus_free_at)
            return
        next_t: SimTime | None = None

        # 1) Refresh sequences.
        for r in range(self.dcfg.ranks):
            if not self._ref_pending[r]:
                continue
            cmd = self._refresh_next_cmd(r)
            t = self.device.earliest_issue(cmd)
            if t <= now:
                self._issue(cmd, now)
                return
            if next_t is None or t < next_t:
                next_t = t

        # 2) Request servicing (FR-FCFS).
        picked, t = self._fr_fcfs_pick(now)
        if picked is not None:
            req, cmd = picked
            self._issue(cmd, now, req=req)
            return
        if t is not None and (next_t is None or t < next_t):
            next_t = t

        # 3) Page-policy precharges for banks nothing is queued against.
        for (r, b), rank in self._iter_open_banks():
            if self._ref_pending[r] or self._ref_inflight[r]:
                continue
            if rank.power is not PowerState.ACT:
                continue
            dq = self._bankq.get((r, b))
            if dq:
                continue  # request servicing owns this bank's next command
            bank = rank.banks[b]
            if not self.page_policy_decide(r, b, bank.open_row):
                continue
            cmd = Command(CmdKind.PRE, rank=r, bank=b)
            t = self.device.earliest_issue(cmd)
            if t <= now:
                self._issue(cmd, now)
                return
            if next_t is None or t < next_t:
                next_t = t

        # 4) Power-down entries.
        if self.cfg.powerdown_enabled:
            for r in range(self.dcfg.ranks):
                cmd = self.powerdown_check(r)
                if cmd is None:
                    continue
                t = self.device.earliest_issue(cmd)
                if t <= now:
                    self._issue(cmd, now)
                    return
                if next_t is None or t < next_t:
                    next_t = t

        if next_t is not None:
            self._arm_window(max(next_t, self._cmd_bus_free_at))

    def _iter_open_banks(self):
        for r, rank in enumerate(self.device.ranks):
            for b, bank in enumerate(rank.banks):
                if bank.open_row is not None:
                    yield (r, b), rank

    def _refresh_next_cmd(self, r: int) -> Command:
        rank = self.device.ranks[r]
        power = rank.power
        if power is PowerState.PDNP:
            # Still idle at the deadline: deepen into self-refresh instead of
            # waking for a normal refresh.
            if self._rank_load[r] == 0 and self._only_refresh_pending(r):
                return Command(CmdKind.SREFEN, rank=r)
            return Command(CmdKind.PDX, rank=r)
        if power is PowerState.PDNA:
            return Command(CmdKind.PDX, rank=r)
        if rank.any_open():
            return Command(CmdKind.PREA, rank=r)
        return Command(CmdKind.REFA, rank=r)

    def _only_refresh_pending(self, r: int) -> bool:
        return (self._pend_pre[r] == 0 and self._pend_reads[r] == 0
                and not self._ref_inflight[r])

    def _fr_fcfs_pick(self, now: SimTime):
        """Best issuable command among queued requests, or the earliest future time.

        Returns ((request, command), None) when something can issue now, else
        (None, earliest_time_or_None). Row hits are preferred over everything
        else; within a class the oldest arrival wins.
        """
        best = None
        best_key = None
        next_t: SimTime | None = None
        device = self.device
        for (r, b), dq in self._bankq.items():
            if not dq:
                continue
            if self._ref_pending[r] or self._ref_inflight[r]:
                continue  # refresh first for this rank
            rank = device.ranks[r]
            power = rank.power
            candidates = []
            if power in (PowerState.PDNA, PowerState.PDNP):
                candidates.append((dq[0], Command(CmdKind.PDX, rank=r), False))
            elif power is PowerState.SREF:
                candidates.append((dq[0], Command(CmdKind.SREFEX, rank=r), False))
            else:
                bank = rank.banks[b]
                if bank.open_row is not None:
                    hit = None
                    for req in dq:
                        if req.row == bank.open_row:
                            hit = req
                            break
                    if hit is not None:
                        candidates.append((hit, self._column_cmd(hit), True))
                    head = dq[0]
                    if head.row != bank.open_row:
                        candidates.append((head, Command(CmdKind.PRE, rank=r, bank=b), False))
                else:
                    head = dq[0]
                    candidates.append(
                        (head, Command(CmdKind.ACT, rank=r, bank=b, row=head.row), False))
            for req, cmd, is_hit in candidates:
                t = device.earliest_issue(cmd)
                if t <= now:
                    key = (not is_hit, req.arrive_at, req.id)
                    if best_key is None or key < best_key:
                        best_key = key
                        best = (req, cmd)
                elif next_t is None or t < next_t:
                    next_t = t
        if best is not None:
            return best, None
        return None, next_t

    def _column_cmd(self, req: Request) -> Command:
        close = self.page_policy_decide(req.rank, req.bank, req.row, exclude=req)
        if req.op == "R":
            kind = CmdKind.RDA if close else CmdKind.RD
        else:
            kind = CmdKind.WRA if close else CmdKind.WR
        return Command(kind, rank=req.rank, bank=req.bank, row=req.row,
                       column=req.column)

    # ------------------------------------------------------------------
    # Command issue and bookkeeping.

    def _issue(self, cmd: Command, now: SimTime, req: Request | None = None) -> None:
        device = self.device
        cfg = self.dcfg
        kind = cmd.kind
        r = cmd.rank

        banks_closed = 0
        if kind is CmdKind.PRE:
            banks_closed = 1
        elif kind is CmdKind.PREA:
            banks_closed = device.ranks[r].open_banks()
        elif kind in (CmdKind.RDA, CmdKind.WRA):
            banks_closed = 1

        pre_done_at: SimTime | None = None
        if kind is CmdKind.PRE or kind is CmdKind.PREA:
            pre_done_at = now + cfg.tRP
        elif kind is CmdKind.RDA:
            pre_done_at = device.auto_precharge_start(r, cmd.bank, now, True) + cfg.tRP
        elif kind is CmdKind.WRA:
            pre_done_at = device.auto_precharge_start(r, cmd.bank, now, False) + cfg.tRP

        prior = device.ranks[r].power
        device.apply(cmd, now)

        record = CommandRecord(now, kind, r, cmd.bank, prior)
        self.trace.append(record)
        self.stats.commands += 1
        self.stats.last_command_at = now
        for listener in self.command_listeners:
            listener(record, banks_closed)

        if pre_done_at is not None:
            self._pend_pre[r] += 1
            self.engine.schedule_at(pre_done_at, EventKind.PRECHARGE_COMPLETE, r)

        if kind is CmdKind.REFA:
            self._ref_pending[r] = False
            self._ref_inflight[r] = True
            self.stats.refa[r] += 1
            self._observe(r)  # refresh-start trigger
            self.engine.schedule_at(now + cfg.tRFC, EventKind.REFRESH_COMPLETE, r)
            deadline = device.ranks[r].refresh_deadline
            self.engine.schedule_at(deadline, EventKind.REFRESH_DUE, (r, deadline))
        elif kind is CmdKind.SREFEN:
            self._ref_pending[r] = False
            self.stats.srefen += 1
            self._intent[r] = "sref"
        elif kind is CmdKind.SREFEX:
            deadline = device.ranks[r].refresh_deadline
            self.engine.schedule_at(deadline, EventKind.REFRESH_DUE, (r, deadline))
        elif kind is CmdKind.PDE:
            self.stats.pde += 1

        if req is not None:
            if kind in (CmdKind.ACT, CmdKind.PRE):
                req.needed_act = True
            elif kind in (CmdKind.RD, CmdKind.RDA, CmdKind.WR, CmdKind.WRA):
                self._complete_column(req, cmd, now)

        self._cmd_bus_free_at = now + cfg.tCK
        self._arm_window(self._cmd_bus_free_at)

    def _complete_column(self, req: Request, cmd: Command, now: SimTime) -> None:
        if req.needed_act:
            self.stats.row_misses += 1
        else:
            self.stats.row_hits += 1
        self.stats.burst_ps += self.dcfg.tBURST
        self._tick_occupancy(now)
        self._bankq[(req.rank, req.bank)].remove(req)
        if req.op == "R":
            self._nread -= 1
            self._pend_reads[req.rank] += 1
            data_at = now + self.dcfg.tRL + self.dcfg.tBURST
            self.engine.schedule_at(data_at, EventKind.READ_DATA, req)
        else:
            self._nwrite -= 1
        self._rank_load[req.rank] -= 1
        for listener in self.vacancy_listeners:
            listener()

    def _tick_occupancy(self, now: SimTime) -> None:
        self.stats.occ_integral += self._nread * (now - self._occ_last_t)
        self._occ_last_t = now
