"""Synthetic traffic generation and trace replay.

The generator emits fixed-size read requests whose addresses walk
sequentially through an aligned block of ``n_seq_bytes``, then jump to a new
uniformly random block constrained to an allowed set of banks. The gap
between back-to-back injection attempts is drawn per request, uniform over
[itt_min, itt_max]. Sweeps tune itt_max in multiples of the power-down entry
time, which tunes how likely the device is to go idle between requests.

On back-pressure the generator holds the rejected request and retries as
soon as the controller frees a queue slot; the next gap starts counting only
after successful injection.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from dlps.controller import Controller, Request, decode
from dlps.device import DeviceConfig, compute_tpde
from dlps.engine import Engine, Event, EventKind, Rng, SimTime, US


class TraceFormatError(ValueError):
    """Malformed or mis-ordered replay trace input."""


DENSITY_MULTIPLIER = {"very_dense": 1, "dense": 20, "sparse": 100}
N_SEQ_CHOICES = (64, 256, 512)
BANK_UTIL_CHOICES = (1, 8, 16)  # numerator over 16 banks
PHASE_DURATION: SimTime = 250 * US
ADDR_RANGE = 256 * 1024 * 1024


def itt_bounds(cfg: DeviceConfig, profile: str) -> tuple[SimTime, SimTime]:
    """Inter-transaction time bounds for a density profile.

    The minimum is the column-to-column delay (the gap that saturates the
    data bus); the maximum is 1x / 20x / 100x the power-down entry time for
    very_dense / dense / sparse.
    """
    try:
        k = DENSITY_MULTIPLIER[profile]
    except KeyError:
        raise ValueError(
            f"unknown density profile {profile!r}; known: {sorted(DENSITY_MULTIPLIER)}"
        ) from None
    return cfg.tCCD, k * compute_tpde(cfg)


@dataclass(frozen=True)
class PhaseConfig:
    itt_min: SimTime
    itt_max: SimTime
    n_seq_bytes: int = 64
    bank_util_num: int = 16
    bank_util_den: int = 16
    duration: SimTime = PHASE_DURATION
    op: str = "R"
    req_size: int = 64
    addr_range: int = ADDR_RANGE
    seed: int = 1
    label: str = ""

    def __post_init__(self) -> None:
        if self.itt_min > self.itt_max:
            raise ValueError("itt_min must not exceed itt_max")
        if self.n_seq_bytes % self.req_size:
            raise ValueError("n_seq_bytes must be a multiple of the request size")
        if self.bank_util_num not in BANK_UTIL_CHOICES:
            raise ValueError(f"bank utilization numerator must be one of {BANK_UTIL_CHOICES}")
        if self.op != "R":
            raise ValueError("generated sweep traffic is read-only")


@dataclass(frozen=True)
class SweepConfig:
    """The full sweep: 4 memory configs x 27 phases each."""
    base_seed: int = 1
    phase_duration: SimTime = PHASE_DURATION
    ranks_options: tuple[int, ...] = (1, 2)
    policies: tuple[str, ...] = ("open_adaptive", "closed_adaptive")
    densities: tuple[str, ...] = ("very_dense", "dense", "sparse")

    def memory_configs(self) -> list[tuple[str, int, str]]:
        out = []
        for ranks in self.ranks_options:
            for policy in self.policies:
                out.append((f"r{ranks}-{policy.split('_')[0]}", ranks, policy))
        return out

    def phases(self, device_cfg: DeviceConfig,
               densities: tuple[str, ...] | None = None) -> list[PhaseConfig]:
        """Ordered phase list; seeds are base_seed + global phase index."""
        phases = []
        index = 0
        for density in self.densities:
            lo, hi = itt_bounds(device_cfg, density)
            for util in BANK_UTIL_CHOICES:
                for n_seq in N_SEQ_CHOICES:
                    if densities is None or density in densities:
                        phases.append(PhaseConfig(
                            itt_min=lo, itt_max=hi, n_seq_bytes=n_seq,
                            bank_util_num=util, duration=self.phase_duration,
                            seed=self.base_seed + index,
                            label=f"{density}/u{util}-16/s{n_seq}",
                        ))
                    index += 1
        return phases


class TrafficGenerator:
    """Drives one simulation through a list of back-to-back phases."""

    def __init__(self, engine: Engine, controller: Controller,
                 phases: list[PhaseConfig]) -> None:
        if not phases:
            raise ValueError("at least one phase is required")
        self.engine = engine
        self.controller = controller
        self.geom = controller.dcfg
        self.phases = phases
        self._phase_idx = -1
        self._phase_end: SimTime = 0
        self._rng: Rng | None = None
        self._allowed_banks = 16
        self._next_addr = 0
        self._block_left = 0
        self._next_id = 0
        self._held: Request | None = None
        self._waiting_vacancy = False
        self.injected = 0
        self.generated = 0
        engine.subscribe(EventKind.REQUEST_ARRIVAL, self._on_arrival)
        controller.vacancy_listeners.append(self._on_vacancy)

    @property
    def end_at(self) -> SimTime:
        return sum(p.duration for p in self.phases)

    def start(self) -> None:
        self._begin_phase(0, at=0)

    def _begin_phase(self, idx: int, at: SimTime) -> None:
        self._phase_idx = idx
        phase = self.phases[idx]
        self._phase_end = sum(p.duration for p in self.phases[: idx + 1])
        self._rng = Rng(phase.seed)
        self._allowed_banks = phase.bank_util_num
        self._block_left = 0
        self._held = None
        self.engine.schedule_at(at, EventKind.REQUEST_ARRIVAL)

    def _draw_block(self) -> int:
        """Uniform n_seq-aligned block start whose bank is in the allowed set."""
        phase = self.phases[self._phase_idx]
        n_blocks = phase.addr_range // phase.n_seq_bytes
        while True:
            addr = self._rng.uniform(0, n_blocks - 1) * phase.n_seq_bytes
            _, _, bank, _, _ = decode(addr, self.geom)
            if bank < self._allowed_banks:
                return addr

    def _make_request(self, now: SimTime) -> Request:
        phase = self.phases[self._phase_idx]
        if self._block_left <= 0:
            self._next_addr = self._draw_block()
            self._block_left = phase.n_seq_bytes
        req = Request(self._next_id, now, phase.op, self._next_addr,
                      phase.req_size, self.geom)
        self._next_id += 1
        self._next_addr += phase.req_size
        self._block_left -= phase.req_size
        self.generated += 1
        return req

    def _on_arrival(self, ev: Event) -> None:
        now = self.engine.now
        req = self._make_request(now)
        if self.controller.enqueue(req):
            self.injected += 1
            self._schedule_next(now)
        else:
            self._held = req
            self._waiting_vacancy = True

    def _on_vacancy(self) -> None:
        if not self._waiting_vacancy or self._held is None:
            return
        now = self.engine.now
        req = self._held
        req.arrive_at = now
        if self.controller.enqueue(req):
            self._held = None
            self._waiting_vacancy = False
            self.injected += 1
            self._schedule_next(now)

    def _schedule_next(self, now: SimTime) -> None:
        phase = self.phases[self._phase_idx]
        gap = self._rng.uniform(phase.itt_min, phase.itt_max)
        at = now + gap
        if now >= self._phase_end or at >= self._phase_end:
            # Cross into the next phase: it starts fresh on its own boundary
            # (or immediately, when back-pressure pushed us past it).
            nxt = self._phase_idx + 1
            if nxt < len(self.phases):
                self._begin_phase(nxt, at=max(self._phase_end, now))
            return
        self.engine.schedule_at(at, EventKind.REQUEST_ARRIVAL)


# ----------------------------------------------------------------------
# Trace replay.

@dataclass(frozen=True)
class TraceRecord:
    at: SimTime
    op: str
    address: int
    size: int


def parse_trace(path: str | os.PathLike) -> list[TraceRecord]:
    """Parse a replay trace: ``<time_ps> <R|W> <hex_address> <size_bytes>``.

    Lines starting with '#' are comments. Records must be sorted by time.
    """
    records: list[TraceRecord] = []
    last_at = -1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise TraceFormatError(
                    f"{path}:{lineno}: expected 4 fields, got {len(parts)}"
                )
            try:
                at = int(parts[0])
                op = parts[1].upper()
                address = int(parts[2], 16)
                size = int(parts[3])
            except ValueError as exc:
                raise TraceFormatError(f"{path}:{lineno}: {exc}") from None
            if op not in ("R", "W"):
                raise TraceFormatError(f"{path}:{lineno}: op must be R or W, got {parts[1]!r}")
            if at < 0 or address < 0 or size <= 0:
                raise TraceFormatError(f"{path}:{lineno}: negative or zero field")
            if at < last_at:
                raise TraceFormatError(
                    f"{path}:{lineno}: timestamps not sorted ({at} after {last_at})"
                )
            last_at = at
            records.append(TraceRecord(at, op, address, size))
    return records


class TraceReplayer:
    """Feeds trace records to the controller, honoring back-pressure.

    Record timestamps are arrival times. When the controller rejects a
    request the replayer stalls: the rejected request is injected at the next
    vacancy and all later records shift by the accumulated stall, which is how
    back-pressure lengthens execution time without a CPU model.
    """

    def __init__(self, engine: Engine, controller: Controller,
                 records: list[TraceRecord]) -> None:
        self.engine = engine
        self.controller = controller
        self.geom = controller.dcfg
        self._pending: list[Request] = []
        self._cursor = 0
        self._stall: SimTime = 0
        self._next_id = 0
        self._records = records
        self.injected = 0
        engine.subscribe(EventKind.REQUEST_ARRIVAL, self._on_arrival)
        controller.vacancy_listeners.append(self._on_vacancy)

    def start(self) -> None:
        if self._records:
            self._schedule_cursor()

    def _split(self, rec: TraceRecord, at: SimTime) -> list[Request]:
        """Split a trace record into aligned burst-sized requests."""
        burst = self.geom.burst_bytes
        base = rec.address - (rec.address % burst)
        end = rec.address + rec.size
        out = []
        addr = base
        while addr < end:
            out.append(Request(self._next_id, at, rec.op, addr, burst, self.geom))
            self._next_id += 1
            addr += burst
        return out

    def _schedule_cursor(self) -> None:
        rec = self._records[self._cursor]
        at = max(rec.at + self._stall, self.engine.now)
        self.engine.schedule_at(at, EventKind.REQUEST_ARRIVAL)

    def _on_arrival(self, ev: Event) -> None:
        rec = self._records[self._cursor]
        self._pending = self._split(rec, self.engine.now)
        self._attempted_at = rec.at + self._stall
        self._drain()

    def _drain(self) -> None:
        while self._pending:
            req = self._pending[0]
            req.arrive_at = self.engine.now
            if not self.controller.enqueue(req):
                return  # wait for a vacancy
            self._pending.pop(0)
            self.injected += 1
        # Record fully injected; account any stall and move on.
        delay = self.engine.now - self._attempted_at
        if delay > 0:
            self._stall += delay
        self._cursor += 1
        if self._cursor < len(self._records):
            self._schedule_cursor()

    def _on_vacancy(self) -> None:
        if self._pending:
            self._drain()

    @property
    def done(self) -> bool:
        return self._cursor >= len(self._records) and not self._pending


def make_bursty_trace(seed: int, n_bursts: int = 8, burst_len: int = 150,
                      idle_gap_us: tuple[int, int] = (20, 60),
                      req_gap_ns: tuple[int, int] = (10, 120),
                      write_fraction: float = 0.2,
                      addr_range: int = ADDR_RANGE) -> list[TraceRecord]:
    """Synthesize a bursty compute/idle trace.

    Bursts of closely spaced requests alternate with idle gaps long enough to
    span multiple refresh intervals, the pattern that exercises the full
    power-down descent.
    """
    rng = Rng(seed)
    records: list[TraceRecord] = []
    t = 0
    for _ in range(n_bursts):
        for _ in range(burst_len):
            t += rng.uniform(req_gap_ns[0] * 1000, req_gap_ns[1] * 1000)
            addr = rng.uniform(0, addr_range // 64 - 1) * 64
            op = "W" if rng.uniform(0, 999) < int(write_fraction * 1000) else "R"
            records.append(TraceRecord(t, op, addr, 64))
        t += rng.uniform(idle_gap_us[0] * US, idle_gap_us[1] * US)
    return records


def write_trace(records: list[TraceRecord], path: str | os.PathLike,
                header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for rec in records:
            fh.write(f"{rec.at} {rec.op} 0x{rec.address:x} {rec.size}\n")
