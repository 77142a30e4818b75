"""Wiring and run orchestration: one Simulation owns one engine, one device,
one controller and one online energy meter, and runs exactly one workload.

Phase boundaries snapshot the controller statistics so reports can be sliced
per 250 us phase; residency and per-phase energy are derived afterwards from
the recorded state history and command trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from dlps.controller import Controller, ControllerConfig, ControllerStats
from dlps.device import Device, DeviceConfig, PowerState
from dlps.engine import Engine, SimTime
from dlps.power import (
    CommandRecord,
    EnergyBreakdown,
    EnergyMeter,
    accumulate_residency,
    energy_from_trace,
)
from dlps.workload import PhaseConfig, TraceRecord, TraceReplayer, TrafficGenerator


@dataclass
class PhaseWindow:
    t_start: SimTime
    t_end: SimTime
    phase: PhaseConfig | None
    stats_before: ControllerStats
    stats_after: ControllerStats


@dataclass
class RunResult:
    device_cfg: DeviceConfig
    label: str
    t_end: SimTime
    windows: list[PhaseWindow]
    records: list[CommandRecord]
    histories: list[list[tuple[SimTime, PowerState]]]
    online_energy: EnergyBreakdown
    stats: ControllerStats
    injected: int = 0
    generated: int = 0

    def residency(self, rank: int, t_start: SimTime = 0,
                  t_end: SimTime | None = None) -> dict[PowerState, SimTime]:
        end = self.t_end if t_end is None else t_end
        return accumulate_residency(self.histories[rank], end, t_start)

    def energy(self, t_start: SimTime = 0,
               t_end: SimTime | None = None) -> EnergyBreakdown:
        end = self.t_end if t_end is None else t_end
        return energy_from_trace(self.records, self.histories, self.device_cfg,
                                 t_start, end)


class Simulation:
    def __init__(self, device_cfg: DeviceConfig, controller_cfg: ControllerConfig,
                 label: str = "run") -> None:
        self.label = label
        self.engine = Engine()
        self.device = Device(device_cfg)
        self.controller = Controller(self.engine, self.device, controller_cfg)
        self.meter = EnergyMeter(device_cfg)
        self.controller.command_listeners.append(self.meter.on_command)
        self.device.state_listeners.append(self.meter.on_state_change)

    def _finish(self, t_end: SimTime, windows: list[PhaseWindow],
                injected: int = 0, generated: int = 0) -> RunResult:
        self.controller._tick_occupancy(self.engine.now)
        return RunResult(
            device_cfg=self.device.cfg,
            label=self.label,
            t_end=t_end,
            windows=windows,
            records=self.controller.trace,
            histories=[r.history for r in self.device.ranks],
            online_energy=self.meter.finalize(t_end),
            stats=self.controller.stats,
            injected=injected,
            generated=generated,
        )

    def run_phases(self, phases: list[PhaseConfig]) -> RunResult:
        """Run phases back to back in one simulation (warm queues carry over)."""
        gen = TrafficGenerator(self.engine, self.controller, phases)
        self.controller.start()
        gen.start()
        windows = []
        t = 0
        before = self.controller.stats.snapshot()
        for phase in phases:
            t_end = t + phase.duration
            # Stop 1 ps short so events on the boundary count into the next phase.
            self.engine.run_until(t_end - 1)
            after = self.controller.stats.snapshot()
            windows.append(PhaseWindow(t, t_end, phase, before, after))
            before = after
            t = t_end
        return self._finish(t, windows, injected=gen.injected, generated=gen.generated)

    def run_idle(self, duration: SimTime, open_banks: int = 0) -> RunResult:
        """Run with no traffic at all; optionally start from an active state."""
        if open_banks not in (0, 1):
            raise ValueError("idle runs support at most one pre-opened bank")
        self.controller.start()
        if open_banks:
            self.controller.preactivate(bank=0, row=0)
        before = self.controller.stats.snapshot()
        self.engine.run_until(duration - 1)
        after = self.controller.stats.snapshot()
        windows = [PhaseWindow(0, duration, None, before, after)]
        return self._finish(duration, windows)

    def run_trace(self, records: list[TraceRecord],
                  tail: SimTime | None = None) -> RunResult:
        """Replay a trace to completion and drain the pipeline.

        ``tail`` bounds the extra simulated time after the nominal end of the
        trace while queued work drains (defaults to a generous margin).
        """
        replayer = TraceReplayer(self.engine, self.controller, records)
        self.controller.start()
        replayer.start()
        before = self.controller.stats.snapshot()
        horizon = (records[-1].at if records else 0) + (tail or 100 * 1_000_000_000)
        step = 10 * 1_000_000
        t = 0
        while t < horizon:
            t = min(t + step, horizon)
            self.engine.run_until(t)
            if replayer.done and self.controller.queued() == 0:
                break
        t_end = self.engine.now + 1
        after = self.controller.stats.snapshot()
        windows = [PhaseWindow(0, t_end, None, before, after)]
        result = self._finish(t_end, windows, injected=replayer.injected,
                              generated=replayer.injected)
        return result
