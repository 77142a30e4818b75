"""dlps: an event-driven DRAM low-power simulator.

Models a DDR4-style memory subsystem at command granularity: bank and rank
state, JEDEC timing constraints, controller scheduling (FR-FCFS with adaptive
page policies), the staggered walk through the power-down modes (active
power-down, precharge power-down, self-refresh), and a current-parameterized
energy model. Ships with a synthetic traffic sweep harness and a plain-text
trace replay front end.
"""

from dlps.engine import Engine, Event, EventKind, Rng, SimTime
from dlps.device import (
    Command,
    CmdKind,
    Device,
    DeviceConfig,
    PowerState,
    ProtocolError,
    compute_tpde,
)
from dlps.controller import Controller, ControllerConfig, PagePolicy, Request, decode
from dlps.power import (
    CommandRecord,
    DimmConfig,
    EnergyBreakdown,
    accumulate_residency,
    background_energy,
    background_power,
    event_energy,
    export_drampower_trace,
    selfrefresh_power_system,
    standby_power_system,
)
from dlps.workload import PhaseConfig, SweepConfig, TraceRecord, itt_bounds, parse_trace
from dlps.sim import Simulation

__version__ = "0.1.0"
