"""Flat key/value run configuration.

The file format is ``section.key = value`` lines with ``#`` comments, e.g.::

    device.preset = ddr4-2400-8gb-x4
    device.ranks = 2
    controller.page_policy = open_adaptive
    controller.powerdown = on
    workload.kind = sweep
    sweep.base_seed = 7

Keys are typed; unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from dlps.controller import ControllerConfig, PagePolicy
from dlps.device import DeviceConfig, make_config
from dlps.engine import MS, SimTime, US
from dlps.workload import ADDR_RANGE, PHASE_DURATION


class ConfigError(ValueError):
    """Bad run configuration (unknown key, bad value, missing input)."""


_DEVICE_INT_KEYS = {
    "tCK", "tCCD", "tRP", "tRAS", "tRCD", "tRL", "tWL", "tBURST", "tRTP",
    "tWR", "tRRD", "tRFC", "tREFI", "tXP", "tXS", "tCKE",
}
_DEVICE_FLOAT_KEYS = {
    "IDD0", "IPP0", "IDD2N", "IDD3N", "IPP3N", "IDD2P", "IDD3P", "IDD5",
    "IDD6", "IDD4R", "IDD4W", "IPP2N", "IPP3P", "IPP5", "IPP6", "VDD", "VPP",
}
_DEVICE_GEOM_KEYS = {
    "ranks", "banks_per_rank", "rows_per_bank", "row_buffer_bytes", "burst_bytes",
}


@dataclass
class RunConfig:
    device: DeviceConfig
    controller: ControllerConfig
    workload_kind: str = "idle"            # sweep | phase | trace | idle
    seed: int = 1
    out_dir: str = "out"
    # phase workload
    itt_min_ps: SimTime | None = None
    itt_max_ps: SimTime | None = None
    n_seq_bytes: int = 64
    bank_util: tuple[int, int] = (16, 16)
    duration_ps: SimTime = PHASE_DURATION
    addr_range_bytes: int = ADDR_RANGE
    # trace workload
    trace_path: str | None = None
    # idle workload
    idle_duration_ps: SimTime = 10 * MS
    idle_open_banks: int = 0
    # sweep
    sweep_phase_duration_ps: SimTime = PHASE_DURATION


def _parse_bool(value: str, key: str) -> bool:
    v = value.lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected on/off, got {value!r}")


def _parse_fraction(value: str, key: str) -> tuple[int, int]:
    try:
        if "/" in value:
            num, den = value.split("/")
            return int(num), int(den)
        return int(value), 16
    except ValueError:
        raise ConfigError(f"{key}: expected a fraction like 8/16, got {value!r}") from None


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def build_run_config(pairs: dict[str, str]) -> RunConfig:
    preset = pairs.pop("device.preset", "ddr4-2400-8gb-x4")
    dev_overrides: dict = {}
    ctl = ControllerConfig()
    rc_kwargs: dict = {}

    for key, value in pairs.items():
        try:
            section, name = key.split(".", 1)
        except ValueError:
            raise ConfigError(f"key {key!r} is missing its section prefix") from None
        if section == "device":
            base = name[:-3] if name.endswith("_ps") else name
            base = base[:-3] if base.endswith("_mA") else base
            base = base[:-2] if base.endswith("_V") else base
            if base in _DEVICE_INT_KEYS or base in _DEVICE_GEOM_KEYS:
                dev_overrides[base] = int(value)
            elif base in _DEVICE_FLOAT_KEYS:
                dev_overrides[base] = float(value)
            else:
                raise ConfigError(f"unknown device key {key!r}")
        elif section == "controller":
            if name == "read_queue_depth":
                ctl.read_queue_depth = int(value)
            elif name == "write_queue_depth":
                ctl.write_queue_depth = int(value)
            elif name == "page_policy":
                try:
                    ctl.page_policy = PagePolicy(value)
                except ValueError:
                    raise ConfigError(
                        f"controller.page_policy must be open_adaptive or "
                        f"closed_adaptive, got {value!r}") from None
            elif name == "powerdown":
                ctl.powerdown_enabled = _parse_bool(value, key)
            elif name == "address_map":
                ctl.address_map = value
            else:
                raise ConfigError(f"unknown controller key {key!r}")
        elif section == "workload":
            if name == "kind":
                if value not in ("sweep", "phase", "trace", "idle"):
                    raise ConfigError(f"workload.kind must be sweep/phase/trace/idle, got {value!r}")
                rc_kwargs["workload_kind"] = value
            elif name == "itt_min_ps":
                rc_kwargs["itt_min_ps"] = int(value)
            elif name == "itt_max_ps":
                rc_kwargs["itt_max_ps"] = int(value)
            elif name == "n_seq_bytes":
                rc_kwargs["n_seq_bytes"] = int(value)
            elif name == "bank_util":
                rc_kwargs["bank_util"] = _parse_fraction(value, key)
            elif name == "duration_ps":
                rc_kwargs["duration_ps"] = int(value)
            elif name == "addr_range_bytes":
                rc_kwargs["addr_range_bytes"] = int(value)
            elif name == "trace":
                rc_kwargs["trace_path"] = value
            elif name == "idle_duration_ps":
                rc_kwargs["idle_duration_ps"] = int(value)
            elif name == "idle_open_banks":
                rc_kwargs["idle_open_banks"] = int(value)
            else:
                raise ConfigError(f"unknown workload key {key!r}")
        elif section == "sweep":
            if name == "base_seed":
                rc_kwargs["seed"] = int(value)
            elif name == "phase_duration_ps":
                rc_kwargs["sweep_phase_duration_ps"] = int(value)
            else:
                raise ConfigError(f"unknown sweep key {key!r}")
        elif section == "run":
            if name == "seed":
                rc_kwargs["seed"] = int(value)
            elif name == "out":
                rc_kwargs["out_dir"] = value
            else:
                raise ConfigError(f"unknown run key {key!r}")
        else:
            raise ConfigError(f"unknown config section {section!r} in key {key!r}")

    try:
        device = make_config(preset, **dev_overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rc = RunConfig(device=device, controller=ctl, **rc_kwargs)
    if rc.workload_kind == "trace":
        if not rc.trace_path:
            raise ConfigError("workload.kind=trace requires workload.trace=PATH")
        if not os.path.exists(rc.trace_path):
            raise ConfigError(f"trace file not found: {rc.trace_path}")
    return rc


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return build_run_config({})
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return build_run_config(parse_config_text(text, origin=path))
