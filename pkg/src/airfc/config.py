"""Experiment configuration: schema, validation, presets, run manifest.

Config files are JSON. Every key has a default; the optional top-level
`"defaults": "table1"` fills in the full-scale reference values (N=49 arrays,
28 GHz, 300 MHz bandwidth, 5 groups of 12 relays) before user values are
applied on top. Unknown keys anywhere are rejected, and every range check
names the offending field.
"""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass
from datetime import datetime, timezone

from .channel import (DEFAULT_PATHLOSS_TABLE, LOS_STATES, LinkParams,
                      PathlossTable, default_links)
from .errors import ConfigError, InvalidArgument
from .evaluate import GridPoint, SweepSettings
from .serialization import canonical_json, sha256_hex
from .solver import REGULARIZER_MODES, AoConfig
from .system import NoiseModel, PowerBudget, thermal_noise_variance

DEFAULT_CONFIG = {
    "seed": 1234,
    "output_dir": "airfc-out",
    "workers": 1,
    "make_plots": True,
    "system": {"n_streams": 8, "n_tx": None, "n_rx": None},
    "channel": {
        "f_c_hz": 28e9,
        "d_max_m": 200.0,
        "heights_m": [5.0, 5.0, 1.5],
        "rician_kappa": 1.0,
        "direct_link": False,
        "relay_relay_los": "probabilistic",
        "pathloss_overrides": {},
    },
    "noise": {
        "psd_dbm_hz": -174.0,
        "bandwidth_hz": 3e8,
        "noise_figure_db": 0.0,
    },
    "power": {"p_max_tx_w": None, "p_relay_w": 1.0},
    "topology": {"n_groups": 2, "relays_per_group": 8},
    "ao": {
        "max_iters": 100,
        "rel_tolerance": 1e-6,
        "bisection_tolerance": 1e-8,
        "bisection_max_steps": 100,
        "init_gain_rho": 0.01,
        "regularizer_mode": "noise-aware",
        "fixed_epsilon": 1e-9,
    },
    "task": {
        "n_classes": 4,
        "samples": 2000,
        "spread": 0.3,
        "seed": 7,
        "test_fraction": 0.25,
        "n_noise_draws": 1,
        "weights_file": None,
    },
    "sweep": {
        "n_groups": [1, 2, 3],
        "relays_per_group": [4, 8, 16],
        "p_relay_w": [1.0],
        "d_max_m": [200.0],
        "direct_link": [False],
        "trials": 20,
    },
}

# Full-scale reference values; the quick-start configs override n_streams
# down to desk scale.
TABLE1_PRESET = {
    "system": {"n_streams": 49},
    "channel": {
        "f_c_hz": 28e9,
        "d_max_m": 200.0,
        "heights_m": [5.0, 5.0, 1.5],
        "rician_kappa": 1.0,
    },
    "noise": {"psd_dbm_hz": -174.0, "bandwidth_hz": 3e8},
    "power": {"p_max_tx_w": 49.0, "p_relay_w": 1.0},
    "topology": {"n_groups": 5, "relays_per_group": 12},
    "sweep": {"trials": 20},
}

PRESETS = {"table1": TABLE1_PRESET}

# Keys that never change computed results; excluded from the semantic hash.
_NON_SEMANTIC_KEYS = ("output_dir", "workers", "make_plots")


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _expect_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        _fail(path, "must be true or false")
    return value


def _expect_int(value, path: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, "must be an integer")
    if minimum is not None and value < minimum:
        _fail(path, f"must be >= {minimum}")
    return value


def _expect_float(value, path: str, minimum: float | None = None,
                  exclusive_minimum: float | None = None,
                  exclusive_maximum: float | None = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, "must be a number")
    value = float(value)
    if value != value:
        _fail(path, "must not be NaN")
    if minimum is not None and value < minimum:
        _fail(path, f"must be >= {minimum}")
    if exclusive_minimum is not None and value <= exclusive_minimum:
        _fail(path, f"must be > {exclusive_minimum}")
    if exclusive_maximum is not None and value >= exclusive_maximum:
        _fail(path, f"must be < {exclusive_maximum}")
    return value


def _expect_str(value, path: str, choices=None) -> str:
    if not isinstance(value, str):
        _fail(path, "must be a string")
    if choices is not None and value not in choices:
        _fail(path, f"must be one of {sorted(choices)}")
    return value


def _merge(base: dict, override: dict, path: str = "") -> dict:
    """Recursive dict merge; override wins; unknown override keys rejected."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}{key}"
        if key not in base:
            _fail(here, "unknown key")
        if isinstance(base[key], dict) and key != "pathloss_overrides":
            if not isinstance(value, dict):
                _fail(here, "must be an object")
            merged[key] = _merge(base[key], value, f"{here}.")
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _validate_pathloss_overrides(overrides, path: str) -> None:
    if not isinstance(overrides, dict):
        _fail(path, "must be an object")
    valid = {f.name: f for f in dataclasses.fields(PathlossTable)}
    defaults = DEFAULT_PATHLOSS_TABLE
    for key, value in overrides.items():
        here = f"{path}.{key}"
        if key not in valid:
            _fail(here, "unknown pathloss table field")
        current = getattr(defaults, key)
        if isinstance(current, tuple):
            if (not isinstance(value, (list, tuple)) or len(value) != 3):
                _fail(here, "must be a list of 3 numbers")
            for i, entry in enumerate(value):
                _expect_float(entry, f"{here}[{i}]")
        else:
            _expect_float(value, here)


def _validate(data: dict) -> None:
    _expect_int(data["seed"], "seed", minimum=0)
    _expect_str(data["output_dir"], "output_dir")
    if not data["output_dir"]:
        _fail("output_dir", "must not be empty")
    _expect_int(data["workers"], "workers", minimum=1)
    _expect_bool(data["make_plots"], "make_plots")

    sys_cfg = data["system"]
    _expect_int(sys_cfg["n_streams"], "system.n_streams", minimum=1)
    for key in ("n_tx", "n_rx"):
        if sys_cfg[key] is not None:
            _expect_int(sys_cfg[key], f"system.{key}", minimum=1)

    ch = data["channel"]
    _expect_float(ch["f_c_hz"], "channel.f_c_hz", exclusive_minimum=0.0)
    _expect_float(ch["d_max_m"], "channel.d_max_m", exclusive_minimum=0.0)
    heights = ch["heights_m"]
    if not isinstance(heights, (list, tuple)) or len(heights) != 3:
        _fail("channel.heights_m", "must be a list of 3 numbers (bs, rx, relay)")
    for i, h in enumerate(heights):
        _expect_float(h, f"channel.heights_m[{i}]", minimum=0.0)
    _expect_float(ch["rician_kappa"], "channel.rician_kappa", minimum=0.0)
    _expect_bool(ch["direct_link"], "channel.direct_link")
    _expect_str(ch["relay_relay_los"], "channel.relay_relay_los",
                choices=set(LOS_STATES))
    _validate_pathloss_overrides(ch["pathloss_overrides"],
                                 "channel.pathloss_overrides")

    noise = data["noise"]
    _expect_float(noise["psd_dbm_hz"], "noise.psd_dbm_hz")
    _expect_float(noise["bandwidth_hz"], "noise.bandwidth_hz",
                  exclusive_minimum=0.0)
    _expect_float(noise["noise_figure_db"], "noise.noise_figure_db", minimum=0.0)

    power = data["power"]
    if power["p_max_tx_w"] is not None:
        _expect_float(power["p_max_tx_w"], "power.p_max_tx_w",
                      exclusive_minimum=0.0)
    _expect_float(power["p_relay_w"], "power.p_relay_w", exclusive_minimum=0.0)

    topo = data["topology"]
    _expect_int(topo["n_groups"], "topology.n_groups", minimum=1)
    _expect_int(topo["relays_per_group"], "topology.relays_per_group", minimum=1)

    ao = data["ao"]
    _expect_int(ao["max_iters"], "ao.max_iters", minimum=1)
    _expect_float(ao["rel_tolerance"], "ao.rel_tolerance", exclusive_minimum=0.0)
    _expect_float(ao["bisection_tolerance"], "ao.bisection_tolerance",
                  exclusive_minimum=0.0)
    _expect_int(ao["bisection_max_steps"], "ao.bisection_max_steps", minimum=1)
    _expect_float(ao["init_gain_rho"], "ao.init_gain_rho", exclusive_minimum=0.0)
    _expect_str(ao["regularizer_mode"], "ao.regularizer_mode",
                choices=set(REGULARIZER_MODES))
    _expect_float(ao["fixed_epsilon"], "ao.fixed_epsilon", minimum=0.0)

    task = data["task"]
    _expect_int(task["n_classes"], "task.n_classes", minimum=2)
    _expect_int(task["samples"], "task.samples", minimum=8)
    _expect_float(task["spread"], "task.spread", exclusive_minimum=0.0)
    _expect_int(task["seed"], "task.seed", minimum=0)
    _expect_float(task["test_fraction"], "task.test_fraction",
                  exclusive_minimum=0.0, exclusive_maximum=1.0)
    _expect_int(task["n_noise_draws"], "task.n_noise_draws", minimum=1)
    if task["weights_file"] is not None:
        _expect_str(task["weights_file"], "task.weights_file")
    if task["n_classes"] > sys_cfg["n_streams"]:
        _fail("task.n_classes", "must not exceed system.n_streams")

    sweep = data["sweep"]
    list_specs = [
        ("n_groups", lambda v, p: _expect_int(v, p, minimum=1)),
        ("relays_per_group", lambda v, p: _expect_int(v, p, minimum=1)),
        ("p_relay_w", lambda v, p: _expect_float(v, p, exclusive_minimum=0.0)),
        ("d_max_m", lambda v, p: _expect_float(v, p, exclusive_minimum=0.0)),
        ("direct_link", _expect_bool),
    ]
    for key, check in list_specs:
        values = sweep[key]
        path = f"sweep.{key}"
        if not isinstance(values, list) or not values:
            _fail(path, "must be a non-empty list")
        for i, v in enumerate(values):
            check(v, f"{path}[{i}]")
    _expect_int(sweep["trials"], "sweep.trials", minimum=1)


@dataclass
class ExperimentConfig:
    """Validated, fully merged experiment description."""

    data: dict

    @classmethod
    def from_dict(cls, raw: dict, overrides: dict | None = None
                  ) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        raw = dict(raw)
        preset_name = raw.pop("defaults", None)
        base = copy.deepcopy(DEFAULT_CONFIG)
        if preset_name is not None:
            if preset_name not in PRESETS:
                _fail("defaults", f"unknown preset {preset_name!r}; "
                      f"available: {sorted(PRESETS)}")
            base = _merge(base, PRESETS[preset_name])
        data = _merge(base, raw)
        for key, value in (overrides or {}).items():
            if value is not None:
                data[key] = value
        _validate(data)
        return cls(data=data)

    @classmethod
    def from_file(cls, path: str, overrides: dict | None = None
                  ) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw, overrides)

    # Plain accessors.
    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def output_dir(self) -> str:
        return self.data["output_dir"]

    @property
    def workers(self) -> int:
        return self.data["workers"]

    @property
    def make_plots(self) -> bool:
        return self.data["make_plots"]

    @property
    def n_streams(self) -> int:
        return self.data["system"]["n_streams"]

    @property
    def n_tx(self) -> int:
        return self.data["system"]["n_tx"] or self.n_streams

    @property
    def n_rx(self) -> int:
        return self.data["system"]["n_rx"] or self.n_streams

    @property
    def p_max_tx(self) -> float:
        # Default budget scales with the stream count, mirroring the
        # full-scale reference table (P_max numerically equal to N watts).
        configured = self.data["power"]["p_max_tx_w"]
        return float(configured) if configured is not None else float(
            self.n_streams)

    # Derived model objects.
    def pathloss_table(self) -> PathlossTable:
        overrides = self.data["channel"]["pathloss_overrides"]
        fixed = {key: tuple(v) if isinstance(v, list) else float(v)
                 for key, v in overrides.items()}
        return dataclasses.replace(DEFAULT_PATHLOSS_TABLE, **fixed)

    def links(self) -> dict[str, LinkParams]:
        ch = self.data["channel"]
        links = default_links(rician_kappa=float(ch["rician_kappa"]))
        if ch["relay_relay_los"] != "probabilistic":
            links["relay-relay"] = dataclasses.replace(
                links["relay-relay"], los_state=ch["relay_relay_los"])
        return links

    def noise_variance(self) -> float:
        noise = self.data["noise"]
        return thermal_noise_variance(noise["bandwidth_hz"],
                                      noise["psd_dbm_hz"],
                                      noise["noise_figure_db"])

    def noise_model(self, n_groups: int) -> NoiseModel:
        return NoiseModel.uniform(self.noise_variance(), n_groups)

    def budget(self, group_sizes) -> PowerBudget:
        return PowerBudget.uniform(self.p_max_tx,
                                   self.data["power"]["p_relay_w"],
                                   tuple(group_sizes))

    def ao_config(self) -> AoConfig:
        ao = self.data["ao"]
        try:
            return AoConfig(
                max_iters=ao["max_iters"],
                rel_tolerance=ao["rel_tolerance"],
                bisection_tolerance=ao["bisection_tolerance"],
                bisection_max_steps=ao["bisection_max_steps"],
                init_gain_rho=ao["init_gain_rho"],
                regularizer_mode=ao["regularizer_mode"],
                fixed_epsilon=ao["fixed_epsilon"],
            )
        except InvalidArgument as exc:
            raise ConfigError(f"ao: {exc}") from exc

    def heights(self) -> tuple[float, float, float]:
        return tuple(float(h) for h in self.data["channel"]["heights_m"])

    def sweep_settings(self) -> SweepSettings:
        ch = self.data["channel"]
        return SweepSettings(
            n_tx=self.n_tx,
            n_rx=self.n_rx,
            f_c_hz=float(ch["f_c_hz"]),
            heights_m=self.heights(),
            rician_kappa=float(ch["rician_kappa"]),
            relay_relay_los=ch["relay_relay_los"],
            noise_variance_w=self.noise_variance(),
            p_max_tx_w=self.p_max_tx,
            ao=self.ao_config(),
            n_noise_draws=self.data["task"]["n_noise_draws"],
            pathloss_table=self.pathloss_table(),
        )

    def sweep_points(self) -> list[GridPoint]:
        """Grid in listed order: L outermost, direct-link flag innermost."""
        sweep = self.data["sweep"]
        points = []
        for n_groups in sweep["n_groups"]:
            for k in sweep["relays_per_group"]:
                for p in sweep["p_relay_w"]:
                    for d in sweep["d_max_m"]:
                        for direct in sweep["direct_link"]:
                            points.append(GridPoint(
                                n_groups=n_groups, relays_per_group=k,
                                p_relay_w=float(p), d_max_m=float(d),
                                direct_link=direct))
        return points

    def semantic_hash(self) -> str:
        semantic = {k: v for k, v in self.data.items()
                    if k not in _NON_SEMANTIC_KEYS}
        return sha256_hex(canonical_json(semantic).encode("utf-8"))


@dataclass
class RunManifest:
    """Provenance record: everything needed to reproduce a run bit-for-bit."""

    command: str
    config_hash: str
    tool_version: str
    base_seed: int
    created_utc: str
    outputs: list[dict]

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "base_seed": self.base_seed,
            "created_utc": self.created_utc,
            "outputs": self.outputs,
        }


def build_manifest(command: str, config: ExperimentConfig,
                   output_files: list[str], out_dir: str) -> RunManifest:
    from . import __version__
    from .serialization import sha256_file
    import os

    outputs = []
    for path in sorted(output_files):
        outputs.append({
            "path": os.path.relpath(path, out_dir),
            "sha256": sha256_file(path),
            "bytes": os.path.getsize(path),
        })
    return RunManifest(
        command=command,
        config_hash=config.semantic_hash(),
        tool_version=__version__,
        base_seed=config.seed,
        created_utc=datetime.now(timezone.utc).isoformat(),
        outputs=outputs,
    )
