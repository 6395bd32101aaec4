"""Static network description: link geometry, radio, interferer field, targets.

All quantities are stored in SI units (metres, watts, seconds, hertz). Unit
strings such as ``"27 dBm"`` or ``"13.9 ms"`` are only understood by the
config loader.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DEFAULT_ROAD_LENGTH = 20_000.0


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants.

    ``errors`` holds one ``(field, message)`` pair per violation.
    """

    def __init__(self, errors: Sequence[tuple[str, str]]):
        self.errors = list(errors)
        lines = "\n".join(f"  {name}: {msg}" for name, msg in self.errors)
        super().__init__(f"invalid configuration:\n{lines}")


def dbm_to_watts(p_dbm: float) -> float:
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def watts_to_dbm(p_watts: float) -> float:
    return 10.0 * math.log10(p_watts) + 30.0


@dataclass(frozen=True)
class LinkGeometry:
    tx_positions: tuple[float, ...]
    rx_positions: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "tx_positions", tuple(float(x) for x in self.tx_positions))
        object.__setattr__(self, "rx_positions", tuple(float(x) for x in self.rx_positions))

    @property
    def M(self) -> int:
        return len(self.tx_positions)

    @cached_property
    def distances(self) -> np.ndarray:
        """Read-only M x M matrix, entry (i, j) = |x_i^t - x_j^r|."""
        d = distance_matrix(self)
        d.setflags(write=False)
        return d

    @classmethod
    def two_link(cls, d11: float, d22: float, d12: float) -> "LinkGeometry":
        """Convoy layout for two links with link 1's receiver at the origin.

        Link 1 transmits from ``-d11``; link 2 sits behind it so that its
        receiver is ``d12`` from link 1's transmitter. In one dimension this
        fixes d21 = d11 + d12 + d22.
        """
        tx1 = -d11
        rx2 = tx1 - d12
        tx2 = rx2 - d22
        return cls((tx1, tx2), (0.0, rx2))


def distance_matrix(geometry: LinkGeometry) -> np.ndarray:
    tx = np.asarray(geometry.tx_positions, dtype=float)
    rx = np.asarray(geometry.rx_positions, dtype=float)
    return np.abs(tx[:, None] - rx[None, :])


@dataclass(frozen=True)
class InterfererField:
    density: float
    interferer_power_watts: float
    road_length: float = DEFAULT_ROAD_LENGTH


@dataclass(frozen=True)
class RadioParams:
    path_loss_exponent: float
    bandwidth_hz: float
    noise_psd_watts_per_hz: float
    packet_bits: int


@dataclass(frozen=True)
class DelayRequirements:
    targets: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(float(t) for t in self.targets))


@dataclass(frozen=True)
class PowerAllocation:
    tx_powers_watts: tuple[float, ...]
    p_max_watts: float

    def __post_init__(self):
        powers = tuple(float(p) for p in self.tx_powers_watts)
        object.__setattr__(self, "tx_powers_watts", powers)
        bad = [p for p in powers if not 0.0 <= p <= self.p_max_watts]
        if bad:
            raise ValueError(
                f"transmit powers {bad} outside the box [0, {self.p_max_watts}] W"
            )

    @property
    def array(self) -> np.ndarray:
        return np.array(self.tx_powers_watts)

    @classmethod
    def uniform(cls, p: float, M: int, p_max: float) -> "PowerAllocation":
        return cls((p,) * M, p_max)


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: LinkGeometry
    radio: RadioParams
    field: InterfererField
    requirements: DelayRequirements
    p_max_watts: float
    # optional allocation used by single-shot evaluation
    tx_powers_watts: tuple[float, ...] | None = None

    @property
    def M(self) -> int:
        return self.geometry.M

    @property
    def distances(self) -> np.ndarray:
        return self.geometry.distances

    def full_power(self) -> PowerAllocation:
        return PowerAllocation.uniform(self.p_max_watts, self.M, self.p_max_watts)

    def allocation(self) -> PowerAllocation:
        if self.tx_powers_watts is None:
            return self.full_power()
        return PowerAllocation(self.tx_powers_watts, self.p_max_watts)

    def with_density(self, density: float) -> "ScenarioConfig":
        return replace(self, field=replace(self.field, density=density))

    def with_targets(self, targets: Sequence[float]) -> "ScenarioConfig":
        return replace(self, requirements=DelayRequirements(tuple(targets)))

    def with_d12(self, d12: float) -> "ScenarioConfig":
        """Rebuild a two-link convoy layout with a new d12 (d11, d22 kept)."""
        if self.M != 2:
            raise ConfigError([("scenario.d12", "d12 sweeps need exactly two links")])
        d = self.distances
        return replace(self, geometry=LinkGeometry.two_link(d[0, 0], d[1, 1], d12))

    def scaled_powers(self, k: float) -> "ScenarioConfig":
        """Multiply P_max, any stored allocation and P_c by ``k``."""
        tx = None if self.tx_powers_watts is None else tuple(k * p for p in self.tx_powers_watts)
        fld = replace(self.field, interferer_power_watts=k * self.field.interferer_power_watts)
        return replace(self, field=fld, p_max_watts=k * self.p_max_watts, tx_powers_watts=tx)


def validate(config: ScenarioConfig) -> ScenarioConfig:
    """Check every invariant of ``config`` and return it unchanged.

    All violations are collected before raising :class:`ConfigError`, so a
    broken file is reported in one pass.
    """
    errors: list[tuple[str, str]] = []
    geo = config.geometry
    if len(geo.tx_positions) != len(geo.rx_positions):
        errors.append(("scenario.rx_positions",
                       f"{len(geo.rx_positions)} receivers for {len(geo.tx_positions)} transmitters"))
    M = len(geo.tx_positions)
    if M < 2:
        errors.append(("scenario", f"beta undefined for M = {M} (need at least two links)"))
    positions = geo.tx_positions + geo.rx_positions
    if not all(math.isfinite(x) for x in positions):
        errors.append(("scenario", "positions must be finite"))
    elif len(geo.tx_positions) == len(geo.rx_positions) and M >= 1:
        d = distance_matrix(geo)
        for i in range(M):
            if d[i, i] <= 0.0:
                errors.append((f"scenario.d{i + 1}{i + 1}",
                               f"coincident transceiver on link {i + 1} (d = 0)"))
            for j in range(M):
                if i != j and d[i, j] <= 0.0:
                    errors.append((f"scenario.d{i + 1}{j + 1}",
                                   f"transmitter {i + 1} coincides with receiver {j + 1}"))

    radio = config.radio
    if not radio.path_loss_exponent > 1.0:
        errors.append(("radio.path_loss_exponent",
                       f"alpha = {radio.path_loss_exponent}; need alpha > 1 for the interference integral"))
    if not radio.bandwidth_hz > 0.0:
        errors.append(("radio.bandwidth", "bandwidth must be positive"))
    if not radio.noise_psd_watts_per_hz > 0.0:
        errors.append(("radio.noise_psd", "noise PSD must be positive"))
    if not (isinstance(radio.packet_bits, (int, np.integer)) and radio.packet_bits > 0):
        errors.append(("radio.packet_bits", "packet size must be a positive integer"))

    fld = config.field
    if not (math.isfinite(fld.density) and fld.density >= 0.0):
        errors.append(("interferer.density", "density must be finite and >= 0"))
    if not fld.interferer_power_watts > 0.0:
        errors.append(("interferer.power", "interferer power must be positive"))
    if not fld.road_length > 0.0:
        errors.append(("interferer.road_length", "road length must be positive"))
    elif positions and all(math.isfinite(x) for x in positions):
        reach = 2.0 * max(abs(x) for x in positions)
        if fld.road_length < reach:
            errors.append(("interferer.road_length",
                           f"road window {fld.road_length} m too small, links need {reach} m"))

    targets = config.requirements.targets
    if len(targets) != M:
        errors.append(("requirements.delay_targets", f"{len(targets)} targets for {M} links"))
    if any(not t > 0.0 for t in targets):
        errors.append(("requirements.delay_targets", "delay targets must be > 0"))

    if not config.p_max_watts > 0.0:
        errors.append(("scenario.p_max", "P_max must be positive"))
    if config.tx_powers_watts is not None:
        if len(config.tx_powers_watts) != M:
            errors.append(("scenario.tx_powers", f"{len(config.tx_powers_watts)} powers for {M} links"))
        if any(not 0.0 <= p <= config.p_max_watts for p in config.tx_powers_watts):
            errors.append(("scenario.tx_powers", "transmit powers must lie in [0, P_max]"))

    if errors:
        raise ConfigError(errors)
    config.geometry.distances  # warm the cache
    return config


# ---------------------------------------------------------------------------
# config file loading

_UNIT_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*([A-Za-z/]*)\s*$")

_POWER_UNITS = {"w": 1.0, "mw": 1e-3, "uw": 1e-6}
_PSD_UNITS = {"w/hz": 1.0, "mw/hz": 1e-3}
_TIME_UNITS = {"": 1.0, "s": 1.0, "ms": 1e-3, "us": 1e-6}
_FREQ_UNITS = {"": 1.0, "hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}


def _split(value: Any, key: str) -> tuple[float, str]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value), ""
    m = _UNIT_RE.match(str(value))
    if not m:
        raise ConfigError([(key, f"cannot parse {value!r}")])
    return float(m.group(1)), m.group(2).lower()


def parse_power(value: Any, key: str) -> float:
    """Power in watts from ``"27 dBm"``, ``"0.5 W"`` or ``"500 mW"``.

    Bare numbers are rejected: the unit must be explicit.
    """
    x, unit = _split(value, key)
    if unit == "dbm":
        return dbm_to_watts(x)
    if unit in _POWER_UNITS:
        return x * _POWER_UNITS[unit]
    raise ConfigError([(key, f"power {value!r} needs a unit suffix (dBm, W, mW)")])


def parse_psd(value: Any, key: str) -> float:
    x, unit = _split(value, key)
    if unit == "dbm/hz":
        return dbm_to_watts(x)
    if unit in _PSD_UNITS:
        return x * _PSD_UNITS[unit]
    raise ConfigError([(key, f"noise PSD {value!r} needs a unit suffix (dBm/Hz, W/Hz)")])


def parse_time(value: Any, key: str) -> float:
    """Seconds; bare numbers are taken as seconds."""
    if isinstance(value, str) and value.strip().lower() == "inf":
        return math.inf
    x, unit = _split(value, key)
    if unit not in _TIME_UNITS:
        raise ConfigError([(key, f"unknown time unit in {value!r}")])
    return x * _TIME_UNITS[unit]


def parse_frequency(value: Any, key: str) -> float:
    x, unit = _split(value, key)
    if unit not in _FREQ_UNITS:
        raise ConfigError([(key, f"unknown frequency unit in {value!r}")])
    return x * _FREQ_UNITS[unit]


def _geometry_from(section: Mapping[str, Any]) -> LinkGeometry:
    if "tx_positions" in section or "rx_positions" in section:
        return LinkGeometry(tuple(section.get("tx_positions", ())),
                            tuple(section.get("rx_positions", ())))
    keys = ("d11", "d22", "d12")
    missing = [k for k in keys if k not in section]
    if missing:
        raise ConfigError([("scenario", "give tx_positions/rx_positions or d11, d22, d12 "
                                        f"(missing {', '.join(missing)})")])
    geo = LinkGeometry.two_link(*(float(section[k]) for k in keys))
    if "d21" in section:
        d21 = float(section["d21"])
        if not math.isclose(d21, geo.distances[1, 0], rel_tol=1e-9):
            raise ConfigError([("scenario.d21",
                                f"d21 = {d21} m is not realisable on a line with these distances "
                                f"(convoy layout gives {geo.distances[1, 0]:g} m)")])
    return geo


def config_from_dict(doc: Mapping[str, Any]) -> ScenarioConfig:
    """Build and validate a :class:`ScenarioConfig` from a parsed document."""
    try:
        scen, radio, intf, req = (doc[k] for k in ("scenario", "radio", "interferer", "requirements"))
    except KeyError as exc:
        raise ConfigError([(str(exc.args[0]), "missing section")]) from None

    geometry = _geometry_from(scen)
    p_max = parse_power(scen.get("p_max", "27 dBm"), "scenario.p_max")
    tx_powers = None
    if "tx_powers" in scen:
        tx_powers = tuple(parse_power(p, "scenario.tx_powers") for p in scen["tx_powers"])

    radio_params = RadioParams(
        path_loss_exponent=float(radio["path_loss_exponent"]),
        bandwidth_hz=parse_frequency(radio["bandwidth"], "radio.bandwidth"),
        noise_psd_watts_per_hz=parse_psd(radio["noise_psd"], "radio.noise_psd"),
        packet_bits=int(radio["packet_bits"]),
    )
    fld = InterfererField(
        density=float(intf["density"]),
        interferer_power_watts=parse_power(intf["power"], "interferer.power"),
        road_length=float(intf.get("road_length", DEFAULT_ROAD_LENGTH)),
    )
    targets = req["delay_targets"]
    if not isinstance(targets, list):
        targets = [targets] * geometry.M
    requirements = DelayRequirements(
        tuple(parse_time(t, "requirements.delay_targets") for t in targets))
    return validate(ScenarioConfig(geometry, radio_params, fld, requirements, p_max, tx_powers))


def load_config(path: str | Path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([(str(path), str(exc))]) from None
    return config_from_dict(doc)


def config_to_dict(config: ScenarioConfig) -> dict[str, Any]:
    """Plain-unit mirror of ``config`` for report headers (SI units)."""
    scen: dict[str, Any] = {
        "tx_positions_m": list(config.geometry.tx_positions),
        "rx_positions_m": list(config.geometry.rx_positions),
        "distances_m": config.distances.tolist(),
        "p_max_w": config.p_max_watts,
        "p_max_dbm": watts_to_dbm(config.p_max_watts),
    }
    if config.tx_powers_watts is not None:
        scen["tx_powers_w"] = list(config.tx_powers_watts)
    return {
        "scenario": scen,
        "radio": {
            "path_loss_exponent": config.radio.path_loss_exponent,
            "bandwidth_hz": config.radio.bandwidth_hz,
            "noise_psd_w_per_hz": config.radio.noise_psd_watts_per_hz,
            "packet_bits": config.radio.packet_bits,
        },
        "interferer": {
            "density_per_m": config.field.density,
            "power_w": config.field.interferer_power_watts,
            "power_dbm": watts_to_dbm(config.field.interferer_power_watts),
            "road_length_m": config.field.road_length,
        },
        "requirements": {"delay_targets_s": list(config.requirements.targets)},
    }


def default_config_path() -> Path:
    return Path(__file__).with_name("data") / "highway.toml"


def highway_config(density: float = 0.01) -> ScenarioConfig:
    """The two-link highway scenario used throughout the experiments."""
    return _highway().with_density(density)


@lru_cache(maxsize=1)
def _highway() -> ScenarioConfig:
    return load_config(default_config_path())
