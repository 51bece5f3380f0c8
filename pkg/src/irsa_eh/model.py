"""Scenario configuration and degree distributions.

A scenario is fully described by :class:`SystemConfig`; the replica-count
policy of the devices by :class:`DegreeDistribution`, a table with one row per
initial battery level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROW_TOL = 1e-12


class _Unlimited:
    """Sentinel battery capacity: devices always have energy and never harvest."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNLIMITED"

    def __reduce__(self):
        return (_Unlimited, ())


UNLIMITED = _Unlimited()


class ConfigError(ValueError):
    """Invalid scenario parameters or a malformed config file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class SystemConfig:
    num_devices: int
    frame_length: int
    update_prob: float
    battery_capacity: int | _Unlimited
    harvest_prob: float
    max_degree: int

    def __post_init__(self):
        if int(self.num_devices) != self.num_devices or self.num_devices < 1:
            raise ConfigError(f"num_devices must be a positive integer, got {self.num_devices!r}")
        if int(self.frame_length) != self.frame_length or self.frame_length < 1:
            raise ConfigError(f"frame_length must be a positive integer, got {self.frame_length!r}")
        for name in ("update_prob", "harvest_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p!r}")
        if self.battery_capacity is not UNLIMITED:
            e = self.battery_capacity
            if isinstance(e, bool) or int(e) != e or e < 0:
                raise ConfigError(f"battery_capacity must be a nonnegative integer or UNLIMITED, got {e!r}")
        if int(self.max_degree) != self.max_degree or self.max_degree < 0:
            raise ConfigError(f"max_degree must be a nonnegative integer, got {self.max_degree!r}")
        if self.max_degree >= self.frame_length:
            raise ConfigError(
                f"max_degree ({self.max_degree}) must be smaller than frame_length ({self.frame_length})"
            )

    @property
    def unlimited(self) -> bool:
        return self.battery_capacity is UNLIMITED

    @property
    def num_battery_levels(self) -> int:
        """Rows of an adaptive degree table (1 when energy is unlimited)."""
        return 1 if self.unlimited else self.battery_capacity + 1

    @property
    def sigma(self) -> float:
        return activation_prob(self)

    @property
    def load(self) -> float:
        return channel_load(self)

    def replace(self, **changes) -> "SystemConfig":
        values = {
            "num_devices": self.num_devices,
            "frame_length": self.frame_length,
            "update_prob": self.update_prob,
            "battery_capacity": self.battery_capacity,
            "harvest_prob": self.harvest_prob,
            "max_degree": self.max_degree,
        }
        values.update(changes)
        return SystemConfig(**values)


def activation_prob(config: SystemConfig) -> float:
    """Probability that a device has at least one new update during a frame."""
    alpha = config.update_prob
    if alpha >= 1.0:
        return 1.0
    # 1 - (1-alpha)^M without cancellation for tiny alpha
    return -math.expm1(config.frame_length * math.log1p(-alpha))


def channel_load(config: SystemConfig) -> float:
    """Average number of active devices per slot."""
    return config.num_devices * activation_prob(config) / config.frame_length


@dataclass(frozen=True)
class DegreeDistribution:
    """Conditional degree distribution, ``table[b, l] = P(L = l | B = b)``.

    A nonadaptive distribution stores a single row which is shared by every
    battery level; :meth:`row` hides the difference.
    """

    table: np.ndarray
    adaptive: bool = True
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t = np.array(self.table, dtype=np.float64, ndmin=2)
        if t.ndim != 2 or t.shape[1] < 1:
            raise ConfigError(f"degree table must be a nonempty matrix, got shape {t.shape}")
        if not np.all(np.isfinite(t)) or t.min() < 0.0 or t.max() > 1.0:
            raise ConfigError("degree table entries must lie in [0, 1]")
        sums = t.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_TOL):
            raise ConfigError(f"degree table rows must sum to 1, got row sums {sums.tolist()}")
        if not self.adaptive:
            if not np.all(t == t[0]):
                raise ConfigError("nonadaptive degree table must have identical rows")
            t = t[:1].copy()
        t.setflags(write=False)
        object.__setattr__(self, "table", t)
        object.__setattr__(self, "_cdf", _sampling_cdf(t))

    @property
    def max_degree(self) -> int:
        return self.table.shape[1] - 1

    @property
    def num_rows(self) -> int:
        return self.table.shape[0]

    def row(self, battery: int) -> np.ndarray:
        if not self.adaptive:
            return self.table[0]
        return self.table[battery]

    def expanded(self, levels: int) -> np.ndarray:
        """Table with exactly ``levels`` rows (nonadaptive rows repeated)."""
        if not self.adaptive:
            return np.repeat(self.table, levels, axis=0)
        if self.num_rows != levels:
            raise ConfigError(f"degree table has {self.num_rows} rows, expected {levels}")
        return np.array(self.table)

    def sampling_cdf(self, levels: int) -> np.ndarray:
        """Row-wise inverse-CDF lookup table used by the samplers."""
        if not self.adaptive:
            return np.ascontiguousarray(np.repeat(self._cdf, levels, axis=0))
        if self.num_rows != levels:
            raise ConfigError(f"degree table has {self.num_rows} rows, expected {levels}")
        return np.ascontiguousarray(self._cdf)

    def check(self, config: SystemConfig) -> None:
        """Raise unless the table fits ``config`` (degree support and row count)."""
        if self.max_degree > config.max_degree:
            raise ConfigError(
                f"degree table covers degrees up to {self.max_degree}, "
                f"but max_degree is {config.max_degree}"
            )
        if self.adaptive and self.num_rows != config.num_battery_levels:
            raise ConfigError(
                f"adaptive degree table has {self.num_rows} rows, "
                f"expected {config.num_battery_levels}"
            )

    @classmethod
    def fixed(cls, degree: int, max_degree: int | None = None) -> "DegreeDistribution":
        """Nonadaptive point mass, Lambda(x) = x^degree."""
        width = (degree if max_degree is None else max_degree) + 1
        row = np.zeros(width)
        row[degree] = 1.0
        return cls(row[None, :], adaptive=False)

    @classmethod
    def battery_matched(cls, capacity: int, max_degree: int | None = None) -> "DegreeDistribution":
        """Adaptive point masses Lambda_b(x) = x^b, capped at ``max_degree``."""
        cap = capacity if max_degree is None else max_degree
        table = np.zeros((capacity + 1, cap + 1))
        for b in range(capacity + 1):
            table[b, min(b, cap)] = 1.0
        return cls(table, adaptive=True)


def _sampling_cdf(table: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(table, axis=1)
    for r in range(table.shape[0]):
        # the last supported degree absorbs any rounding shortfall
        last = int(np.flatnonzero(table[r] > 0.0)[-1])
        cdf[r, last:] = 2.0
    return cdf


def avoid_mask(num_rows: int, max_degree: int) -> np.ndarray:
    """Boolean mask of entries allowed under AVOID (degree at most battery)."""
    b = np.arange(num_rows)[:, None]
    l = np.arange(max_degree + 1)[None, :]
    return l <= b


def validate_avoid_mask(dist: DegreeDistribution, capacity: int) -> bool:
    """True iff no probability mass sits on a degree above the initial battery."""
    table = dist.expanded(capacity + 1)
    return bool(np.all(table[~avoid_mask(capacity + 1, dist.max_degree)] == 0.0))


# --------------------------------------------------------------------------
# key = value scenario files

_INT_KEYS = ("num_devices", "frame_length", "max_degree")
_FLOAT_KEYS = ("update_prob", "harvest_prob")
_KNOWN_KEYS = set(_INT_KEYS + _FLOAT_KEYS + ("battery_capacity", "degree_table", "adaptive"))
_REQUIRED = ("num_devices", "frame_length", "update_prob", "battery_capacity", "harvest_prob", "max_degree")


def parse_config_text(text: str, path: str | None = None):
    """Parse a scenario document into ``(SystemConfig, DegreeDistribution | None)``.

    One ``key = value`` pair per line, ``#`` starts a comment. ``degree_table``
    is a comma-separated row-major list of probabilities; it holds one row
    when ``adaptive = false`` and ``battery_capacity + 1`` rows otherwise.
    """
    values: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", path, lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", path, lineno)
        values[key] = (value, lineno)

    for key in _REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required key {key!r}", path)

    def convert(key, fn):
        value, lineno = values[key]
        try:
            return fn(value)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", path, lineno) from None

    kwargs = {k: convert(k, int) for k in _INT_KEYS}
    kwargs.update({k: convert(k, float) for k in _FLOAT_KEYS})
    kwargs["battery_capacity"] = convert("battery_capacity", _parse_capacity)
    try:
        config = SystemConfig(**kwargs)
    except ConfigError as exc:
        # the key the message leads with is the one to point at
        named = [(str(exc).find(k), k) for k in kwargs if k in str(exc)]
        bad = min(named)[1] if named else None
        raise ConfigError(str(exc), path, values[bad][1] if bad else None) from None

    dist = None
    if "degree_table" in values:
        adaptive = convert("adaptive", _parse_bool) if "adaptive" in values else False
        probs = convert("degree_table", lambda v: [float(x) for x in v.replace(";", ",").split(",") if x.strip()])
        width = config.max_degree + 1
        rows = config.num_battery_levels if adaptive else 1
        lineno = values["degree_table"][1]
        if len(probs) != rows * width:
            raise ConfigError(
                f"degree_table needs {rows} x {width} = {rows * width} entries, got {len(probs)}", path, lineno
            )
        try:
            dist = DegreeDistribution(np.reshape(probs, (rows, width)), adaptive=adaptive)
        except ConfigError as exc:
            raise ConfigError(str(exc), path, lineno) from None
    elif "adaptive" in values:
        convert("adaptive", _parse_bool)
    return config, dist


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config_text(text, str(path))


def format_config(config: SystemConfig, dist: DegreeDistribution | None = None) -> str:
    cap = "unlimited" if config.unlimited else str(config.battery_capacity)
    lines = [
        f"num_devices = {config.num_devices}",
        f"frame_length = {config.frame_length}",
        f"update_prob = {config.update_prob!r}",
        f"battery_capacity = {cap}",
        f"harvest_prob = {config.harvest_prob!r}",
        f"max_degree = {config.max_degree}",
    ]
    if dist is not None:
        table = np.zeros((dist.num_rows, config.max_degree + 1))
        table[:, : dist.max_degree + 1] = dist.table
        lines.append(f"adaptive = {'true' if dist.adaptive else 'false'}")
        lines.append("degree_table = " + ", ".join(repr(float(x)) for x in table.ravel()))
    return "\n".join(lines) + "\n"


def _parse_capacity(value: str):
    if value.strip().strip('"').lower() == "unlimited":
        return UNLIMITED
    return int(value)


def _parse_bool(value: str) -> bool:
    v = value.lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {value!r}")
