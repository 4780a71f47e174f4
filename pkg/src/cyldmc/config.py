"""Scenario configuration files.

A scenario is a YAML mapping of blocks whose keys carry their units
(``rho_c_um``, ``dt_s``, ...). Parsing fills defaults, rejects unknown keys
and validates ranges; :meth:`ScenarioConfig.to_dict` writes the complete
mapping back, so parse -> serialize is idempotent. SI objects for the
numerical modules are built on demand.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .analytic_cgf import CgfSeries, CylinderEnvironment, CylPoint, FreeSpaceSeries
from .channel import ReceiverModel
from .eigenmodes import ABSORBING
from .pbs import PbsConfig, Poiseuille, SphereProbe, Uniform

__all__ = ["ConfigError", "ScenarioConfig", "load_config", "load_points"]


def um(value: float) -> float:
    """Micrometres (or um/s) to SI; division keeps e.g. 5 um exactly 5e-6."""
    return float(value) / 1e6


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass
class EnvironmentBlock:
    rho_c_um: float = 5.0
    D_m2_per_s: float = 1e-9
    k_d_per_s: float = 0.0
    # number (um/s), "absorbing", or "none" for an unbounded medium
    k_f_um_per_s: float | str = 0.0
    flow: str = "uniform"
    v_um_per_s: float = 0.0

    def validate(self):
        _check(self.rho_c_um > 0, "environment.rho_c_um must be positive")
        _check(self.D_m2_per_s > 0, "environment.D_m2_per_s must be positive")
        _check(self.k_d_per_s >= 0, "environment.k_d_per_s must be >= 0")
        if isinstance(self.k_f_um_per_s, str):
            _check(
                self.k_f_um_per_s in ("absorbing", "none"),
                "environment.k_f_um_per_s must be a number, 'absorbing' or 'none'",
            )
        else:
            _check(self.k_f_um_per_s >= 0, "environment.k_f_um_per_s must be >= 0")
        _check(self.flow in ("uniform", "poiseuille"), "environment.flow must be 'uniform' or 'poiseuille'")
        _check(
            not (self.flow == "poiseuille" and self.unbounded),
            "Poiseuille flow needs a cylinder wall",
        )

    @property
    def unbounded(self) -> bool:
        return self.k_f_um_per_s == "none"

    @property
    def k_f(self) -> float:
        if self.k_f_um_per_s == "absorbing":
            return ABSORBING
        if self.k_f_um_per_s == "none":
            return 0.0
        return um(self.k_f_um_per_s)


@dataclass
class TransmitterBlock:
    rho_um: float = 3.0
    z_um: float = 0.0
    phi_rad: float = 0.0
    N: float = 5e4
    t0_s: float = 0.0

    def validate(self):
        _check(self.rho_um >= 0, "transmitter.rho_um must be >= 0")
        _check(self.N > 0, "transmitter.N must be positive")

    @property
    def point(self) -> CylPoint:
        return CylPoint(um(self.rho_um), um(self.z_um), self.phi_rad)


@dataclass
class ReceiverBlock:
    rho_um: float = 2.0
    z_um: float = 5.0
    phi_rad: float = math.pi / 2
    R_rx_um: float = 0.5
    mode: str = "point"

    def validate(self):
        _check(self.rho_um >= 0, "receiver.rho_um must be >= 0")
        _check(self.R_rx_um > 0, "receiver.R_rx_um must be positive")
        _check(self.mode in ("point", "exact"), "receiver.mode must be 'point' or 'exact'")


@dataclass
class SeriesBlock:
    n_max: int = 3
    m_max: int = 5
    tail_tolerance: float = 1e-3

    def validate(self):
        _check(self.n_max >= 0, "series.n_max must be >= 0")
        _check(self.m_max >= 1, "series.m_max must be >= 1")
        _check(self.tail_tolerance > 0, "series.tail_tolerance must be positive")


@dataclass
class PbsBlock:
    dt_s: float = 1e-5
    particles: int = 200_000
    seed: int = 1
    horizon_s: float = 0.3
    probe_radius_um: float = 1.0

    def validate(self):
        _check(self.dt_s > 0, "pbs.dt_s must be positive")
        _check(self.particles >= 1, "pbs.particles must be >= 1")
        _check(self.seed >= 0, "pbs.seed must be >= 0")
        _check(self.horizon_s > self.dt_s, "pbs.horizon_s must exceed pbs.dt_s")
        _check(self.probe_radius_um > 0, "pbs.probe_radius_um must be positive")


@dataclass
class TimeGridBlock:
    """Output times ``start_s + k (stop_s - start_s) / (count - 1)``."""

    start_s: float = 0.001
    stop_s: float = 0.1
    count: int = 100

    def validate(self):
        _check(self.start_s > 0, "time_grid.start_s must be positive")
        _check(self.stop_s >= self.start_s, "time_grid.stop_s must be >= start_s")
        _check(self.count >= 1, "time_grid.count must be >= 1")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.start_s, self.stop_s, self.count)


@dataclass
class LinkBlock:
    T_s: list = field(default_factory=lambda: [0.02, 0.05, 0.1, 0.2])
    memory_cutoff: float = 0.01
    max_memory: int = 2000
    detector: str = "genie"
    n_bits: int = 1_000_000
    seed: int = 0
    pdf_horizon_s: float = 0.3

    def validate(self):
        _check(len(self.T_s) > 0, "link.T_s must list at least one slot duration")
        _check(all(t > 0 for t in self.T_s), "link.T_s entries must be positive")
        _check(self.memory_cutoff > 0, "link.memory_cutoff must be positive")
        _check(self.max_memory >= 1, "link.max_memory must be >= 1")
        _check(self.detector in ("genie", "decision-feedback"), "link.detector must be 'genie' or 'decision-feedback'")
        _check(self.n_bits >= 10_000, "link.n_bits must be >= 10000")
        _check(self.seed >= 0, "link.seed must be >= 0")
        _check(self.pdf_horizon_s > 0, "link.pdf_horizon_s must be positive")


@dataclass
class CompareBlock:
    peak_tolerance: float = 0.10
    sigma_limit: float = 3.0
    # replaces the wall rate on the analytic side only (negative controls)
    analytic_k_f_um_per_s: float | str | None = None

    def validate(self):
        _check(self.peak_tolerance > 0, "compare.peak_tolerance must be positive")
        _check(self.sigma_limit > 0, "compare.sigma_limit must be positive")
        v = self.analytic_k_f_um_per_s
        _check(
            v is None or v == "absorbing" or (not isinstance(v, str) and v >= 0),
            "compare.analytic_k_f_um_per_s must be null, a number >= 0 or 'absorbing'",
        )


_BLOCKS = {
    "environment": EnvironmentBlock,
    "transmitter": TransmitterBlock,
    "receiver": ReceiverBlock,
    "series": SeriesBlock,
    "pbs": PbsBlock,
    "time_grid": TimeGridBlock,
    "link": LinkBlock,
    "compare": CompareBlock,
}


_WORD_VALUES = {"k_f_um_per_s": ("absorbing", "none"), "analytic_k_f_um_per_s": ("absorbing",)}


def _number(name: str, key: str, value) -> float:
    # PyYAML reads exponents without a dot ("2e5") as strings
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}.{key} must be a number") from exc


def _coerce(name: str, key: str, value, default):
    """Match YAML scalars to the default's type (ints stay ints, etc.)."""
    if isinstance(value, bool):
        raise ConfigError(f"{name}.{key}: booleans are not accepted")
    if isinstance(value, str) and value in _WORD_VALUES.get(key, ()):
        return value
    if value is None and default is None:
        return None
    if isinstance(default, int):
        number = _number(name, key, value)
        if not number.is_integer():
            raise ConfigError(f"{name}.{key} must be an integer")
        return int(number)
    if isinstance(default, float) or default is None:
        return _number(name, key, value)
    if isinstance(default, list):
        values = value if isinstance(value, list) else [value]
        return [_number(name, key, v) for v in values]
    if not isinstance(value, str):
        raise ConfigError(f"{name}.{key} must be a string")
    return value


@dataclass
class ScenarioConfig:
    environment: EnvironmentBlock = field(default_factory=EnvironmentBlock)
    transmitter: TransmitterBlock = field(default_factory=TransmitterBlock)
    receiver: ReceiverBlock = field(default_factory=ReceiverBlock)
    series: SeriesBlock = field(default_factory=SeriesBlock)
    pbs: PbsBlock = field(default_factory=PbsBlock)
    time_grid: TimeGridBlock = field(default_factory=TimeGridBlock)
    link: LinkBlock = field(default_factory=LinkBlock)
    compare: CompareBlock = field(default_factory=CompareBlock)

    # parsing ---------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict | None) -> "ScenarioConfig":
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping of blocks")
        unknown = set(data) - set(_BLOCKS)
        if unknown:
            raise ConfigError(f"unknown configuration block(s): {', '.join(sorted(unknown))}")
        blocks = {}
        for name, block_cls in _BLOCKS.items():
            raw = data.get(name) or {}
            if not isinstance(raw, dict):
                raise ConfigError(f"block '{name}' must be a mapping")
            defaults = block_cls()
            known = {f.name for f in fields(block_cls)}
            extra = set(raw) - known
            if extra:
                raise ConfigError(f"unknown key(s) in '{name}': {', '.join(sorted(extra))}")
            values = {k: _coerce(name, k, v, getattr(defaults, k)) for k, v in raw.items()}
            block = block_cls(**values)
            block.validate()
            blocks[name] = block
        config = cls(**blocks)
        config.validate()
        return config

    def validate(self):
        rho_c = self.environment.rho_c_um
        if not self.environment.unbounded:
            _check(self.transmitter.rho_um <= rho_c, "transmitter lies outside the cylinder")
            _check(
                self.receiver.rho_um + self.receiver.R_rx_um <= rho_c,
                "receiver sphere extends outside the cylinder",
            )

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _BLOCKS}

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    # SI objects ------------------------------------------------------------

    @property
    def unbounded(self) -> bool:
        return self.environment.unbounded

    def cylinder(self, k_f: float | None = None) -> CylinderEnvironment:
        """Environment in SI units; uniform flow carries the analytic velocity."""
        e = self.environment
        return CylinderEnvironment(
            radius=math.inf if e.unbounded else um(e.rho_c_um),
            diffusion=e.D_m2_per_s,
            degradation=e.k_d_per_s,
            velocity=self.analytic_velocity,
            boundary_rate=e.k_f if k_f is None else k_f,
        )

    @property
    def analytic_velocity(self) -> float:
        """Uniform velocity used by the analytic model (m/s).

        Poiseuille flow is replaced by plug flow at ``4/3 v_eff``.
        """
        v = um(self.environment.v_um_per_s)
        return 4.0 / 3.0 * v if self.environment.flow == "poiseuille" else v

    def series_for(self, env: CylinderEnvironment | None = None):
        env = env or self.cylinder()
        source = self.transmitter.point
        if math.isinf(env.radius):
            return FreeSpaceSeries(env, source, self.transmitter.t0_s)
        s = self.series
        return CgfSeries(env, source, self.transmitter.t0_s, s.n_max, s.m_max, s.tail_tolerance)

    def analytic_k_f(self) -> float | None:
        v = self.compare.analytic_k_f_um_per_s
        if v is None:
            return None
        return ABSORBING if v == "absorbing" else um(v)

    def receiver_model(self) -> ReceiverModel:
        r = self.receiver
        return ReceiverModel(CylPoint(um(r.rho_um), um(r.z_um), r.phi_rad), um(r.R_rx_um), r.mode)

    def pbs_config(self, probes=(), sample_times=(), seed: int | None = None) -> PbsConfig:
        p, e = self.pbs, self.environment
        v = um(e.v_um_per_s)
        flow = Poiseuille(v) if e.flow == "poiseuille" else Uniform(v)
        return PbsConfig(
            time_step=p.dt_s,
            n_particles=p.particles,
            horizon=p.horizon_s,
            seed=p.seed if seed is None else seed,
            flow=flow,
            probes=tuple(probes),
            sample_times=tuple(sample_times),
        )

    def probes_at(self, points) -> list[SphereProbe]:
        return [SphereProbe(pt, um(self.pbs.probe_radius_um)) for pt in points]

    def si_summary(self) -> dict:
        """Resolved SI parameter set, for logging."""
        env = self.cylinder()
        tx = self.transmitter.point
        return {
            "rho_c_m": env.radius,
            "D_m2_per_s": env.diffusion,
            "k_d_per_s": env.degradation,
            "k_f_m_per_s": env.boundary_rate,
            "flow": self.environment.flow,
            "v_m_per_s": um(self.environment.v_um_per_s),
            "analytic_v_m_per_s": env.velocity,
            "tx_m": (tx.rho, tx.z, tx.phi),
            "N": self.transmitter.N,
            "rx_m": (um(self.receiver.rho_um), um(self.receiver.z_um), self.receiver.phi_rad),
            "R_rx_m": um(self.receiver.R_rx_um),
            "dt_s": self.pbs.dt_s,
            "particles": self.pbs.particles,
        }


def load_config(path: str | Path | None) -> ScenarioConfig:
    """Read a YAML scenario; ``None`` gives the defaults."""
    if path is None:
        return ScenarioConfig()
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return ScenarioConfig.from_dict(data)


def load_points(path: str | Path) -> list[CylPoint]:
    """Observation points from a CSV with columns ``rho_um, z_um, phi_rad``."""
    points = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"rho_um", "z_um", "phi_rad"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ConfigError(f"points file needs columns {sorted(need)}")
        for row in reader:
            try:
                points.append(CylPoint(um(row["rho_um"]), um(row["z_um"]), float(row["phi_rad"])))
            except ValueError as exc:
                raise ConfigError(f"bad points row {row}: {exc}") from exc
    if not points:
        raise ConfigError("points file lists no points")
    return points
