"""Particle-based Brownian simulation inside the cylinder.

Each molecule takes Gaussian steps of variance ``2 D dt`` per Cartesian axis
plus a deterministic axial flow displacement. A step ending outside the wall
binds with probability ``k_f * sqrt(pi dt / D)`` and is otherwise mirrored
radially about the wall; surviving molecules then degrade with probability
``k_d dt``.

Random numbers come from a counter-based generator keyed on
``(seed, particle index)``: draw ``k`` of step ``s`` for particle ``i`` is a
pure function of those integers, so results do not depend on how particles
are split across threads.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numba as nb
import numpy as np

from .analytic_cgf import CylinderEnvironment, CylPoint

logger = logging.getLogger(__name__)

__all__ = [
    "ALIVE",
    "BOUND",
    "DEGRADED",
    "BoundaryStepError",
    "EstimateSeries",
    "Particle",
    "ParticleStream",
    "PbsConfig",
    "Poiseuille",
    "SphereProbe",
    "Uniform",
    "VoxelProbe",
    "apply_degradation",
    "binding_probability",
    "handle_boundary",
    "run",
    "step",
]

ALIVE, DEGRADED, BOUND = 0, 1, 2
_STATUS_NAMES = {ALIVE: "alive", DEGRADED: "degraded", BOUND: "bound"}

# draw slots per particle per step: 0-2 normals, 4 binding, 5 degradation
_DRAWS_PER_STEP = 8
_BLOCK = 2048

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class BoundaryStepError(RuntimeError):
    """A reflected position still lies outside the cylinder (dt too large)."""


# ---------------------------------------------------------------------------
# Counter-based random numbers (SplitMix64 finalizer as a keyed hash)
# ---------------------------------------------------------------------------


@nb.njit(cache=True, error_model="numpy")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, error_model="numpy")
def _stream_key(seed, index):
    return _mix(np.uint64(seed) ^ _mix(np.uint64(index) * _GOLDEN + _GOLDEN))


@nb.njit(cache=True, error_model="numpy")
def _uniform(key, counter):
    """Uniform on (0, 1] from (key, counter)."""
    z = _mix(key + np.uint64(counter) * _GOLDEN)
    return (np.int64(z >> np.uint64(11)) + 1) * (1.0 / 9007199254740992.0)


def _ziggurat_tables(layers=128, r=3.442619855899, v=9.91256303526217e-3):
    x = np.zeros(layers + 1)
    f = math.exp(-0.5 * r * r)
    x[0] = v / f
    x[1] = r
    for i in range(2, layers):
        x[i] = math.sqrt(-2.0 * math.log(v / x[i - 1] + f))
        f = math.exp(-0.5 * x[i] ** 2)
    ratio = x[1:] / x[:-1]
    return x, ratio


_ZIG_X, _ZIG_RATIO = _ziggurat_tables()
_ZIG_R = 3.442619855899
_AUX = np.uint64(0xD1B54A32D192ED03)


@nb.njit(cache=True, error_model="numpy")
def _normal(key, counter):
    """Standard normal for draw slot ``counter`` (Ziggurat, 128 layers).

    The first attempt uses the slot's own hash; rejections continue on an
    auxiliary stream indexed by ``(counter, attempt)``, so the value is still
    a pure function of ``(key, counter)``.
    """
    z = _mix(key + counter * _GOLDEN)
    aux = _mix(key ^ _AUX)
    attempt = np.uint64(0)
    while True:
        i = np.int64(z & np.uint64(127))
        u = 2.0 * (np.int64(z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0) - 1.0
        if abs(u) < _ZIG_RATIO[i]:
            return u * _ZIG_X[i]
        attempt += np.uint64(1)
        c = (counter * np.uint64(64) + attempt) * np.uint64(4)
        if i == 0:
            # base strip: sample the tail beyond r
            while True:
                u1 = (np.int64(_mix(aux + c * _GOLDEN) >> np.uint64(11)) + 1) * (1.0 / 9007199254740992.0)
                u2 = (np.int64(_mix(aux + (c + np.uint64(1)) * _GOLDEN) >> np.uint64(11)) + 1) * (1.0 / 9007199254740992.0)
                xt = math.log(u1) / _ZIG_R
                yt = math.log(u2)
                if -2.0 * yt >= xt * xt:
                    return xt - _ZIG_R if u < 0.0 else _ZIG_R - xt
                attempt += np.uint64(1)
                c = (counter * np.uint64(64) + attempt) * np.uint64(4)
        x = u * _ZIG_X[i]
        f0 = math.exp(-0.5 * (_ZIG_X[i] * _ZIG_X[i] - x * x))
        f1 = math.exp(-0.5 * (_ZIG_X[i + 1] * _ZIG_X[i + 1] - x * x))
        u3 = (np.int64(_mix(aux + c * _GOLDEN) >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)
        if f1 + u3 * (f0 - f1) < 1.0:
            return x
        z = _mix(aux + (c + np.uint64(1)) * _GOLDEN)


@nb.njit(cache=True, error_model="numpy")
def _normals(key, base):
    """Three standard normals from draw slots ``base .. base + 2``."""
    return (
        _normal(key, base),
        _normal(key, base + np.uint64(1)),
        _normal(key, base + np.uint64(2)),
    )


class ParticleStream:
    """Counter-based random stream for one particle."""

    def __init__(self, seed: int, index: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.index = int(index)
        self.key = np.uint64(_stream_key(np.uint64(self.seed), np.uint64(self.index)))

    def uniform(self, counter: int) -> float:
        return float(_uniform(self.key, np.uint64(counter)))

    def normals(self, step_index: int) -> tuple[float, float, float]:
        return _normals(self.key, np.uint64(step_index * _DRAWS_PER_STEP))


# ---------------------------------------------------------------------------
# Flow fields, probes, configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    """Plug flow with axial velocity ``v`` (m/s)."""

    v: float = 0.0

    def velocity(self, rho, rho_c):
        return np.full_like(np.asarray(rho, float), self.v)


@dataclass(frozen=True)
class Poiseuille:
    """Parabolic flow ``2 v_eff (1 - rho^2 / rho_c^2)``."""

    v_eff: float

    def velocity(self, rho, rho_c):
        rho = np.asarray(rho, float)
        return 2.0 * self.v_eff * (1.0 - (rho / rho_c) ** 2)


_FLOW_UNIFORM, _FLOW_POISEUILLE = 0, 1


def _flow_code(flow) -> tuple[int, float]:
    if isinstance(flow, Uniform):
        return _FLOW_UNIFORM, flow.v
    if isinstance(flow, Poiseuille):
        return _FLOW_POISEUILLE, flow.v_eff
    raise TypeError(f"unknown flow field {flow!r}")


@dataclass(frozen=True)
class SphereProbe:
    """Counting sphere centred at a point (radius in m)."""

    center: CylPoint
    radius: float

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.radius**3

    def _row(self):
        x, y, z = self.center.cartesian()
        return [0.0, x, y, z, self.radius, 0.0, 0.0]


@dataclass(frozen=True)
class VoxelProbe:
    """Cylindrical-coordinate voxel ``[rho0, rho1] x [z0, z1] x [phi0, phi1]``."""

    rho_range: tuple[float, float]
    z_range: tuple[float, float]
    phi_range: tuple[float, float]

    @property
    def volume(self) -> float:
        (r0, r1), (z0, z1), (p0, p1) = self.rho_range, self.z_range, self.phi_range
        return 0.5 * (r1**2 - r0**2) * (p1 - p0) * (z1 - z0)

    def _row(self):
        (r0, r1), (z0, z1), (p0, p1) = self.rho_range, self.z_range, self.phi_range
        return [1.0, r0, r1, z0, z1, p0 % (2 * math.pi), p1 - p0]


@dataclass(frozen=True)
class PbsConfig:
    """Particle ensemble configuration.

    ``sample_times`` are rounded to whole steps. ``seed`` keys the
    counter-based generator.
    """

    time_step: float = 1e-5
    n_particles: int = 200_000
    horizon: float = 0.3
    seed: int = 1
    flow: Uniform | Poiseuille = field(default_factory=Uniform)
    probes: tuple = ()
    sample_times: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.time_step > 0:
            raise ValueError("time step must be positive")
        if self.n_particles < 1:
            raise ValueError("need at least one particle")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def sample_steps(self) -> np.ndarray:
        steps = np.rint(np.asarray(self.sample_times, float) / self.time_step).astype(np.int64)
        if np.any(steps < 1) or np.any(steps > round(self.horizon / self.time_step)):
            raise ValueError("sample times must lie in (0, horizon]")
        if np.any(np.diff(steps) <= 0):
            raise ValueError("sample times must be strictly increasing after rounding to steps")
        return steps


def binding_probability(k_f: float, D: float, dt: float) -> float:
    """Per-hit binding probability ``k_f sqrt(pi dt / D)``, 1 for an absorbing wall."""
    if math.isinf(k_f):
        return 1.0
    return min(1.0, k_f * math.sqrt(math.pi * dt / D))


def _check_accuracy(env: CylinderEnvironment, dt: float) -> None:
    if env.absorbing or env.boundary_rate == 0:
        return
    lhs = env.boundary_rate * math.sqrt(dt / (2 * env.diffusion))
    if lhs > 0.1 / math.sqrt(2 * math.pi):
        warnings.warn(
            f"k_f*sqrt(dt/2D) = {lhs:.3g} is not small against 1/sqrt(2 pi); "
            "the binding rule is only accurate for small steps",
            RuntimeWarning,
            stacklevel=3,
        )
    if binding_probability(env.boundary_rate, env.diffusion, dt) >= 1.0:
        warnings.warn("binding probability clipped at 1", RuntimeWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# Per-particle kernels
# ---------------------------------------------------------------------------


@nb.njit(cache=True, error_model="numpy")
def _boundary(x, y, rho_c, p_bind, u):
    """Return (status, x, y, ok) for a tentative position outside the wall."""
    rho = math.sqrt(x * x + y * y)
    if u <= p_bind:
        return BOUND, x, y, True
    mirrored = 2.0 * rho_c - rho
    if mirrored < 0.0:
        return ALIVE, x, y, False
    scale = mirrored / rho
    return ALIVE, x * scale, y * scale, True


@nb.njit(cache=True, error_model="numpy")
def _advance(x, y, z, key, step_index, sigma, dt, rho_c, flow_kind, flow_v, p_bind, p_deg):
    """One time step. Returns (status, x, y, z, ok)."""
    base = np.uint64(step_index) * np.uint64(_DRAWS_PER_STEP)
    n1, n2, n3 = _normals(key, base)
    if flow_kind == 0:
        vz = flow_v
    else:
        vz = 2.0 * flow_v * (1.0 - (x * x + y * y) / (rho_c * rho_c))
    x += sigma * n1
    y += sigma * n2
    z += sigma * n3 + vz * dt
    if x * x + y * y > rho_c * rho_c:
        status, x, y, ok = _boundary(x, y, rho_c, p_bind, _uniform(key, base + np.uint64(4)))
        if not ok:
            return ALIVE, x, y, z, False
        if status == BOUND:
            return BOUND, x, y, z, True
    if p_deg > 0.0 and _uniform(key, base + np.uint64(5)) <= p_deg:
        return DEGRADED, x, y, z, True
    return ALIVE, x, y, z, True


@nb.njit(cache=True, error_model="numpy")
def _inside(probe, x, y, z):
    if probe[0] == 0.0:
        dx = x - probe[1]
        dy = y - probe[2]
        dz = z - probe[3]
        return dx * dx + dy * dy + dz * dz <= probe[4] * probe[4]
    rho = math.sqrt(x * x + y * y)
    if rho < probe[1] or rho >= probe[2] or z < probe[3] or z >= probe[4]:
        return False
    phi = math.atan2(y, x)
    if phi < 0.0:
        phi += 2.0 * math.pi
    offset = phi - probe[5]
    if offset < 0.0:
        offset += 2.0 * math.pi
    return offset < probe[6]


@nb.njit(parallel=True, cache=True, error_model="numpy")
def _simulate(
    n_particles, seed, n_steps, sample_steps, x0, y0, z0, sigma, dt, rho_c,
    flow_kind, flow_v, p_bind, p_deg, probes,
):
    n_blocks = (n_particles + _BLOCK - 1) // _BLOCK
    n_probes = probes.shape[0]
    n_samples = sample_steps.shape[0]
    counts = np.zeros((n_blocks, n_probes, n_samples), dtype=np.int64)
    status_counts = np.zeros((n_blocks, 3, n_samples), dtype=np.int64)
    failures = np.zeros(n_blocks, dtype=np.int64)
    for b in nb.prange(n_blocks):
        for i in range(b * _BLOCK, min((b + 1) * _BLOCK, n_particles)):
            key = _stream_key(np.uint64(seed), np.uint64(i))
            x, y, z = x0, y0, z0
            status = ALIVE
            s = 0
            for k in range(1, n_steps + 1):
                if status == ALIVE:
                    status, x, y, z, ok = _advance(
                        x, y, z, key, k, sigma, dt, rho_c, flow_kind, flow_v, p_bind, p_deg
                    )
                    if not ok:
                        failures[b] += 1
                        status = BOUND
                if s < n_samples and k == sample_steps[s]:
                    status_counts[b, status, s] += 1
                    if status == ALIVE:
                        for p in range(n_probes):
                            if _inside(probes[p], x, y, z):
                                counts[b, p, s] += 1
                    s += 1
                if status != ALIVE or s >= n_samples:
                    break
            while s < n_samples:
                status_counts[b, status, s] += 1
                s += 1
    return counts.sum(axis=0), status_counts.sum(axis=0), failures.sum()


# ---------------------------------------------------------------------------
# Python-facing single-particle operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Particle:
    """Molecule position (Cartesian, m), status, and step counter."""

    x: float
    y: float
    z: float
    status: int = ALIVE
    steps: int = 0

    @property
    def status_name(self) -> str:
        return _STATUS_NAMES[self.status]


def _p_deg(k_d: float, dt: float) -> float:
    p = k_d * dt
    if p > 0.1:
        warnings.warn(
            f"k_d*dt = {p:.3g} > 0.1; per-step degradation probability is inaccurate",
            RuntimeWarning,
            stacklevel=3,
        )
    return min(p, 1.0)


def step(
    particle: Particle, env: CylinderEnvironment, config: PbsConfig, rng: ParticleStream
) -> Particle:
    """Advance one alive particle by one time step.

    Uses the same kernel and draw layout as :func:`run`, so stepping particle
    ``i`` with ``ParticleStream(seed, i)`` reproduces its trajectory there.
    """
    if particle.status != ALIVE:
        raise ValueError("only alive particles can be stepped")
    dt = config.time_step
    kind, v = _flow_code(config.flow)
    k = particle.steps + 1
    status, x, y, z, ok = _advance(
        particle.x, particle.y, particle.z, rng.key, k,
        math.sqrt(2 * env.diffusion * dt), dt, env.radius, kind, v,
        binding_probability(env.boundary_rate, env.diffusion, dt), _p_deg(env.degradation, dt),
    )
    if not ok:
        raise BoundaryStepError("reflected position still outside the cylinder; reduce dt")
    return Particle(x, y, z, status, k)


def handle_boundary(pre: Particle, post: Particle, env: CylinderEnvironment, dt: float, u: float):
    """Resolve a tentative position outside the wall.

    ``u`` is a uniform draw on (0, 1]. Returns a bound particle or the
    radially mirrored one; ``pre`` is accepted for interface symmetry (the
    crossing is tested on the end-of-step position only).
    """
    if post.x**2 + post.y**2 <= env.radius**2:
        raise ValueError("post-step position is inside the cylinder")
    p_bind = binding_probability(env.boundary_rate, env.diffusion, dt)
    status, x, y, ok = _boundary(post.x, post.y, env.radius, p_bind, u)
    if not ok:
        raise BoundaryStepError("reflected position still outside the cylinder; reduce dt")
    return replace(post, x=x, y=y, status=status)


def apply_degradation(particle: Particle, k_d: float, dt: float, u: float) -> Particle:
    """Degrade with probability ``k_d dt`` given a uniform draw ``u``."""
    if particle.status != ALIVE:
        raise ValueError("only alive particles can degrade")
    if u <= _p_deg(k_d, dt) and k_d > 0:
        return replace(particle, status=DEGRADED)
    return particle


# ---------------------------------------------------------------------------
# Ensemble runs
# ---------------------------------------------------------------------------


@dataclass
class EstimateSeries:
    """Per-probe concentration estimates on the sampling grid.

    ``estimate[p, s]`` is in 1/m^3 per released molecule, so it compares
    directly with the Green's function. ``stderr`` is binomial.
    """

    times: np.ndarray
    probes: tuple
    counts: np.ndarray
    n_particles: int
    status_counts: np.ndarray  # (3, S): alive, degraded, bound

    @property
    def volumes(self) -> np.ndarray:
        return np.array([p.volume for p in self.probes])

    @property
    def fraction(self) -> np.ndarray:
        return self.counts / self.n_particles

    @property
    def estimate(self) -> np.ndarray:
        return self.fraction / self.volumes[:, None]

    @property
    def stderr(self) -> np.ndarray:
        f = self.fraction
        return np.sqrt(f * (1 - f) / self.n_particles) / self.volumes[:, None]

    def pooled(self, groups: Sequence[Sequence[int]]) -> "EstimateSeries":
        """Merge probes with equal expected concentration (summing counts and volumes).

        The result has one pseudo-probe per group whose volume is the sum.
        """
        counts = np.stack([self.counts[list(g)].sum(axis=0) for g in groups])
        probes = tuple(_PooledProbe(tuple(self.probes[i] for i in g)) for g in groups)
        return EstimateSeries(self.times, probes, counts, self.n_particles, self.status_counts)

    def rows(self):
        """CSV rows ``(probe_id, t, estimate, stderr)``."""
        est, err = self.estimate, self.stderr
        for p in range(len(self.probes)):
            for s, t in enumerate(self.times):
                yield (p, float(t), float(est[p, s]), float(err[p, s]))


@dataclass(frozen=True)
class _PooledProbe:
    members: tuple

    @property
    def volume(self) -> float:
        return sum(m.volume for m in self.members)


def run(
    config: PbsConfig,
    env: CylinderEnvironment,
    source: CylPoint,
    t0: float = 0.0,
    threads: int | None = None,
) -> EstimateSeries:
    """Release ``n_particles`` at ``source`` and count them in every probe.

    Sample times are measured from ``t0``. Output is identical for a given
    ``(seed, config, env)`` whatever the thread count.
    """
    if source.rho > env.radius:
        raise ValueError("source lies outside the cylinder")
    for probe in config.probes:
        if isinstance(probe, SphereProbe) and probe.center.rho + probe.radius > env.radius:
            raise ValueError("sphere probe extends outside the cylinder")
    dt = config.time_step
    _check_accuracy(env, dt)
    sample_steps = config.sample_steps()
    n_steps = int(round(config.horizon / dt))
    kind, v = _flow_code(config.flow)
    probes = np.array([p._row() for p in config.probes], dtype=float).reshape(-1, 7)
    x0, y0, z0 = source.cartesian()
    if threads is not None:
        nb.set_num_threads(threads)
    logger.info(
        "PBS: %d particles, %d steps of %.3g s, %d probes, seed %d",
        config.n_particles, n_steps, dt, len(config.probes), config.seed,
    )
    counts, status_counts, failures = _simulate(
        config.n_particles, np.uint64(config.seed & 0xFFFFFFFFFFFFFFFF), n_steps, sample_steps,
        x0, y0, z0, math.sqrt(2 * env.diffusion * dt), dt, env.radius, kind, v,
        binding_probability(env.boundary_rate, env.diffusion, dt),
        _p_deg(env.degradation, dt), probes,
    )
    if failures:
        raise BoundaryStepError(
            f"{failures} particle steps overshot the wall by more than rho_c; reduce dt"
        )
    return EstimateSeries(
        times=sample_steps * dt,
        probes=tuple(config.probes),
        counts=counts,
        n_particles=config.n_particles,
        status_counts=status_counts,
    )
