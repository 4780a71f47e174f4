"""Command-line front end: ``cyldmc {eigen,cgf,pbs,ber,compare}``.

Every command reads a YAML scenario (``--config``), logs the resolved SI
parameters, and writes one CSV whose header names the units. Exit codes:
0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import sys
from typing import Iterable, Sequence

import numpy as np

from . import pbs
from .analytic_cgf import CylPoint, FreeSpaceSeries, QuadratureError
from .channel import IsiProfile, MemoryCapError, ObservationPdf, ball_average
from .config import ConfigError, ScenarioConfig, load_config, load_points
from .eigenmodes import (
    EigenvalueSearchError,
    RadialEigenproblem,
    boundary_residual,
    find_eigenvalues,
    normalization,
)
from .ook import OokLink, PoissonTailError, analytic_ber, monte_carlo_ber

logger = logging.getLogger("cyldmc")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2

_NUMERICAL_ERRORS = (
    EigenvalueSearchError,
    QuadratureError,
    MemoryCapError,
    pbs.BoundaryStepError,
    PoissonTailError,
    ArithmeticError,
)


class Table:
    """Header plus rows, written as CSV."""

    def __init__(self, header: Sequence[str], rows: Iterable[Sequence] = ()):
        self.header = list(header)
        self.rows = [list(r) for r in rows]

    def write(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(self.header)
        for row in self.rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_eigen(config: ScenarioConfig) -> tuple[Table, dict]:
    """Eigenvalues ``lam_nm`` with wall residual and norm for ``n <= n_max, m <= m_max``."""
    if config.unbounded:
        raise ConfigError("eigen needs a cylinder wall (k_f_um_per_s is 'none')")
    env = config.cylinder()
    rows = []
    for n in range(config.series.n_max + 1):
        problem = RadialEigenproblem(env.diffusion, env.boundary_rate, env.radius, n)
        lams = find_eigenvalues(problem, config.series.m_max)
        for m, lam in enumerate(lams, start=1):
            rows.append(
                (n, m, float(lam), float(lam * env.radius), boundary_residual(problem, lam),
                 float(normalization(lam, n, env.radius)))
            )
    table = Table(["n", "m", "lambda_per_m", "lambda_rho_c", "residual_scaled", "N_m2"], rows)
    summary = {"modes": len(rows), "max_residual": max(r[4] for r in rows)}
    return table, summary


def cmd_cgf(config: ScenarioConfig, points: Sequence[CylPoint], include_unbounded: bool = False):
    """Analytic concentration per released molecule at each point and time."""
    series = config.series_for()
    times = config.transmitter.t0_s + config.time_grid.times
    rho = np.array([p.rho for p in points])
    z = np.array([p.z for p in points])
    phi = np.array([p.phi for p in points])
    values = series.grid(rho, z, phi, times)
    header = ["t_s", "point", "rho_m", "z_m", "phi_rad", "C_per_m3"]
    if include_unbounded:
        free = FreeSpaceSeries(config.cylinder(), config.transmitter.point, config.transmitter.t0_s)
        unb = free.grid(rho, z, phi, times)
        header.append("C_unbounded_per_m3")
    rows = []
    for p, pt in enumerate(points):
        for s, t in enumerate(times):
            row = [float(t), p, pt.rho, pt.z, pt.phi, float(values[p, s])]
            if include_unbounded:
                row.append(float(unb[p, s]))
            rows.append(row)
    peaks = {str(p): float(np.max(values[p])) for p in range(len(points))}
    return Table(header, rows), {"peak_C_per_m3": peaks}


def _run_pbs(config: ScenarioConfig, points, threads=None):
    probes = config.probes_at(points)
    pconf = config.pbs_config(probes, config.time_grid.times)
    env = config.cylinder().replace(velocity=0.0)  # flow comes from the PBS config
    return pbs.run(pconf, env, config.transmitter.point, config.transmitter.t0_s, threads=threads)


def cmd_pbs(config: ScenarioConfig, points: Sequence[CylPoint], threads: int | None = None):
    """Particle estimates (1/m^3 per released molecule) in spheres around each point."""
    result = _run_pbs(config, points, threads)
    est, err = result.estimate, result.stderr
    rows = []
    for p, pt in enumerate(points):
        for s, t in enumerate(result.times):
            rows.append([float(config.transmitter.t0_s + t), p, pt.rho, pt.z, pt.phi, float(est[p, s]), float(err[p, s])])
    header = ["t_s", "point", "rho_m", "z_m", "phi_rad", "estimate_per_m3", "stderr_per_m3"]
    final = result.status_counts[:, -1] / result.n_particles
    summary = {"alive": float(final[0]), "degraded": float(final[1]), "bound": float(final[2])}
    return Table(header, rows), summary


CHANNEL_HEADER = ["T_s", "slot", "t_s", "p_obs", "mean_count"]


def cmd_ber(config: ScenarioConfig, channel_rows: list | None = None):
    """Analytic and Monte Carlo BER for each slot duration in ``link.T_s``.

    When ``channel_rows`` is a list, the per-slot sampling instants
    ``i T + t_s`` with ``p_obs`` and the mean count ``N p_obs`` (the signal
    for ``i = 0``, interference from slot ``i`` otherwise) are appended to it.
    """
    link_cfg = config.link
    N = config.transmitter.N
    receiver = config.receiver_model()
    pdf = ObservationPdf(receiver, config.series_for(), link_cfg.pdf_horizon_s)
    logger.info("sampling time t_s = %.6g s, N p_obs(t_s) = %.6g", pdf.t_s - pdf.series.t0, N * pdf.peak_value)
    rows = []
    for T in link_cfg.T_s:
        profile = IsiProfile.build(pdf, T, N, link_cfg.memory_cutoff, link_cfg.max_memory)
        link = OokLink.from_profile(profile, N, link_cfg.detector)
        if channel_rows is not None:
            for i, t, p in profile.rows():
                channel_rows.append([float(T), i, t, p, N * p])
        mc = monte_carlo_ber(link, link_cfg.n_bits, link_cfg.seed, with_analytic=False)
        mc.analytic = analytic_ber(link)
        lo, hi = mc.interval()
        rows.append([float(T), profile.memory, float(profile.t_s), mc.analytic, mc.estimate, lo, hi, mc.errors, mc.n_bits])
        logger.info("T = %g s: M = %d, analytic %.4g, Monte Carlo %.4g", T, profile.memory, mc.analytic, mc.estimate)
    header = ["T_s", "memory", "t_s_s", "BER_analytic", "BER_mc", "CI_low", "CI_high", "errors", "n_bits"]
    analytic = [r[3] for r in rows]
    summary = {
        "detector": link_cfg.detector,
        "analytic_nonincreasing": bool(np.all(np.diff(analytic) <= 0)),
        "t_s_s": float(pdf.t_s - pdf.series.t0),
    }
    return Table(header, rows), summary


def cmd_compare(config: ScenarioConfig, points: Sequence[CylPoint], threads: int | None = None):
    """Particle simulation against the probe-averaged analytic Green's function.

    A probe passes when the peak values agree within ``peak_tolerance``
    (relative) and every sample lies within ``sigma_limit`` binomial
    standard deviations, the deviation taken under the analytic value.
    """
    cmp = config.compare
    result = _run_pbs(config, points, threads)
    env = config.cylinder(k_f=config.analytic_k_f())
    series = config.series_for(env)
    times = config.transmitter.t0_s + result.times
    radius = result.probes[0].radius
    n = result.n_particles
    rows, report = [], []
    for p, pt in enumerate(points):
        volume = result.probes[p].volume
        mean = ball_average(series, pt, radius, times) / volume
        est = result.estimate[p]
        frac = np.clip(mean * volume, 0.0, 1.0)
        sigma = np.sqrt(frac * (1 - frac) / n) / volume
        peak_an, peak_pbs = float(np.max(mean)), float(np.max(est))
        peak_err = abs(peak_pbs - peak_an) / peak_an if peak_an > 0 else math.inf
        with np.errstate(divide="ignore", invalid="ignore"):
            zscore = np.where(sigma > 0, np.abs(est - mean) / sigma, np.where(est == mean, 0.0, np.inf))
        max_z = float(np.max(zscore))
        ok = peak_err <= cmp.peak_tolerance and max_z <= cmp.sigma_limit
        entry = {"point": p, "peak_analytic": peak_an, "peak_pbs": peak_pbs,
                 "peak_rel_error": peak_err, "max_sigma": max_z, "pass": bool(ok)}
        if not config.unbounded and env.boundary_rate == 0 and not env.absorbing:
            # a reflecting wall keeps every molecule, so after the peak the
            # cylinder concentration should not fall below free space
            free = FreeSpaceSeries(env, config.transmitter.point, config.transmitter.t0_s)
            unb = ball_average(free, pt, radius, times) / volume
            after = times >= times[int(np.argmax(mean))]
            entry["reflective_ge_unbounded"] = bool(np.all(mean[after] >= unb[after]))
        report.append(entry)
        rows.append([p, pt.rho, pt.z, pt.phi, peak_an, peak_pbs, peak_err, max_z, "pass" if ok else "fail"])
    header = ["point", "rho_m", "z_m", "phi_rad", "peak_analytic_per_m3", "peak_pbs_per_m3",
              "peak_rel_error", "max_sigma", "result"]
    summary = {"pass": all(r["pass"] for r in report), "probes": report,
               "peak_tolerance": cmp.peak_tolerance, "sigma_limit": cmp.sigma_limit}
    return Table(header, rows), summary


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cyldmc", description="Diffusion in a cylinder: Green's function, particles, and OOK links.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, points=False):
        p.add_argument("--config", help="YAML scenario file (defaults if omitted)")
        p.add_argument("--out", help="CSV output path (stdout if omitted)")
        p.add_argument("--summary", help="optional JSON summary path")
        p.add_argument("--seed", type=int, help="override pbs.seed and link.seed")
        p.add_argument("--threads", type=int, help="worker threads for the particle simulation")
        if points:
            p.add_argument("--points", required=True, help="CSV with columns rho_um, z_um, phi_rad")
        return p

    common(sub.add_parser("eigen", help="eigenvalue table"))
    c = common(sub.add_parser("cgf", help="analytic Green's function at points"), points=True)
    c.add_argument("--unbounded", action="store_true", help="add the free-space column")
    common(sub.add_parser("pbs", help="particle-based simulation at points"), points=True)
    b = common(sub.add_parser("ber", help="bit error rate versus slot duration"))
    b.add_argument("--channel-out", help="CSV of per-slot sampling instants, p_obs and mean counts")
    common(sub.add_parser("compare", help="analytic versus particle simulation"), points=True)
    return parser


def _dispatch(args, config: ScenarioConfig):
    if args.command == "eigen":
        return cmd_eigen(config)
    if args.command == "ber":
        if not args.channel_out:
            return cmd_ber(config)
        channel_rows = []
        table, summary = cmd_ber(config, channel_rows)
        with open(args.channel_out, "w", newline="") as fh:
            Table(CHANNEL_HEADER, channel_rows).write(fh)
        return table, summary
    points = load_points(args.points)
    if args.command == "cgf":
        return cmd_cgf(config, points, args.unbounded)
    if args.command == "pbs":
        return cmd_pbs(config, points, args.threads)
    return cmd_compare(config, points, args.threads)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be >= 0")
            config.pbs.seed = args.seed
            config.link.seed = args.seed
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        logger.info("resolved parameters (SI): %s", json.dumps(config.si_summary()))
        table, summary = _dispatch(args, config)
    except _NUMERICAL_ERRORS as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, OSError) as exc:
        logger.error("invalid input: %s", exc)
        return EXIT_INVALID

    with contextlib.ExitStack() as stack:
        fh = stack.enter_context(open(args.out, "w", newline="")) if args.out else sys.stdout
        table.write(fh)
    if args.summary:
        with open(args.summary, "w") as fh:
            json.dump({"command": args.command, **summary}, fh, indent=2)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
