"""Configuration-driven experiment runner.

A TOML config file selects a scheme (fp1d, qdd1d, thinfilm1d, blob, ksfd,
pme2d, distance) together with problem, discretization and initial-condition
parameters.  `wgflow run config.toml` executes one experiment, writes CSV
outputs plus a JSON manifest with config echo, versions, wall time and
structure-check verdicts, and exits 0 on success, 2 when a structure check
fails and 3 on solver failure.  `compare` computes error norms between a
computed profile and an analytic or file reference; `sweep` spawns one
independent run per value of a swept parameter.
"""

import argparse
import csv
import dataclasses
import json
import platform
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ImportError:
    import tomli as tomllib

from . import __version__, blob, fdks, mesh2d
from .analytic import barenblatt1d, barenblatt2d, fit_decay_slope
from .blob import BlobError
from .core import (
    DensityError,
    GridError,
    PiecewiseConstantDensity,
    StateError,
    build_mass_grid,
    density_from_csv,
    density_from_state,
    density_to_csv,
    idf_from_density,
    l2_metric,
    state_to_csv,
    wasserstein1d,
)
from .fdks import KSError, KSFDConfig, KSState
from .functionals import (
    DegenerateCellError,
    ProblemSpec,
    discrete_h1,
    polynomial_potential,
    power_entropy,
    quadratic_interaction,
    quadratic_potential,
    xlogx_entropy,
)
from .jko1d import ProblemEnergy, StepRejectedError, SurrogateEnergy, run_flow, \
    trajectory_to_csv
from .mesh2d import MeshError

SOLVER_ERRORS = (StepRejectedError, DegenerateCellError, KSError, BlobError,
                 MeshError, GridError, StateError, DensityError)


class ConfigError(ValueError):
    pass


SCHEMES = ("fp1d", "qdd1d", "thinfilm1d", "blob", "ksfd", "pme2d", "distance")

# Allowed keys per scheme: {section: {key: default}}; None marks a required
# key, _OPT an optional key without a default.
_OPT = object()

_COMMON_TOP = {"scheme": None, "output_dir": "wgflow_out", "seed": 0,
               "snapshot_every": 0}

_SCHEMA = {
    "fp1d": {
        "": dict(_COMMON_TOP),
        "problem": {"entropy": "xlogx", "m": _OPT, "potential": "none",
                    "a": 0.5, "coeffs": _OPT, "interaction": "none", "c": 1.0},
        "discretization": {"K": None, "dt": None, "T": None,
                           "metric": "lumped"},
        "initial": {"kind": None, "m": _OPT, "t0": _OPT, "mu": 0.0,
                    "sigma": 1.0, "lo": 0.0, "hi": 1.0, "bins": 8,
                    "amplitude": 0.5, "boundary": _OPT},
    },
    "blob": {
        "": dict(_COMMON_TOP),
        "problem": {"diffusion": "none", "m": _OPT, "potential": "none",
                    "a": 0.5, "interaction": "none", "chi": 1.0, "c": 1.0,
                    "M_pi": _OPT, "M": _OPT, "eps": _OPT},
        "discretization": {"N": None, "dt": None, "T": None,
                           "integrator": "rk4", "record_every": 1},
        "initial": {"kind": None, "extent": 1.5, "sigma": 0.5},
    },
    "ksfd": {
        "": dict(_COMMON_TOP, contraction_report=True),
        "problem": {"chi": 0.0, "chi_critical": 1.0},
        "discretization": {"N": None, "dt": None, "T": None},
        "initial": {"kind": "steady", "factor": 1.5},
    },
    "pme2d": {
        "": dict(_COMMON_TOP),
        "problem": {"entropy": "power", "m": _OPT, "mobility_power": _OPT,
                    "potential": "none", "a": 0.5},
        "discretization": {"n": None, "dt": None, "T": None},
        "initial": {"kind": "barenblatt", "t0": None, "mass_full": 4.0},
    },
    "distance": {
        "": dict(_COMMON_TOP),
        "inputs": {"a": None, "b": None},
    },
}
# The fourth-order surrogates fix the functional; only discretization and
# initial data vary.
for _s in ("qdd1d", "thinfilm1d"):
    _SCHEMA[_s] = {
        "": dict(_COMMON_TOP),
        "discretization": {"K": None, "dt": None, "T": None, "metric": "full"},
        "initial": {"kind": None, "mu": 0.5, "sigma": 1.0, "lo": 0.0,
                    "hi": 1.0, "bins": 8, "amplitude": 0.5},
    }


@dataclass(frozen=True)
class ExperimentSpec:
    scheme: str
    output_dir: str
    seed: int
    snapshot_every: int
    sections: dict = field(default_factory=dict)

    def __getitem__(self, section):
        return self.sections[section]

    @property
    def config_echo(self):
        """Full config with defaults filled in, for the manifest."""
        out = dict(self.sections.get("", {}))
        for name, sec in self.sections.items():
            if name:
                out[name] = dict(sec)
        return out


def _validate_section(scheme, name, given, schema):
    label = f"[{name}]" if name else "top level"
    for key in given:
        if name == "" and key in _SCHEMA[scheme] and isinstance(given[key], dict):
            continue
        if key not in schema:
            raise ConfigError(
                f"unknown key {key!r} at {label} for scheme {scheme!r}")
    out = {}
    for key, default in schema.items():
        if key in given:
            out[key] = given[key]
        elif default is None:
            raise ConfigError(f"missing required key {key!r} at {label}")
        elif default is not _OPT:
            out[key] = default
    return out


def parse_config(path):
    """Read and validate a TOML experiment config; unknown keys are rejected
    by name, defaults are filled in explicitly."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    scheme = raw.get("scheme")
    if scheme is None:
        raise ConfigError("missing required key 'scheme'")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    schema = _SCHEMA[scheme]
    for key, val in raw.items():
        if isinstance(val, dict) and key not in schema:
            raise ConfigError(f"unknown section [{key}] for scheme {scheme!r}")
    sections = {}
    top = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    sections[""] = _validate_section(scheme, "", top, schema[""])
    for name, sub in schema.items():
        if name == "":
            continue
        sections[name] = _validate_section(scheme, name, raw.get(name, {}), sub)
    _check_scheme_fields(scheme, sections)
    t = sections[""]
    return ExperimentSpec(scheme=scheme, output_dir=t["output_dir"],
                          seed=int(t["seed"]),
                          snapshot_every=int(t["snapshot_every"]),
                          sections=sections)


def _check_scheme_fields(scheme, sections):
    for name, sec in sections.items():
        for key in ("dt", "T", "t0", "sigma", "eps"):
            if key in sec and not (isinstance(sec[key], (int, float))
                                   and sec[key] > 0):
                raise ConfigError(f"key {key!r} must be a positive number")
    if scheme == "fp1d":
        p = sections["problem"]
        if p["entropy"] not in ("xlogx", "power", "none"):
            raise ConfigError(f"unknown entropy {p['entropy']!r}")
        if p["entropy"] == "power" and "m" not in p:
            raise ConfigError("power entropy requires key 'm'")
        if p["potential"] == "polynomial" and "coeffs" not in p:
            raise ConfigError("polynomial potential requires key 'coeffs'")
        kind = sections["initial"]["kind"]
        if kind not in ("barenblatt", "gaussian", "uniform", "random", "cosine"):
            raise ConfigError(f"unknown fp1d initial kind {kind!r}")
        if kind == "barenblatt":
            for key in ("m", "t0"):
                if key not in sections["initial"]:
                    raise ConfigError(f"barenblatt initial requires key {key!r}")
    elif scheme in ("qdd1d", "thinfilm1d"):
        kind = sections["initial"]["kind"]
        if kind not in ("gaussian", "uniform", "random", "cosine"):
            raise ConfigError(f"unknown {scheme} initial kind {kind!r}")
    elif scheme == "blob":
        p = sections["problem"]
        if p["diffusion"] not in ("none", "log", "power"):
            raise ConfigError(f"unknown diffusion {p['diffusion']!r}")
        if p["diffusion"] == "power" and "m" not in p:
            raise ConfigError("power diffusion requires key 'm'")
        if p["interaction"] not in ("none", "newtonian", "quadratic"):
            raise ConfigError(f"unknown interaction {p['interaction']!r}")
        if "M_pi" in p and "M" in p:
            raise ConfigError("give the total mass as M or M_pi, not both")
        if sections["initial"]["kind"] not in ("gaussian_grid", "uniform_grid"):
            raise ConfigError("unknown blob initial kind "
                              f"{sections['initial']['kind']!r}")
    elif scheme == "ksfd":
        if sections["initial"]["kind"] not in ("steady", "stretched", "random"):
            raise ConfigError("unknown ksfd initial kind "
                              f"{sections['initial']['kind']!r}")
        if sections["problem"]["chi"] < 0:
            raise ConfigError("chi must be nonnegative")
    elif scheme == "pme2d":
        p = sections["problem"]
        if "mobility_power" in p:
            # mobility Phi(r) = r^p pairs with entropy h(r) = r^p/(p-1)
            if "m" in p:
                raise ConfigError("give the nonlinearity as m or "
                                  "mobility_power, not both")
        elif p["entropy"] == "power" and "m" not in p:
            raise ConfigError("power entropy requires key 'm' or "
                              "'mobility_power'")


# --- problem and initial-data builders -------------------------------------

def _build_problem1d(p):
    entropy = None
    if p["entropy"] == "xlogx":
        entropy = xlogx_entropy()
    elif p["entropy"] == "power":
        entropy = power_entropy(float(p["m"]))
    potential = None
    if p["potential"] == "quadratic":
        potential = quadratic_potential(float(p["a"]))
    elif p["potential"] == "polynomial":
        potential = polynomial_potential([float(c) for c in p["coeffs"]])
    interaction = None
    if p["interaction"] == "quadratic":
        interaction = quadratic_interaction(float(p["c"]))
    return ProblemSpec(entropy=entropy, potential=potential,
                       interaction=interaction)


def truncated_gaussian(mu, sigma, lo, hi):
    """Unit-mass Gaussian density restricted to (lo, hi)."""
    from scipy.stats import norm
    z = norm.cdf(hi, mu, sigma) - norm.cdf(lo, mu, sigma)
    return lambda x: norm.pdf(x, mu, sigma) / z


def _initial_state1d(ini, grid, rng):
    kind = ini["kind"]
    if kind == "barenblatt":
        prof = barenblatt1d(float(ini["m"]), mass=1.0)
        t0 = float(ini["t0"])
        r = prof.support_radius(t0) * (1 - 1e-12)
        mode = ini.get("boundary", "free")
        return idf_from_density(lambda x: prof.density(x, t0), grid,
                                support=(-r, r), mode=mode)
    if kind == "gaussian":
        lo, hi = float(ini["lo"]), float(ini["hi"])
        rho = truncated_gaussian(float(ini["mu"]), float(ini["sigma"]), lo, hi)
        return idf_from_density(rho, grid, support=(lo, hi),
                                mode=ini.get("boundary", "pinned"))
    if kind == "uniform":
        lo, hi = float(ini["lo"]), float(ini["hi"])
        return idf_from_density(lambda x: np.full_like(x, 1.0 / (hi - lo)),
                                grid, support=(lo, hi),
                                mode=ini.get("boundary", "pinned"))
    if kind == "cosine":
        lo, hi = float(ini["lo"]), float(ini["hi"])
        amp = float(ini["amplitude"])
        if not 0 <= amp < 1:
            raise ConfigError("cosine amplitude must lie in [0, 1)")
        L = hi - lo
        rho = lambda x: (1.0 + amp * np.cos(np.pi * (x - lo) / L)) / L
        return idf_from_density(rho, grid, support=(lo, hi),
                                mode=ini.get("boundary", "pinned"))
    if kind == "random":
        lo, hi = float(ini["lo"]), float(ini["hi"])
        bins = int(ini["bins"])
        edges = np.linspace(lo, hi, bins + 1)
        vals = rng.uniform(0.5, 1.5, bins)
        vals /= vals @ np.diff(edges)
        rho = PiecewiseConstantDensity(breakpoints=edges, values=vals)
        return idf_from_density(rho, grid, mode=ini.get("boundary", "pinned"))
    raise ConfigError(f"unknown initial kind {kind!r}")


def _blob_ensemble(spec, rng):
    ini, dis, prob = spec["initial"], spec["discretization"], spec["problem"]
    N = int(dis["N"])
    n_side = int(round(np.sqrt(N)))
    if n_side * n_side != N:
        raise ConfigError(f"blob N={N} must be a perfect square for grid "
                          "initial data")
    ext = float(ini["extent"])
    xs = np.linspace(-ext, ext, n_side)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    pos = np.column_stack((X.ravel(), Y.ravel()))
    if "M_pi" in prob:
        mass = float(prob["M_pi"]) * np.pi
    elif "M" in prob:
        mass = float(prob["M"])
    else:
        mass = 1.0
    if ini["kind"] == "gaussian_grid":
        sig = float(ini["sigma"])
        w = np.exp(-np.sum(pos ** 2, axis=1) / (2 * sig ** 2))
    else:
        w = np.ones(N)
    masses = mass * w / w.sum()
    return blob.ParticleEnsemble(positions=pos, masses=masses), mass


def _blob_problem(prob, ensemble):
    if "eps" in prob:
        moll = blob.MollifierSpec(eps=float(prob["eps"]))
    else:
        moll = blob.default_mollifier(ensemble)
    if prob["diffusion"] == "log":
        base = blob.log_diffusion(moll)
    elif prob["diffusion"] == "power":
        base = blob.power_diffusion(float(prob["m"]), moll)
    else:
        base = blob.BlobProblem(mollifier=moll)
    potential = None
    if prob["potential"] == "quadratic":
        potential = blob.radial_quadratic_potential(float(prob["a"]))
    interaction = None
    if prob["interaction"] == "newtonian":
        interaction = blob.newtonian_interaction(float(prob["chi"]))
    elif prob["interaction"] == "quadratic":
        interaction = blob.quadratic_blob_interaction(float(prob["c"]))
    return dataclasses.replace(base, potential=potential,
                               interaction=interaction)


# --- scheme runners ---------------------------------------------------------

def _monotone(values, tol=1e-9):
    v = np.asarray(values, dtype=float)
    scale = 1.0 + np.abs(v[:-1])
    return bool(np.all(np.diff(v) <= tol * scale))


def _run_jko1d(spec, outdir):
    dis = spec["discretization"]
    grid = build_mass_grid(int(dis["K"]))
    metric = l2_metric(grid, dis["metric"])
    rng = np.random.default_rng(spec.seed)
    state0 = _initial_state1d(spec["initial"], grid, rng)
    dt, T = float(dis["dt"]), float(dis["T"])
    n_steps = max(1, int(round(T / dt)))
    if spec.scheme == "fp1d":
        energy = ProblemEnergy(_build_problem1d(spec["problem"]), grid)
    else:
        which = "fisher" if spec.scheme == "qdd1d" else "dirichlet"
        energy = SurrogateEnergy(which, grid, metric)
    traj = run_flow(state0, grid, energy, dt, n_steps, metric=metric)
    files = []
    trajectory_to_csv(traj, outdir / "trajectory.csv")
    files.append("trajectory.csv")
    rho_final = density_from_state(traj.states[-1], grid)
    density_to_csv(rho_final, outdir / "final_density.csv")
    state_to_csv(traj.states[-1], outdir / "final_state.csv")
    files += ["final_density.csv", "final_state.csv"]
    if spec.snapshot_every > 0:
        for i in range(0, len(traj.states), spec.snapshot_every):
            name = f"density_step{i:06d}.csv"
            density_to_csv(density_from_state(traj.states[i], grid),
                           outdir / name)
            files.append(name)
    checks = {
        "energy_monotone": _monotone(traj.energies),
        "mass_conserved": abs(rho_final.total_mass() - 1.0) < 1e-12,
        "positions_monotone": bool(
            np.all(np.diff(traj.states[-1].positions) > 0)),
    }
    meta = {"mass_normalization": "probability (total mass 1)",
            "n_steps": len(traj.states) - 1,
            "final_time": float(traj.times[-1])}
    if spec.scheme in ("qdd1d", "thinfilm1d"):
        h1 = [discrete_h1(s, grid)[0] for s in traj.states]
        checks["h1_lyapunov"] = _monotone(h1)
        with open(outdir / "h1_series.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "h1"])
            for t, v in zip(traj.times, h1):
                w.writerow([t, v])
        files.append("h1_series.csv")
    return checks, meta, files


def _run_blob(spec, outdir):
    dis = spec["discretization"]
    rng = np.random.default_rng(spec.seed)
    ensemble, mass = _blob_ensemble(spec, rng)
    problem = _blob_problem(spec["problem"], ensemble)
    traj = blob.integrate(ensemble, problem, float(dis["T"]),
                          float(dis["dt"]), integrator=dis["integrator"],
                          record_every=int(dis["record_every"]))
    blob.metrics_to_csv(traj, outdir / "metrics.csv")
    blob.particles_to_csv(traj.snapshots[-1], outdir / "final_particles.csv")
    files = ["metrics.csv", "final_particles.csv"]
    final = traj.snapshots[-1]
    checks = {
        "mass_conserved": abs(final.total_mass - mass) < 1e-10 * (1 + mass),
        "energy_monotone": _monotone(traj.energies, tol=1e-6),
        "positions_finite": bool(np.all(np.isfinite(final.positions))),
    }
    meta = {
        "total_mass": mass,
        "mass_over_pi": mass / np.pi,
        "critical_mass_ratio": mass / (8 * np.pi),
        "supercritical": mass > 8 * np.pi,
        "mollifier_eps": problem.mollifier.eps,
        "blown_up": traj.blown_up,
        "halt_time": traj.halt_time,
        "final_time": float(traj.times[-1]),
    }
    return checks, meta, files


def _run_ksfd(spec, outdir):
    dis, prob, ini = spec["discretization"], spec["problem"], spec["initial"]
    cfg = KSFDConfig(N=int(dis["N"]), chi=float(prob["chi"]),
                     dt=float(dis["dt"]),
                     chi_critical=float(prob["chi_critical"]))
    n_steps = max(1, int(round(float(dis["T"]) / cfg.dt)))
    U = fdks.steady_state(cfg)
    if ini["kind"] == "steady":
        X0 = KSState(U.U)
    elif ini["kind"] == "stretched":
        X0 = KSState(float(ini["factor"]) * U.U)
    else:
        rng = np.random.default_rng(spec.seed)
        X = np.sort(rng.standard_normal(cfg.N + 1))
        X += np.arange(cfg.N + 1) * 1e-3
        X0 = KSState(X - X.mean())
    states = fdks.run_fdks(X0, cfg, n_steps)
    files = []
    with open(outdir / "final_nodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "X", "U"])
        for i, (x, u) in enumerate(zip(states[-1].X, U.U)):
            w.writerow([i, repr(float(x)), repr(float(u))])
    files.append("final_nodes.csv")
    checks = {
        "nodes_monotone": bool(np.all(np.diff(states[-1].X) > 0)),
        "centered": abs(float(np.sum(states[-1].X))) < 1e-9,
    }
    meta = {"chi": cfg.chi, "chi_critical": cfg.chi_critical,
            "n_steps": n_steps}
    if spec[""]["contraction_report"]:
        rep = fdks.contraction_report(states, U, cfg.dt)
        fdks.report_to_csv(rep, states, outdir / "contraction.csv")
        files.append("contraction.csv")
        checks["contraction_bound_satisfied"] = bool(
            rep["per_step_ok"] and rep["cumulative_ok"])
    return checks, meta, files


def _run_pme2d(spec, outdir):
    dis, prob, ini = spec["discretization"], spec["problem"], spec["initial"]
    if "mobility_power" in prob:
        entropy = power_entropy(float(prob["mobility_power"]))
    elif prob["entropy"] == "power":
        entropy = power_entropy(float(prob["m"]))
    else:
        entropy = xlogx_entropy()
    potential = None
    if prob["potential"] == "quadratic":
        potential = mesh2d.radial_quadratic_mesh_potential(float(prob["a"]))
    mesh = mesh2d.build_reference_mesh(int(dis["n"]))
    pos0 = mesh2d.quarter_barenblatt_positions(
        mesh, float(ini["t0"]), mass_full=float(ini["mass_full"]))
    dt, T = float(dis["dt"]), float(dis["T"])
    n_steps = max(1, int(round(T / dt)))
    states, energies, min_dets = mesh2d.run_flow2d(
        mesh, pos0, dt, n_steps, entropy, potential)
    mesh2d.mesh_snapshot(mesh, states[-1], str(outdir / "final"))
    files = ["final_nodes.csv", "final_elements.csv"]
    with open(outdir / "series.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "energy", "min_det"])
        for i, (e, d) in enumerate(zip(energies, min_dets)):
            w.writerow([i, e, d])
    files.append("series.csv")
    checks = {
        "energy_monotone": _monotone(energies),
        "no_inversions": bool(min(min_dets) > 0),
    }
    meta = {"mass_normalization": "probability (total mass 1 on the quadrant)",
            "t0": float(ini["t0"]), "n_steps": n_steps,
            "min_determinant": float(min(min_dets))}
    return checks, meta, files


def _run_distance(spec, outdir):
    inp = spec["inputs"]
    rho = density_from_csv(inp["a"])
    eta = density_from_csv(inp["b"])
    d = wasserstein1d(rho, eta)
    with open(outdir / "distance.json", "w") as fh:
        json.dump({"wasserstein": d}, fh, indent=2)
    checks = {"supports_finite": True}
    return checks, {"wasserstein": d}, ["distance.json"]


_RUNNERS = {"fp1d": _run_jko1d, "qdd1d": _run_jko1d, "thinfilm1d": _run_jko1d,
            "blob": _run_blob, "ksfd": _run_ksfd, "pme2d": _run_pme2d,
            "distance": _run_distance}


def run_experiment(spec):
    """Execute one experiment; writes outputs plus manifest.json to the
    configured output directory and returns the manifest dict (including the
    process exit code under 'exit_code')."""
    outdir = Path(spec.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": spec.config_echo,
        "versions": {
            "wgflow": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    start = time.perf_counter()
    try:
        checks, meta, files = _RUNNERS[spec.scheme](spec, outdir)
        manifest["structure_checks"] = checks
        manifest["metadata"] = meta
        manifest["files"] = files
        if all(checks.values()):
            manifest["status"] = "ok"
            manifest["exit_code"] = 0
        else:
            manifest["status"] = "structure_check_failed"
            manifest["exit_code"] = 2
    except SOLVER_ERRORS as exc:
        manifest["structure_checks"] = {}
        manifest["status"] = "solver_failure"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["exit_code"] = 3
    manifest["wall_time_seconds"] = time.perf_counter() - start
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


# --- profile comparison -----------------------------------------------------

def _parse_analytic(desc):
    """'analytic:barenblatt1d:m=2,mass=1,t=0.05' -> (density callable on the
    line, half-width of support, total mass)."""
    parts = desc.split(":")
    if len(parts) != 3:
        raise ConfigError("analytic reference must look like "
                          "'analytic:name:k=v,k=v'")
    _, name, kvs = parts
    params = {}
    for kv in kvs.split(","):
        k, _, v = kv.partition("=")
        params[k.strip()] = float(v)
    if name == "barenblatt1d":
        prof = barenblatt1d(params["m"], mass=params.get("mass", 1.0))
    elif name == "barenblatt2d":
        prof = barenblatt2d(params["m"], mass=params.get("mass", 1.0))
    else:
        raise ConfigError(f"unknown analytic reference {name!r}")
    t = params["t"]
    return (lambda x: prof.density(x, t)), prof.support_radius(t), prof.mass


def compare_profiles(computed, reference, n_quad=20001):
    """L1 and Linf errors between a piecewise-constant density file and a
    reference (another file or an 'analytic:...' descriptor).  A trajectory
    CSV instead yields the fitted log-log decay slope of the energy column."""
    with open(computed) as fh:
        header = fh.readline().strip()
    if header.startswith("time,energy"):
        return _compare_decay(computed)
    rho = density_from_csv(computed)
    warnings = []
    if isinstance(reference, str) and reference.startswith("analytic:"):
        ref_fn, radius, ref_mass = _parse_analytic(reference)
        lo = min(rho.breakpoints[0], -radius)
        hi = max(rho.breakpoints[-1], radius)
        x = np.linspace(lo, hi, n_quad)
        xm = 0.5 * (x[:-1] + x[1:])
        diff = np.abs(rho(xm) - ref_fn(xm))
        l1 = float(np.sum(diff) * (hi - lo) / (n_quad - 1))
        linf = float(diff.max())
    else:
        eta = density_from_csv(reference)
        edges = np.union1d(rho.breakpoints, eta.breakpoints)
        mids = 0.5 * (edges[:-1] + edges[1:])
        diff = np.abs(rho(mids) - eta(mids))
        l1 = float(diff @ np.diff(edges))
        linf = float(diff.max())
        ref_mass = eta.total_mass()
    if abs(rho.total_mass() - ref_mass) > 1e-6:
        warnings.append(
            f"mass mismatch: computed {rho.total_mass():.8f} vs reference "
            f"{ref_mass:.8f}")
    return {"l1": l1, "linf": linf, "warnings": warnings}


def _compare_decay(path, t_offset=0.0, window=None):
    times, energies = [], []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            times.append(float(row["time"]) + t_offset)
            energies.append(float(row["energy"]))
    t = np.asarray(times)
    e = np.asarray(energies)
    keep = (t > 0) & (e > 0)
    if window is not None:
        keep &= (t >= window[0]) & (t <= window[1])
    if keep.sum() < 2:
        raise ConfigError("not enough positive samples for a decay fit")
    slope, resid = fit_decay_slope(t[keep], e[keep])
    return {"decay_slope": slope, "fit_residual": resid,
            "n_samples": int(keep.sum()), "warnings": []}


# --- sweep ------------------------------------------------------------------

def _toml_scalar(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def _write_toml(cfg, path):
    lines = []
    for k, v in cfg.items():
        if not isinstance(v, dict):
            lines.append(f"{k} = {_toml_scalar(v)}")
    for k, v in cfg.items():
        if isinstance(v, dict):
            lines.append(f"\n[{k}]")
            lines.extend(f"{kk} = {_toml_scalar(vv)}" for kk, vv in v.items())
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_value(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text in ("true", "false"):
        return text == "true"
    return text


def run_sweep(config_path, param, values):
    """Spawn one independent run per parameter value; returns the list of
    per-run manifests plus the worst exit code."""
    base_spec = parse_config(config_path)  # validate before spawning
    with open(config_path, "rb") as fh:
        base = tomllib.load(fh)
    keys = param.split(".")
    results = []
    worst = 0
    sweep_dir = Path(base_spec.output_dir)
    sweep_dir.mkdir(parents=True, exist_ok=True)
    for i, text in enumerate(values):
        cfg = json.loads(json.dumps(base))  # deep copy
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = _parse_value(text)
        run_dir = sweep_dir / f"sweep_{i:03d}_{keys[-1]}_{text}"
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg["output_dir"] = str(run_dir)
        cfg_path = run_dir / "config.toml"
        _write_toml(cfg, cfg_path)
        proc = subprocess.run(
            [sys.executable, "-m", "wgflow.cli", "run", str(cfg_path)],
            capture_output=True, text=True)
        worst = max(worst, proc.returncode)
        results.append({"param": param, "value": text,
                        "output_dir": str(run_dir),
                        "exit_code": proc.returncode})
    with open(sweep_dir / "sweep_manifest.json", "w") as fh:
        json.dump({"param": param, "runs": results}, fh, indent=2)
    return results, worst


# --- entry point ------------------------------------------------------------

def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="wgflow",
        description="Lagrangian Wasserstein gradient-flow experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute one experiment config")
    p_run.add_argument("config")
    p_cmp = sub.add_parser("compare", help="error norms between profiles")
    p_cmp.add_argument("computed")
    p_cmp.add_argument("reference",
                       help="density CSV file or analytic:name:k=v,...")
    p_sweep = sub.add_parser("sweep", help="batch of runs over one parameter")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--param", required=True,
                         help="dotted key and values, e.g. "
                              "discretization.dt=1e-4,5e-5")
    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            manifest = run_experiment(parse_config(args.config))
            print(json.dumps({k: manifest[k] for k in
                              ("status", "exit_code", "structure_checks")
                              if k in manifest}, indent=2))
            return manifest["exit_code"]
        if args.command == "compare":
            result = compare_profiles(args.computed, args.reference)
            print(json.dumps(result, indent=2))
            return 0
        if args.command == "sweep":
            key, _, vals = args.param.partition("=")
            if not vals:
                raise ConfigError("--param must look like key=v1,v2,...")
            results, worst = run_sweep(args.config, key, vals.split(","))
            print(json.dumps(results, indent=2))
            return worst
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SOLVER_ERRORS as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
