"""Configuration-driven experiment runner.

Each built-in recipe reproduces one of the theory curves as a deterministic
parameter sweep; custom sweeps load from a JSON file with the same fields
(see docs/config_schema.json).  Every sweep point is fitted for its
rise-time and lands as one CSV row; traces, per-realization data, and a
provenance sidecar are written next to it.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import math
import os
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import analysis, coupled_dipole, maxwell_bloch
from .core import (AtomicSpecies, ConfigError, EnsembleConfig, PulseShape,
                   box_side_for_sigma_ss, ensemble_from_dict, load_config_dict,
                   optical_depth_from_geometry, pulse_from_dict, species_from_dict)

MODELS = ("maxwell_bloch", "coupled_dipole")
SWEPT_PARAMETERS = ("sigma_ss", "box_side", "beta", "detuning")

#: dephasing coefficients (beta/2pi, Hz cm^3) of the standard suppression sweep
BETA_SET = (0.0, 9e-7, 2.8e-6, 9e-6, 2.8e-5, 9e-5)
BEST_BETA = 4.9e-5

DEFAULT_OD_GRID = tuple(float(x) for x in np.geomspace(0.02, 2.0, 20))


@dataclass(frozen=True)
class ExperimentRecipe:
    name: str
    model: str
    swept_parameter: str
    sweep_values: tuple[float, ...]
    species: AtomicSpecies = AtomicSpecies()
    pulse: PulseShape = PulseShape()
    ensemble: EnsembleConfig = EnsembleConfig()
    mode: str = "vectorial"
    sigma_ss_fixed: float = 0.5        # optical depth for non-sigma_ss MB sweeps
    od_grid: tuple[float, ...] = ()    # inner optical-depth grid for beta sweeps
    dump_grid: bool = False
    description: str = ""

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.swept_parameter not in SWEPT_PARAMETERS:
            raise ConfigError(f"unknown swept parameter {self.swept_parameter!r}")
        if len(self.sweep_values) == 0:
            raise ConfigError("sweep_values must be non-empty")
        diffs = np.diff(self.sweep_values)
        if len(diffs) and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ConfigError("sweep_values must be strictly monotone")

    def to_dict(self) -> dict:
        lam_um = self.species.wavelength_um
        gamma = self.species.decay_rate_rad_per_s
        return {
            "name": self.name,
            "model": self.model,
            "swept_parameter": self.swept_parameter,
            "sweep_values": list(self.sweep_values),
            "mode": self.mode,
            "sigma_ss_fixed": self.sigma_ss_fixed,
            "od_grid": list(self.od_grid),
            "dump_grid": self.dump_grid,
            "species": {
                "excited_lifetime_ns": self.species.excited_lifetime_ns,
                "wavelength_nm": self.species.wavelength_nm,
            },
            "pulse": {
                "kind": self.pulse.kind,
                "rabi_peak_rad_per_s": self.pulse.amplitude * gamma,
                "detuning_rad_per_s": self.pulse.detuning * gamma,
                "rise_10_90_ns": self.pulse.rise_10_90 * self.species.excited_lifetime_ns,
            },
            "ensemble": {
                "atom_count": self.ensemble.atom_count,
                "box_side_um": [a * lam_um for a in self.ensemble.box],
                "beta_over_2pi_hz_cm3": self.ensemble.beta_over_2pi_hz_cm3,
                "min_pair_separation_um": self.ensemble.min_pair_separation * lam_um,
                "rng_seed": self.ensemble.rng_seed,
                "realization_count": self.ensemble.realization_count,
            },
        }


def recipe_from_dict(data: dict) -> ExperimentRecipe:
    try:
        species = species_from_dict(data.get("species", {}))
        pulse = pulse_from_dict(data.get("pulse", {}), species)
        ensemble = ensemble_from_dict(data.get("ensemble", {}), species)
        return ExperimentRecipe(
            name=str(data["name"]),
            model=str(data["model"]),
            swept_parameter=str(data["swept_parameter"]),
            sweep_values=tuple(float(v) for v in data["sweep_values"]),
            species=species,
            pulse=pulse,
            ensemble=ensemble,
            mode=str(data.get("mode", "vectorial")),
            sigma_ss_fixed=float(data.get("sigma_ss_fixed", 0.5)),
            od_grid=tuple(float(v) for v in data.get("od_grid", [])),
            dump_grid=bool(data.get("dump_grid", False)),
            description=str(data.get("description", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad recipe config: {exc}") from exc


def load_recipe(path) -> ExperimentRecipe:
    return recipe_from_dict(load_config_dict(path))


def recipe_catalog() -> list[ExperimentRecipe]:
    """Built-in recipes, one per reproduced theory figure."""
    step = PulseShape(kind="step")
    n500 = EnsembleConfig(atom_count=500, rng_seed=1000, realization_count=10)
    return [
        ExperimentRecipe(
            name="fig4a_mb", model="maxwell_bloch", swept_parameter="sigma_ss",
            sweep_values=tuple(float(x) for x in np.geomspace(0.024, 1.11, 16)),
            description="propagation-model rise-time vs steady-state optical depth"),
        ExperimentRecipe(
            name="fig4b_best_beta", model="coupled_dipole", swept_parameter="sigma_ss",
            sweep_values=DEFAULT_OD_GRID, pulse=step,
            ensemble=replace(n500, beta_over_2pi_hz_cm3=BEST_BETA),
            description="collective model at the best-fit dephasing coefficient"),
        ExperimentRecipe(
            name="fig6_boxes", model="coupled_dipole", swept_parameter="box_side",
            sweep_values=(50.0, 20.0, 15.0, 12.0), pulse=step, ensemble=n500,
            description="dipole build-up for shrinking cubes at fixed atom number"),
        ExperimentRecipe(
            name="fig7_beta", model="coupled_dipole", swept_parameter="beta",
            sweep_values=BETA_SET, od_grid=DEFAULT_OD_GRID, pulse=step, ensemble=n500,
            description="rise-time vs optical depth for the dephasing-coefficient family"),
        ExperimentRecipe(
            name="fig8_trace", model="maxwell_bloch", swept_parameter="sigma_ss",
            sweep_values=(0.5,), dump_grid=True,
            description="single propagation run with the full space-time grid dump"),
        ExperimentRecipe(
            name="fig9_scalar_vs_vectorial", model="coupled_dipole",
            swept_parameter="beta", sweep_values=BETA_SET, od_grid=DEFAULT_OD_GRID,
            pulse=step, ensemble=n500, mode="scalar",
            description="the fig7 family with the coupling angle fixed to zero"),
        ExperimentRecipe(
            name="fig10_detuning", model="maxwell_bloch", swept_parameter="detuning",
            sweep_values=(0.0, 1.0 / 3.0, 0.5), sigma_ss_fixed=0.5,
            description="absorption transients at fixed optical depth and three detunings"),
        ExperimentRecipe(
            name="fig11_detuning_sweep", model="maxwell_bloch",
            swept_parameter="detuning",
            sweep_values=tuple(round(0.1 * k, 10) for k in range(12)),
            sigma_ss_fixed=1.0,
            description="rise-time vs laser detuning near unit optical depth"),
    ]


def get_recipe(name: str) -> ExperimentRecipe:
    for recipe in recipe_catalog():
        if recipe.name == name:
            return recipe
    raise ConfigError(f"no recipe named {name!r}; try 'subabsorb list'")


# ----------------------------------------------------------------------
# execution

@dataclass(frozen=True)
class SweepRow:
    swept_value: float
    sigma_ss: float
    tau_over_2tau_a: float
    tau_err_over_2tau_a: float
    seed: int


@dataclass
class SweepResult:
    recipe: ExperimentRecipe
    rows: list[SweepRow]
    provenance: dict
    complete: bool = True


def _git_hash() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _config_hash(recipe: ExperimentRecipe) -> str:
    blob = json.dumps(recipe.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _mb_point(recipe: ExperimentRecipe, value: float, base_seed: int):
    pulse = recipe.pulse
    sigma_ss = recipe.sigma_ss_fixed
    if recipe.swept_parameter == "sigma_ss":
        sigma_ss = value
    elif recipe.swept_parameter == "detuning":
        pulse = replace(pulse, detuning=value)
    else:
        raise ConfigError(
            f"swept parameter {recipe.swept_parameter!r} not supported by the "
            "propagation model")
    trace = maxwell_bloch.simulate_transmission(pulse, sigma_ss)
    od = analysis.optical_depth_trace(trace)
    fit = analysis.fit_rise_time(od)
    row = SweepRow(swept_value=value, sigma_ss=sigma_ss,
                   tau_over_2tau_a=fit.tau / 2.0, tau_err_over_2tau_a=0.0,
                   seed=base_seed)
    artifacts = {"trace": trace}
    if recipe.dump_grid:
        artifacts["grid"] = maxwell_bloch.propagate_pulse(pulse, sigma_ss)
    return row, artifacts


def _cd_point(recipe: ExperimentRecipe, value: float, index: int, base_seed: int,
              realizations: int):
    ensemble = recipe.ensemble
    if recipe.swept_parameter == "sigma_ss":
        side = box_side_for_sigma_ss(value, ensemble.atom_count)
    elif recipe.swept_parameter == "box_side":
        side = value
    else:
        raise ConfigError(
            f"swept parameter {recipe.swept_parameter!r} not supported by the "
            "collective model")
    point_seed = base_seed + index * realizations
    config = replace(ensemble, box=(side, side, side), rng_seed=point_seed,
                     realization_count=realizations)
    sigma_ss = optical_depth_from_geometry(config).sigma_ss
    result = coupled_dipole.run_ensemble(config, species=recipe.species,
                                         pulse=recipe.pulse, mode=recipe.mode)
    taus = []
    for tr in result.traces:
        od = analysis.trace_from_dipole(tr, sigma_ss)
        taus.append(analysis.fit_rise_time(od).tau)
    taus = np.asarray(taus)
    err = taus.std(ddof=1) / math.sqrt(len(taus)) if len(taus) > 1 else 0.0
    row = SweepRow(swept_value=value, sigma_ss=sigma_ss,
                   tau_over_2tau_a=float(taus.mean() / 2.0),
                   tau_err_over_2tau_a=float(err / 2.0), seed=point_seed)
    return row, {"ensemble": result, "config": config, "sigma_ss": sigma_ss}


def _beta_points(recipe: ExperimentRecipe, beta: float, base_seed: int,
                 realizations: int):
    """Inner optical-depth grid at one dephasing coefficient.

    Seeds depend on the grid index only, so every beta value sees the same
    disorder realizations and the suppression trend is not confounded by
    configuration noise.
    """
    od_grid = recipe.od_grid or DEFAULT_OD_GRID
    rows = []
    for k, od in enumerate(od_grid):
        side = box_side_for_sigma_ss(od, recipe.ensemble.atom_count)
        point_seed = base_seed + k * realizations
        config = replace(recipe.ensemble, box=(side, side, side),
                         rng_seed=point_seed, realization_count=realizations,
                         beta_over_2pi_hz_cm3=beta)
        sigma_ss = optical_depth_from_geometry(config).sigma_ss
        result = coupled_dipole.run_ensemble(config, species=recipe.species,
                                             pulse=recipe.pulse, mode=recipe.mode)
        taus = np.asarray([
            analysis.fit_rise_time(analysis.trace_from_dipole(tr, sigma_ss)).tau
            for tr in result.traces])
        err = taus.std(ddof=1) / math.sqrt(len(taus)) if len(taus) > 1 else 0.0
        rows.append(SweepRow(swept_value=beta, sigma_ss=sigma_ss,
                             tau_over_2tau_a=float(taus.mean() / 2.0),
                             tau_err_over_2tau_a=float(err / 2.0), seed=point_seed))
    return rows


def _write_mb_artifacts(out_dir, recipe, index, artifacts, species):
    trace = artifacts["trace"]
    t_ns = species.time_to_ns(trace.t_points)
    _write_csv(os.path.join(out_dir, f"point_{index:02d}_trace.csv"),
               ["t_ns", "I_input", "I_output"],
               zip(t_ns, trace.intensity_input, trace.intensity_output))
    grid = artifacts.get("grid")
    if grid is not None:
        np.savez_compressed(
            os.path.join(out_dir, f"point_{index:02d}_grid.npz"),
            z_points=grid.z_points, t_ns=species.time_to_ns(grid.t_points),
            rabi=grid.rabi, rho00=grid.rho00, rho11=grid.rho11, rho01=grid.rho01,
            sigma_ss=grid.sigma_ss)


def _write_cd_artifacts(out_dir, recipe, index, artifacts, species):
    result = artifacts["ensemble"]
    config = artifacts["config"]
    sigma_ss = artifacts["sigma_ss"]
    t_ns = species.time_to_ns(result.t_points)
    _write_csv(os.path.join(out_dir, f"point_{index:02d}_aggregate.csv"),
               ["t_ns", "P_mean", "P_stderr"],
               zip(t_ns, result.p_mean, result.p_stderr))
    gamma_dd = config.gamma_dd(species)
    for r, (trace, realization, seed) in enumerate(
            zip(result.traces, result.realizations, result.seeds)):
        _write_csv(os.path.join(out_dir, f"point_{index:02d}_real_{r:02d}.csv"),
                   ["t_ns", "P_normalized"], zip(t_ns, trace.p_normalized))
        meta = {"seed": seed, "positions_hash": realization.positions_hash(),
                "sigma_ss": sigma_ss, "gamma_dd_over_gamma": gamma_dd}
        with open(os.path.join(out_dir, f"point_{index:02d}_real_{r:02d}.json"),
                  "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)


def run_recipe(recipe: ExperimentRecipe, out_dir, seed: int | None = None,
               realizations: int | None = None, threads: int = 1,
               write_traces: bool = True) -> SweepResult:
    """Execute every sweep point, fit rise-times, write CSV + JSON outputs.

    Fully deterministic for fixed seeds; sweep points may execute on a
    bounded worker pool, and results are assembled in sweep order regardless
    of completion order.  A fit failure aborts the sweep with the completed
    rows flushed and the provenance marked incomplete.
    """
    base_seed = recipe.ensemble.rng_seed if seed is None else int(seed)
    n_real = recipe.ensemble.realization_count if realizations is None else int(realizations)
    out_dir = str(out_dir)
    run_dir = os.path.join(out_dir, recipe.name)
    os.makedirs(run_dir, exist_ok=True)

    def point(index_value):
        index, value = index_value
        if recipe.model == "maxwell_bloch":
            row, artifacts = _mb_point(recipe, value, base_seed)
            return [row], artifacts
        if recipe.swept_parameter == "beta":
            return _beta_points(recipe, value, base_seed, n_real), None
        row, artifacts = _cd_point(recipe, value, index, base_seed, n_real)
        return [row], artifacts

    jobs = list(enumerate(recipe.sweep_values))
    rows: list[SweepRow] = []
    complete = True
    error: Exception | None = None
    results: list = [None] * len(jobs)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(point, job) for job in jobs]
            for i, fut in enumerate(futures):
                try:
                    results[i] = fut.result()
                except (analysis.FitError, analysis.DegenerateTraceError) as exc:
                    complete = False
                    error = exc
                    break
    else:
        for i, job in enumerate(jobs):
            try:
                results[i] = point(job)
            except (analysis.FitError, analysis.DegenerateTraceError) as exc:
                complete = False
                error = exc
                break

    for index, res in enumerate(results):
        if res is None:
            continue
        point_rows, artifacts = res
        rows.extend(point_rows)
        if write_traces and artifacts is not None:
            if recipe.model == "maxwell_bloch":
                _write_mb_artifacts(run_dir, recipe, index, artifacts, recipe.species)
            else:
                _write_cd_artifacts(run_dir, recipe, index, artifacts, recipe.species)

    provenance = {
        "recipe": recipe.name,
        "config_hash": _config_hash(recipe),
        "git_hash": _git_hash(),
        "base_seed": base_seed,
        "realizations": n_real,
        "complete": complete,
        "config": recipe.to_dict(),
    }
    _write_csv(os.path.join(run_dir, "sweep.csv"),
               ["swept_value", "sigma_ss", "tau_over_2tau_a", "tau_err_over_2tau_a",
                "seed"],
               [(r.swept_value, r.sigma_ss, r.tau_over_2tau_a, r.tau_err_over_2tau_a,
                 r.seed) for r in rows])
    meta = dict(provenance)
    meta["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    with open(os.path.join(run_dir, "sweep_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)

    result = SweepResult(recipe=recipe, rows=rows, provenance=provenance,
                         complete=complete)
    if error is not None:
        raise analysis.FitError(
            f"sweep {recipe.name} aborted at a fit failure; partial results in "
            f"{run_dir}") from error
    return result
