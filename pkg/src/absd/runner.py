"""Drive a configured simulation: initial data, stepping, sampling, output."""
from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, build_grid_from, build_model, parse_bc
from .errors import ConfigError
from .functionals import FunctionalSeries, _level0_energy, boundary_dissipation, sample_functionals
from .initdata import make_bump_data
from .io import load_snapshot, save_snapshot, state_from_snapshot
from .geometry import H_STAGGER
from .numerics import tree_sum
from .operators import FieldSet, curl_e
from .stepper import StepParams, Stepper, cfl_dt


@dataclass
class RunResult:
    series: FunctionalSeries
    state: object
    grid: object
    model: object
    dt: float
    steps: int
    wall_time: float


def step_size(cfg: ExperimentConfig, grid, model) -> tuple[float, int]:
    """Step and step count reaching ``final_time`` exactly.

    The CFL step (or the configured ``dt``) is shrunk to ``T / ceil(T / dt)``.
    """
    s = cfg.stepping
    try:
        bound = cfl_dt(grid, model, 1.0)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    dt = s.dt if s.dt is not None else s.cfl_safety * bound
    if dt > bound * (1 + 1e-12):
        raise ConfigError(f"dt={dt:.6g} exceeds the stability bound {bound:.6g}")
    T = s.final_time
    if T == 0:
        return dt, 0
    n = max(1, math.ceil(T / dt - 1e-9))
    return T / n, n


def initial_fields(cfg: ExperimentConfig, grid, model) -> FieldSet:
    i = cfg.initial
    if i.recipe == "zero":
        return FieldSet.zeros(grid)
    if i.recipe == "file":
        data = load_snapshot(i.file)
        if tuple(data["n"]) != tuple(grid.n):
            raise ConfigError(f"snapshot grid {data['n']} does not match {grid.n}")
        return data["fields"]
    center = i.center
    if center is None:
        from .initdata import random_bump_params

        rng = np.random.default_rng(i.seed)
        center = random_bump_params(rng, grid, (i.radius, i.radius))["center"]
    try:
        return make_bump_data(grid, center, i.radius, i.amplitude, i.polarization, model,
                              i.recipe, i.h_polarization)
    except ValueError as err:
        raise ConfigError(f"initial: {err}") from None


def viscous_loss(grid, params: StepParams, E_old, E_new) -> float:
    """Energy removed by the grid-scale damping term over one step."""
    c0 = curl_e(grid, E_old)
    c1 = curl_e(grid, E_new)
    nu = params.viscosity * min(grid.h) ** 2
    tot = sum(tree_sum(grid.weights(H_STAGGER[c]) * 0.5 * (c0[c] + c1[c]) * c0[c])
              for c in range(3))
    return params.dt * nu * tot


def run_config(cfg: ExperimentConfig, out_dir=None, threads: int = 1, resume=None,
               fields: FieldSet | None = None, progress=None, write: bool = True) -> RunResult:
    """Run the simulation described by ``cfg``.

    Parameters
    ----------
    out_dir : path, optional
        Overrides ``[output] dir``. The series CSV and snapshots go here.
    threads : int
        Worker threads for the per-component updates; results do not depend
        on it.
    resume : path, optional
        Snapshot to continue from.
    fields : FieldSet, optional
        Initial fields overriding the ``[initial]`` block.
    progress : file, optional
        Stream for progress lines (defaults to stderr when a cadence is set).

    On solver failure the partial series is flushed to the output directory
    before the exception propagates.
    """
    start = time.perf_counter()
    grid = build_grid_from(cfg)
    model = build_model(cfg, grid)
    dt, nsteps = step_size(cfg, grid, model)
    bc = parse_bc(cfg.stepping.bc)
    params = StepParams(dt=dt, cfl_safety=cfg.stepping.cfl_safety,
                        newton_tol=cfg.stepping.newton_tol,
                        newton_max=cfg.stepping.newton_max, threads=threads, bc=bc,
                        viscosity=cfg.stepping.viscosity)
    stepper = Stepper(grid, model, params)
    out = out_dir if out_dir is not None else cfg.output.dir
    out = Path(out) if out is not None and write else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    kmax = cfg.stepping.functional_order
    stride = cfg.stepping.sample_stride
    series = FunctionalSeries()
    progress = progress if progress is not None else sys.stderr

    if resume is not None:
        data = load_snapshot(resume)
        if tuple(data["n"]) != tuple(grid.n):
            raise ConfigError(f"snapshot grid {data['n']} does not match {grid.n}")
        if data["dt"] != dt:
            raise ConfigError(f"snapshot step {data['dt']!r} does not match {dt!r}")
        state = state_from_snapshot(data)
    else:
        init = fields if fields is not None else initial_fields(cfg, grid, model)
        state = stepper.initial_state(init)
        state.e0_initial = 0.5 * _level0_energy(grid, state.E, state.D, state.H, state.B)
        series.append(sample_functionals(state, model, grid, kmax, params.bc))

    d_prev = boundary_dissipation(grid, model, state.E, params.bc)
    try:
        while state.step < nsteps:
            old = state
            state = stepper.step(state)
            d_now = boundary_dissipation(grid, model, state.E, params.bc)
            state.dissipation_integral += 0.5 * dt * (d_prev + d_now)
            if params.viscosity:
                state.dissipation_integral += viscous_loss(grid, params, old.E, state.E)
            d_prev = d_now
            if state.step % stride == 0 or state.step == nsteps:
                series.append(sample_functionals(state, model, grid, kmax, params.bc))
            every = cfg.output.snapshot_every
            if out is not None and every and state.step % every == 0:
                save_snapshot(out / f"snapshot_{state.step:08d}.absd", state, grid)
            pe = cfg.output.progress_every
            if pe and state.step % pe == 0:
                row = series.rows[-1] if series.rows else [state.t, np.nan]
                print(f"step {state.step}/{nsteps} t={state.t:.6g} e0={row[1]:.6e}",
                      file=progress, flush=True)
    finally:
        stepper.close()
        if out is not None:
            series.to_csv(out / "series.csv")
    if out is not None:
        save_snapshot(out / "final.absd", state, grid)
    return RunResult(series, state, grid, model, dt, nsteps, time.perf_counter() - start)
