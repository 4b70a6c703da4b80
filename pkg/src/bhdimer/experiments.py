"""Experiment runners: compose the solver, analysis and propagation modules into data files."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import os
import platform
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import scipy

from . import __version__
from .config import ExperimentConfig, build_config
from .eigensolver import (
    EigenSystem,
    NonConvergenceError,
    cache_key,
    load_system,
    model_block,
    save_system,
    solve_block,
    convergence_sweep,
)
from .fock import FockSpace
from .model import ModelParams
from .perturbation import sector_shifts
from .semiclassical import continuation, omega_a, steady_state
from .spectral import (
    EigenOperatorSet,
    antibonding_purities,
    bonding_amplitudes,
    branch_labels,
    eigenoperator_set,
    ns_distances,
    select_nonstationary,
)
from .trajectories import InitialStateSpec, KickProtocol, kick_experiment

log = logging.getLogger(__name__)

CACHE_ENV = "BHDIMER_CACHE_DIR"
SCHEMA_VERSION = 1

SCHEMAS = {
    "spectrum": ("f_tilde", "n", "re_lambda", "im_lambda", "branch"),
    "leading": ("f_tilde", "n", "sector", "rank", "re_lambda", "im_lambda", "residual"),
    "ns_distances": ("n", "f_tilde", "pair", "distance"),
    "eigenoperator_observables": ("n", "f_tilde", "sector", "re_a_b", "im_a_b", "abs_a_b_scaled", "purity_a"),
    "dephasing_shifts": ("n_scale", "sector", "re_lambda0", "im_lambda0", "re_shift", "im_shift", "rate"),
    "dephased_distances": ("n", "pair", "distance", "dephased"),
    "kick_distances": ("t", "d_err_vs_clean", "d_clean_vs_init", "d_err_vs_init"),
    "kick_amplitudes": ("t", "re_a_b_clean", "im_a_b_clean", "re_a_b_kicked", "im_a_b_kicked"),
    "semiclassical": ("f_tilde", "re_alpha_b", "im_alpha_b", "abs_alpha_b", "n_solutions", "re_omega_a", "im_omega_a"),
    "convergence": ("n", "k_b", "rank", "re_lambda", "im_lambda", "stable"),
}


def cache_root() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "bhdimer"))


def fmt(x) -> str:
    """17 significant digits for floats; ints and strings verbatim."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: Path, schema: str, rows: Sequence[Sequence[Any]]) -> Path:
    cols = SCHEMAS[schema]
    lines = [f"# schema: {schema} v{SCHEMA_VERSION}", ",".join(cols)]
    for r in rows:
        if len(r) != len(cols):
            raise ValueError(f"row {r} does not match schema {schema} {cols}")
        lines.append(",".join(fmt(x) for x in r))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> tuple[str, list[dict[str, str]]]:
    """Schema name (version stripped) and rows as string dicts."""
    lines = Path(path).read_text().splitlines()
    schema = lines[0].split(":", 1)[1].strip().rsplit(" v", 1)[0]
    cols = lines[1].split(",")
    return schema, [dict(zip(cols, ln.split(","))) for ln in lines[2:]]


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    experiment: str
    versions: dict
    started: str
    wall_seconds: float = 0.0
    tasks: list = field(default_factory=list)
    files: list = field(default_factory=list)
    fallbacks: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add_file(self, path: Path, schema: str | None, root: Path):
        rel = str(Path(path).relative_to(root))
        if any(f["path"] == rel for f in self.files):
            raise ValueError(f"file {rel} emitted twice")
        self.files.append({"path": rel, "schema": schema, "sha256": sha256_file(path)})

    def write(self, directory: Path) -> Path:
        p = directory / "run_manifest.json"
        p.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str))
        return p


def versions() -> dict:
    return {"bhdimer": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


# ---- solving with cache ----------------------------------------------------------------------------


def parse_sigma(value) -> complex | str | None:
    if value is None or value == "auto":
        return value
    return complex(str(value).replace(" ", ""))


def auto_shift(params: ModelParams, sector: str) -> complex:
    """Shift for shift-invert: just right of 0 for steady sectors, i*omega_A for coherences."""
    if sector in ("ee", "oo"):
        return complex(1e-2)
    state, _ = steady_state(params)
    w = omega_a(state.alpha_b, params, warn=False)
    w = float(np.real(w)) if np.isreal(w) else 0.0
    return complex(0.0, w if sector == "eo" else -w)


class CachedSolver:
    """Sector solves keyed by (params, cutoffs, sector, settings) with an on-disk cache."""

    def __init__(self, solver: dict, cache_dir: Path | None = None, fallback_dense: bool = False):
        self.settings = {k: v for k, v in solver.items() if k != "fallback_dense"}
        if self.settings.get("krylov_dim") is None:
            self.settings.pop("krylov_dim", None)
        self.cache_dir = cache_dir
        self.fallback_dense = fallback_dense
        self.events: list[dict] = []

    def _kw(self, params: ModelParams, sector: str) -> dict:
        kw = dict(self.settings)
        method = kw.pop("method")
        sigma = parse_sigma(kw.pop("sigma", None))
        if method == "shift-invert":
            kw["sigma"] = auto_shift(params, sector) if sigma in (None, "auto") else sigma
            for k in ("auto_dense_max", "dense_limit"):
                kw.pop(k, None)
        return {"method": method, **kw}

    def system(self, params: ModelParams, space: FockSpace, sector: str) -> EigenSystem:
        kw = self._kw(params, sector)
        block = model_block(params, space, sector)
        key = cache_key(params, space, sector, kw)
        if self.cache_dir is not None:
            hit = load_system(self.cache_dir, key, block)
            if hit is not None:
                self.events.append({"sector": sector, "n": params.n_scale, "cache": "hit", "key": key})
                return hit
        method = kw.pop("method")
        try:
            system = solve_block(block, method=method, **kw)
        except NonConvergenceError as exc:
            if not (self.fallback_dense and block.dim <= kw.get("dense_limit", 20000)):
                raise
            self.events.append(
                {"sector": sector, "n": params.n_scale, "f_tilde": params.f_tilde, "fallback": "dense", "reason": str(exc)}
            )
            system = solve_block(block, method="dense")
        self.events.append(
            {"sector": sector, "n": params.n_scale, "cache": "miss", "key": key, "report": asdict(system.report)}
        )
        if self.cache_dir is not None:
            save_system(self.cache_dir, key, system)
        return system

    def operator_set(self, params, space, derive_oe=True, previous=None) -> EigenOperatorSet:
        sectors = ("ee", "oo", "eo") if derive_oe else ("ee", "oo", "eo", "oe")
        systems = {s: self.system(params, space, s) for s in sectors}
        ops, _ = eigenoperator_set(params, space, systems=systems, derive_oe=derive_oe, previous=previous)
        return ops


def _solver_for(cfg: ExperimentConfig) -> CachedSolver:
    cdir = cache_root() / "eigensystems" if cfg.cache else None
    return CachedSolver(cfg.solver, cdir, bool(cfg.solver.get("fallback_dense")))


def _map(fn: Callable, args: list, workers: int) -> list:
    """Ordered map; a process pool when workers > 1."""
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(fn, *a) for a in args]
        return [f.result() for f in futs]


# ---- experiments -------------------------------------------------------------------------------------


def _eo_task(raw: dict, n: int, f: float):
    cfg = build_config(raw)
    solver = _solver_for(cfg)
    p = cfg.params_for(n, f)
    return solver.system(p, cfg.space_for(n), "eo"), solver.events


def run_spectrum_sweep(cfg: ExperimentConfig, out: Path, man: RunManifest) -> list[tuple[Path, str]]:
    points = [(cfg.raw, n, f) for n in cfg.n_values for f in cfg.f_grid]
    results = _map(_eo_task, points, cfg.workers)
    spectrum, leading = [], []
    for n in cfg.n_values:
        selected, fs = [], []
        prev = None
        for (_, nn, f), (system, events) in zip(points, results):
            if nn != n:
                continue
            man.tasks.append({"task": f"eo n={n} f={f}", "status": "ok", "events": events})
            pair = select_nonstationary(system, previous=prev)
            prev = pair.right
            selected.append(pair)
            fs.append(f)
            for r, lam in enumerate(system.values[: cfg.solver["n_pairs"]]):
                leading.append((f, n, "eo", r, lam.real, lam.imag, system.residuals[r]))
        for f, pair, br in zip(fs, selected, branch_labels(selected)):
            spectrum.append((f, n, pair.lam.real, pair.lam.imag, br))
    return [
        (write_csv(out / "spectrum.csv", "spectrum", spectrum), "spectrum"),
        (write_csv(out / "leading.csv", "leading", leading), "leading"),
    ]


def _ns_task(raw: dict, n: int, f: float, dephase_rate: float = 0.0):
    cfg = build_config(raw)
    solver = _solver_for(cfg)
    p = cfg.params_for(n, f).replace(dephase_rate=dephase_rate)
    ops = solver.operator_set(p, cfg.space_for(n), derive_oe=True)
    amps = bonding_amplitudes(ops)
    pur = antibonding_purities(ops)
    obs = [(n, f, s, amps[s].real, amps[s].imag, abs(amps[s]) / np.sqrt(n), pur[s]) for s in ("ee", "oo", "eo", "oe")]
    return ns_distances(ops), obs, solver.events


def run_ns_scaling(cfg: ExperimentConfig, out: Path, man: RunManifest):
    args = [(cfg.raw, n, f) for f in cfg.f_grid for n in cfg.n_values]
    rows, obs = [], []
    for (_, n, f), (dist, o, events) in zip(args, _map(_ns_task, args, cfg.workers)):
        man.tasks.append({"task": f"ns n={n} f={f}", "status": "ok", "events": events})
        rows.extend((n, f, pair, d) for pair, d in dist.items())
        obs.extend(o)
    return [
        (write_csv(out / "ns_distances.csv", "ns_distances", rows), "ns_distances"),
        (write_csv(out / "eigenoperator_observables.csv", "eigenoperator_observables", obs), "eigenoperator_observables"),
    ]


def run_dephasing(cfg: ExperimentConfig, out: Path, man: RunManifest):
    opts = cfg.options
    rate = opts["rate"] if opts["rate"] is not None else cfg.params.gamma / 10
    solver = _solver_for(cfg)
    shifts, dist = [], []
    f = cfg.f_grid[0]
    for n in cfg.n_values:
        p = cfg.params_for(n, f).replace(dephase_rate=0.0)
        ops = solver.operator_set(p, cfg.space_for(n), derive_oe=False)
        for r in sector_shifts(ops, rate, opts["sectors"]):
            shifts.append((n, r.sector, r.lambda0.real, r.lambda0.imag, r.delta_lambda.real, r.delta_lambda.imag, rate))
        dist.extend((n, pair, d, 0) for pair, d in ns_distances(ops).items())
        if opts["nonperturbative"]:
            space = FockSpace(cfg.k_b[n] + int(opts["k_b_extra"]), cfg.k_a)
            dops = solver.operator_set(p.replace(dephase_rate=rate), space, derive_oe=True)
            dist.extend((n, pair, d, 1) for pair, d in ns_distances(dops).items())
        man.tasks.append({"task": f"dephasing n={n}", "status": "ok"})
    man.tasks.append({"task": "solver-events", "events": solver.events})
    return [
        (write_csv(out / "dephasing_shifts.csv", "dephasing_shifts", shifts), "dephasing_shifts"),
        (write_csv(out / "dephased_distances.csv", "dephased_distances", dist), "dephased_distances"),
    ]


def run_kick_recovery(cfg: ExperimentConfig, out: Path, man: RunManifest):
    opts = cfg.options
    n = cfg.n_values[0]
    f = cfg.f_grid[0]
    solver = _solver_for(cfg)
    p = cfg.params_for(n, f)
    ops = solver.operator_set(p, cfg.space_for(n), derive_oe=True)
    t_grid = np.round(np.arange(0.0, opts["t_final"] + opts["dt"] / 2, opts["dt"]), 12)
    grid = np.arange(-opts["wigner_extent"], opts["wigner_extent"] + opts["wigner_step"] / 2, opts["wigner_step"])
    omega = float(ops.lambdas["eo"].imag) if opts["co_rotate"] else None
    res = kick_experiment(
        InitialStateSpec(float(opts["b"]), complex(opts["c0"]), ops),
        KickProtocol(float(opts["t_kick"]), float(opts["delta_phi"])),
        t_grid,
        mode=opts["mode"],
        snapshot_times=opts["snapshot_times"],
        wigner_grid=grid,
        co_rotate_omega=omega,
        n_traj=int(opts["n_traj"]),
        seed=int(opts["seed"]),
    )
    man.tasks.append({"task": f"kick n={n}", "status": "ok", "events": solver.events, "seconds": res.seconds})
    man.extra.update(
        {
            "repair": res.repair,
            "mode": res.mode,
            "seed": int(opts["seed"]),
            "n_traj": int(opts["n_traj"]) if res.mode == "trajectories" else None,
            "cutoffs": [cfg.k_b[n], cfg.k_a],
            "lambda_eo": [ops.lambdas["eo"].real, ops.lambdas["eo"].imag],
            "co_rotate_omega": omega,
        }
    )
    files = [
        (write_csv(out / "kick_distances.csv", "kick_distances", list(res.rows())), "kick_distances"),
        (
            write_csv(
                out / "kick_amplitudes.csv",
                "kick_amplitudes",
                [(t, c.real, c.imag, e.real, e.imag) for t, c, e in zip(res.times, res.a_b_clean, res.a_b_err)],
            ),
            "kick_amplitudes",
        ),
    ]
    wdir = out / "wigner"
    wdir.mkdir(parents=True, exist_ok=True)
    axes = wdir / "axes.json"
    axes.write_text(json.dumps({"x": [fmt(x) for x in grid], "y": [fmt(x) for x in grid], "layout": "rows index y"}))
    files.append((axes, None))
    for (t, mode, label), w in sorted(res.snapshots.items()):
        path = wdir / f"wigner_t{t:09.4f}_{mode}_{label}.npy"
        np.save(path, np.ascontiguousarray(w))
        files.append((path, "wigner-npy"))
    return files


def run_semiclassical(cfg: ExperimentConfig, out: Path, man: RunManifest):
    branch = continuation(cfg.params, cfg.f_grid, direction=cfg.options["direction"])
    rows = []
    for f, a, n_sol, w in zip(branch.f_tilde, branch.alpha_b, branch.n_solutions, branch.omega_a):
        rows.append((f, a.real, a.imag, abs(a), n_sol, np.real(w), np.imag(w)))
    man.extra["jump_location"] = branch.jump_location
    man.extra["jump_indices"] = list(map(int, branch.jump_indices))
    man.tasks.append({"task": "continuation", "status": "ok"})
    return [(write_csv(out / "semiclassical.csv", "semiclassical", rows), "semiclassical")]


def run_convergence(cfg: ExperimentConfig, out: Path, man: RunManifest):
    opts = cfg.options
    rows = []
    kw = {k: v for k, v in cfg.solver_kw().items() if k not in ("method", "sigma")}
    for n in cfg.n_values:
        pts = convergence_sweep(
            cfg.params_for(n, cfg.f_grid[0]),
            opts["k_b_ladder"],
            k_a=cfg.k_a,
            sector=opts["sector"],
            method=cfg.solver["method"],
            stability_tol=opts["stability_tol"],
            **kw,
        )
        for pt in pts:
            for r, lam in enumerate(pt.values):
                rows.append((n, pt.k_b, r, lam.real, lam.imag, "" if pt.stable is None else int(pt.stable)))
            man.tasks.append({"task": f"convergence n={n} k_b={pt.k_b}", "status": "ok", "report": asdict(pt.report)})
    return [(write_csv(out / "convergence.csv", "convergence", rows), "convergence")]


RUNNERS = {
    "spectrum-sweep": run_spectrum_sweep,
    "ns-scaling": run_ns_scaling,
    "dephasing": run_dephasing,
    "kick-recovery": run_kick_recovery,
    "semiclassical-sweep": run_semiclassical,
    "convergence-check": run_convergence,
}


def run(cfg: ExperimentConfig, output: Path | None = None) -> RunManifest:
    """Execute ``cfg`` and write data files plus ``run_manifest.json`` under the output directory."""
    out = Path(output or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    man = RunManifest(cfg.digest(), cfg.kind, versions(), _dt.datetime.now(_dt.timezone.utc).isoformat())
    files = RUNNERS[cfg.kind](cfg, out, man)
    for path, schema in files:
        man.add_file(path, schema, out)
    for t in man.tasks:
        for ev in t.get("events", []) or []:
            if "fallback" in ev:
                man.fallbacks.append(ev)
    man.wall_seconds = time.perf_counter() - t0
    man.write(out)
    return man


# ---- static checks and cache maintenance ------------------------------------------------------------


@dataclass
class Diagnostic:
    level: str
    key: str
    message: str

    def __str__(self):
        return f"[{self.level}] {self.key}: {self.message}"


def memory_estimate(k_b: int, k_a: int) -> dict:
    dim = k_b * k_a
    vec = dim * dim
    even = sum(1 for n in range(k_a) if n % 2 == 0) * k_b
    odd = dim - even
    blocks = {"ee": even * even, "eo": even * odd, "oe": odd * even, "oo": odd * odd}
    largest = max(blocks.values())
    # about a dozen nonzeros per row of the vectorized generator
    return {
        "dim": dim,
        "vectorized_dim": vec,
        "block_dims": blocks,
        "dense_block_bytes": largest * largest * 16,
        "sparse_bytes_estimate": 12 * vec * 32,
    }


def validate(cfg: ExperimentConfig) -> list[Diagnostic]:
    from .model import CUTOFF_LADDER

    diags: list[Diagnostic] = []
    for n in cfg.n_values:
        kb = cfg.k_b[n]
        if n in CUTOFF_LADDER and kb != CUTOFF_LADDER[n]:
            diags.append(Diagnostic("warning", f"cutoffs.k_b.{n}", f"K_B={kb} differs from the preset {CUTOFF_LADDER[n]} for N={n}"))
        if cfg.k_a != 6:
            diags.append(Diagnostic("warning", "cutoffs.k_a", f"K_A={cfg.k_a} differs from the preset 6"))
        est = memory_estimate(kb, cfg.k_a)
        largest = max(est["block_dims"].values())
        diags.append(
            Diagnostic(
                "info",
                f"n={n}",
                f"dim={est['dim']} vectorized dimension {est['vectorized_dim']} largest sector block {largest} "
                f"dense block {est['dense_block_bytes'] / 2**30:.2f} GiB sparse ~{est['sparse_bytes_estimate'] / 2**20:.0f} MiB",
            )
        )
        method = cfg.solver["method"]
        if method == "dense" and largest > cfg.solver["dense_limit"]:
            diags.append(
                Diagnostic(
                    "error",
                    "solver.method",
                    f"dense solve refused for N={n}: sector block dimension {largest} (dim^2/4 with dim={est['dim']}) "
                    f"exceeds dense limit {cfg.solver['dense_limit']}; use krylov",
                )
            )
        if method == "auto":
            chosen = "dense" if largest <= cfg.solver["auto_dense_max"] else "krylov"
            diags.append(Diagnostic("info", "solver.method", f"auto resolves to {chosen} for N={n}"))
    if cfg.kind == "kick-recovery" and cfg.options["mode"] == "trajectories":
        dim = cfg.k_b[cfg.n_values[0]] * cfg.k_a
        if dim > 200:
            diags.append(Diagnostic("warning", "options.n_traj", f"trajectory mode at dim={dim} is slow on a single core"))
    return diags


def cache_gc(max_age_days: float | None = 30.0, dry_run: bool = False, root: Path | None = None) -> list[Path]:
    """Delete cached eigensystems older than ``max_age_days`` (all of them if None)."""
    root = (root or cache_root()) / "eigensystems"
    if not root.exists():
        return []
    cutoff = None if max_age_days is None else time.time() - max_age_days * 86400
    removed = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        m = d / "manifest.json"
        age = m.stat().st_mtime if m.exists() else 0.0
        if cutoff is None or age < cutoff:
            removed.append(d)
            if not dry_run:
                shutil.rmtree(d)
    return removed
