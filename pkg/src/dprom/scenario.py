"""Scenario configuration and the build, reduce, simulate and export pipeline.

A scenario is a YAML document (see the README for the schema). The runner
builds the nominal mesh and defects, the shared DpROM basis and one tensor
set per DpROM variant (reusing snapshots when their key matches), then
runs one job per ``(model, xi)`` pair in a bounded process pool.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
import yaml

from . import __version__
from .basis import build_reduction_basis
from .defects import DefectBasis, builtin_defect
from .exceptions import ConfigurationError, DpromError
from .full_model import linear_stiffness, mass_matrix, rayleigh_from_Q
from .gyro import GyroLayout, build_gyro_mesh
from .kinematics import ModelVariant
from .mesh import ALUMINIUM, SILICON, MaterialParams, build_rect_beam_mesh, read_mesh
from .models import ReducedModel, build_rom_d, fom_d, probe_at
from .solvers import backbone, continue_frf, newmark_transient, newton_static
from .solvers.transient import harmonic_forcing
from .tensors import assemble_dprom, load_snapshot, read_manifest, save_snapshot

log = logging.getLogger(__name__)

RESULT_FORMAT_VERSION = 1
REFERENCE_MODELS = ("ROM-d", "FOM-d")
ANALYSES = ("modal", "static", "transient", "frf", "backbone")
_FULL_ONLY = ("modal", "static")
_MATERIALS = {"aluminium": ALUMINIUM, "silicon": SILICON}


class StageError(DpromError):
    """Pipeline failure tagged with the stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass
class Scenario:
    """Validated scenario configuration.

    ``raw`` keeps the parsed document; its canonical JSON hash identifies
    the run in every manifest.
    """

    raw: dict
    name: str
    seed: int
    models: list
    xi_grid: np.ndarray
    analyses: list
    base_dir: Path = Path(".")

    @property
    def m_d(self) -> int:
        return self.xi_grid.shape[1]

    @property
    def config_hash(self) -> str:
        return _hash(self.raw)

    @property
    def dprom_variants(self) -> list:
        return [m for m in self.models if m not in REFERENCE_MODELS]

    def section(self, key, default=None):
        return copy.deepcopy(self.raw.get(key, default))


def _hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def load_scenario(path) -> Scenario:
    """Parse and validate a YAML scenario file."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config is not valid YAML: {exc}") from None
    return validate_scenario(raw, path.parent)


def validate_scenario(raw, base_dir=Path(".")) -> Scenario:
    """Check a parsed configuration before any computation starts."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a mapping")
    for key in ("mesh", "defects", "models", "xi_grid", "analyses"):
        if key not in raw:
            raise ConfigurationError(f"config lacks the {key!r} section")
    defects = raw["defects"]
    if not isinstance(defects, list) or not defects:
        raise ConfigurationError("at least one defect is required")
    for d in defects:
        if not isinstance(d, dict) or "type" not in d:
            raise ConfigurationError("each defect needs a 'type'")
    m_d = len(defects)
    grid = raw["xi_grid"]
    if not isinstance(grid, list) or not grid:
        raise ConfigurationError("xi_grid must be a non-empty list")
    try:
        xi = np.array([np.atleast_1d(np.asarray(g, dtype=float)) for g in grid])
    except (TypeError, ValueError):
        raise ConfigurationError("xi_grid entries must be numbers or lists") from None
    if xi.ndim != 2 or xi.shape[1] != m_d:
        raise ConfigurationError(f"each xi_grid entry needs {m_d} amplitude(s)")
    models = raw["models"]
    if not isinstance(models, list) or not models:
        raise ConfigurationError("at least one model is required")
    for m in models:
        if m in REFERENCE_MODELS:
            continue
        v = ModelVariant.parse(m)
        if v.strain.value == "Exact":
            raise ConfigurationError("use FOM-d for the exact model")
    if len(set(models)) != len(models):
        raise ConfigurationError("duplicate model names")
    analyses = raw["analyses"]
    if not isinstance(analyses, list) or not analyses:
        raise ConfigurationError("at least one analysis is required")
    probes = {p.get("name") for p in raw.get("probes", []) if isinstance(p, dict)}
    for a in analyses:
        if not isinstance(a, dict) or a.get("type") not in ANALYSES:
            raise ConfigurationError(f"analysis type must be one of {ANALYSES}")
        force = a.get("force")
        if force is not None and force.get("probe") not in probes:
            raise ConfigurationError(f"force probe {force.get('probe')!r} is not defined")
        if a["type"] in ("frf", "transient", "static") and force is None:
            raise ConfigurationError(f"{a['type']} analysis needs a force")
        if a["type"] == "backbone" and a.get("probe") not in probes:
            raise ConfigurationError("backbone analysis needs a defined probe")
    mesh = raw["mesh"]
    if not isinstance(mesh, dict) or mesh.get("type") not in ("beam", "gyro", "file"):
        raise ConfigurationError("mesh.type must be beam, gyro or file")
    return Scenario(raw, str(raw.get("name", "scenario")), int(raw.get("seed", 0)),
                    list(models), xi, list(analyses), Path(base_dir))


# --------------------------------------------------------------------------
# construction helpers (pure functions of the config, cached per process)
# --------------------------------------------------------------------------


def _material(spec):
    if spec is None:
        return None
    if isinstance(spec, str):
        try:
            return _MATERIALS[spec.lower()]
        except KeyError:
            raise ConfigurationError(f"unknown material {spec!r}") from None
    return MaterialParams(**spec)


def build_mesh(raw: dict, base_dir: Path):
    spec = dict(raw["mesh"])
    kind = spec.pop("type")
    material = _material(raw.get("material"))
    if kind == "beam":
        kw = dict(lx=2.0, ty=0.05, nx=20, ny=2, thickness=1.0)
        kw.update(spec)
        return build_rect_beam_mesh(kw["lx"], kw["ty"], kw["nx"], kw["ny"],
                                    material or ALUMINIUM, kw["thickness"],
                                    kw.get("clamp", "both"))
    if kind == "gyro":
        return build_gyro_mesh(GyroLayout(**spec), material or SILICON)
    path = Path(spec["path"])
    return read_mesh(path if path.is_absolute() else base_dir / path)


def build_defects(raw: dict, mesh, base_dir: Path) -> DefectBasis:
    parts = []
    for d in raw["defects"]:
        params = dict(d.get("params") or {})
        if d["type"] == "custom_file" and "path" in params:
            p = Path(params["path"])
            params["path"] = p if p.is_absolute() else base_dir / p
        if d["type"] == "beam_taper" and params.get("beams") == "gyro_springs":
            from .gyro import spring_beams

            params["beams"] = spring_beams(GyroLayout(**{
                k: v for k, v in raw["mesh"].items() if k != "type"}))
            params.setdefault("axis", 1)
        parts.append(builtin_defect(d["type"], params, mesh))
    return DefectBasis.stack(parts)


def build_probes(raw: dict, mesh):
    return [probe_at(mesh, p["name"], p["point"], int(p["component"]))
            for p in raw.get("probes", [])]


@lru_cache(maxsize=4)
def _setup(raw_json: str, base_dir: str):
    raw = json.loads(raw_json)
    mesh = build_mesh(raw, Path(base_dir))
    return mesh, build_defects(raw, mesh, Path(base_dir)), build_probes(raw, mesh)


def setup(scn: Scenario):
    """Mesh, defect basis and probes of a scenario (memoized per process)."""
    return _setup(json.dumps(scn.raw, sort_keys=True), str(scn.base_dir))


def damping_coefficients(raw: dict, mesh):
    spec = raw.get("damping") or {}
    if "quality_factors" in spec:
        q1, q2 = spec["quality_factors"]
        return rayleigh_from_Q(mass_matrix(mesh), linear_stiffness(mesh), q1, q2)
    return float(spec.get("alpha", 0.0)), float(spec.get("beta", 0.0))


def snapshot_key(scn: Scenario, variant: str) -> str:
    """Hash of everything the tensors of ``variant`` depend on."""
    return _hash({k: scn.raw.get(k) for k in ("mesh", "material", "defects", "basis")}
                 | {"variant": variant, "version": __version__})


# --------------------------------------------------------------------------
# timing
# --------------------------------------------------------------------------


@dataclass
class TimingReport:
    """Wall time per model and phase.

    Phases are ``basis``, ``tensors``, ``snapshot_load`` (offline) and
    ``simulation`` (one entry per realization). The shared DpROM basis is
    booked under the pseudo-model ``"DpROM-shared"``.
    """

    phases: dict = field(default_factory=dict)

    def add(self, model: str, phase: str, seconds: float):
        if seconds < 0:
            raise ValueError("negative duration")
        self.phases.setdefault(model, {}).setdefault(phase, []).append(float(seconds))

    def count(self, model: str, phase: str) -> int:
        return len(self.phases.get(model, {}).get(phase, []))

    def total(self, model: Optional[str] = None, phase: Optional[str] = None) -> float:
        models = [model] if model else list(self.phases)
        out = 0.0
        for m in models:
            for p, vals in self.phases.get(m, {}).items():
                if phase is None or p == phase:
                    out += sum(vals)
        return out

    def overhead(self, model: str) -> float:
        """Offline cost paid once (DpROMs include their share of the basis)."""
        if model in REFERENCE_MODELS:
            return 0.0
        n_dprom = sum(1 for m in self.phases if m not in REFERENCE_MODELS + ("DpROM-shared",))
        shared = self.total("DpROM-shared") / max(n_dprom, 1)
        return shared + self.total(model, "tensors") + self.total(model, "snapshot_load")

    def variable(self, model: str) -> float:
        """Mean cost per realization."""
        n = self.count(model, "simulation")
        if n == 0:
            return 0.0
        per = self.total(model, "simulation")
        if model in REFERENCE_MODELS:
            per += self.total(model, "basis") + self.total(model, "tensors")
        return per / n

    def break_even(self, model: str, reference: str = "ROM-d") -> float:
        """Realizations after which ``model`` becomes cheaper than ``reference``."""
        gain = self.variable(reference) - self.variable(model)
        return float("inf") if gain <= 0 else self.overhead(model) / gain

    def to_dict(self) -> dict:
        models = [m for m in self.phases if m != "DpROM-shared"]
        summary = {}
        for m in models:
            row = {"overhead_s": self.overhead(m), "variable_s": self.variable(m),
                   "counts": {p: len(v) for p, v in self.phases[m].items()}}
            if m not in REFERENCE_MODELS and "ROM-d" in self.phases:
                row["break_even"] = self.break_even(m)
            summary[m] = row
        return {"phases": self.phases, "summary": summary, "total_s": self.total()}


# --------------------------------------------------------------------------
# jobs
# --------------------------------------------------------------------------


def _force_vector(mesh, probes, force):
    by_name = {p.name: p for p in probes}
    p = by_name[force["probe"]]
    F = np.zeros(mesh.n_free)
    F[p.free_row(mesh)] = float(force["amplitude"])
    return F


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([x if isinstance(x, (str, int)) else repr(float(x)) for x in r])


def _analysis_names(analyses):
    counts: dict = {}
    names = []
    for a in analyses:
        t = a["type"]
        counts[t] = counts.get(t, 0) + 1
        names.append(t if counts[t] == 1 else f"{t}{counts[t]}")
    return names


def _run_analysis(model, mesh, probes, a, name, out: Path, stem: str, xi, config_hash):
    kind = a["type"]
    reduced = isinstance(model, ReducedModel)
    omega1 = float(model.eigenfrequencies(1)[0])
    info = {"format": RESULT_FORMAT_VERSION, "analysis": kind, "model": model.name,
            "xi": [float(x) for x in xi], "omega1": omega1,
            "probes": list(model.probe_names), "config_hash": config_hash}
    csv_path = out / f"{stem}_{name}.csv"
    if kind == "modal":
        om = model.eigenfrequencies(int(a.get("modes", 3)))
        _write_csv(csv_path, ["mode", "omega_rad_s", "f_Hz"],
                   [(i + 1, w, w / (2 * np.pi)) for i, w in enumerate(om)])
    elif kind == "static":
        F = _force_vector(mesh, probes, a["force"])
        F = model.reduce(F) if reduced else F
        sol = newton_static(model, F, load_steps=int(a.get("load_steps", 1)))
        vals = np.atleast_1d(model.probes(sol.q))
        _write_csv(csv_path, ["probe", "displacement"],
                   [(n, v) for n, v in zip(model.probe_names, vals)])
        info["iterations"] = sol.iterations
    elif kind == "transient":
        F = _force_vector(mesh, probes, a["force"])
        F = model.reduce(F) if reduced else F
        Om = float(a["force"].get("frequency_ratio", 1.0)) * omega1
        spp = int(a.get("samples_per_period", 100))
        periods = float(a.get("periods", 20))
        T = 2 * np.pi / Om
        ts = newmark_transient(model, harmonic_forcing(F, Om), T / spp, periods * T)
        ts.to_csv(csv_path)
        info["Omega"] = Om
    elif kind == "frf":
        F = model.reduce(_force_vector(mesh, probes, a["force"]))
        lo, hi = a.get("range", [0.8, 1.3])
        sol = continue_frf(model, int(a.get("harmonics", 7)), F, (lo * omega1, hi * omega1),
                           n_samples=a.get("samples"))
        sol.to_csv(csv_path, float(a.get("normalize", 1.0)))
        info.update(_branch_info(sol))
    elif kind == "backbone":
        row = model.probe_matrix[list(model.probe_names).index(a["probe"])]
        A0, A1 = a.get("amplitude", [1e-6, 1e-3])
        sol = backbone(model, int(a.get("harmonics", 7)), (A0, A1),
                       mode=int(a.get("mode", 0)), anchor=row,
                       n_samples=a.get("samples"))
        sol.to_csv(csv_path, float(a.get("normalize", 1.0)))
        info.update(_branch_info(sol))
    info["normalize"] = float(a.get("normalize", 1.0))
    (out / f"{stem}_{name}.json").write_text(json.dumps(info, indent=2, sort_keys=True))
    return csv_path.name


def _branch_info(sol):
    meta = {k: v for k, v in sol.meta.items() if k != "seconds"}
    return {"H": sol.H, "points": len(sol), "solver": meta}


def run_job(scn: Scenario, model_name: str, xi_index: int, tensors, alpha, beta,
            out_dir: str):
    """One ``(model, xi)`` realization; returns file names and timings."""
    mesh, defects, probes = setup(scn)
    xi = scn.xi_grid[xi_index]
    out = Path(out_dir) / "results" / model_name
    out.mkdir(parents=True, exist_ok=True)
    timings = {}
    if model_name == "ROM-d":
        rd = build_rom_d(mesh, defects, xi, int(scn.raw.get("basis", {}).get(
            "vibration_modes", 5)), bool(scn.raw.get("basis", {}).get(
                "modal_derivatives", True)), alpha, beta, probes)
        model = rd.model
        timings.update(rd.timings)
    elif model_name == "FOM-d":
        model = fom_d(mesh, defects, xi, alpha=alpha, beta=beta, probes=probes)
    else:
        model = ReducedModel.from_tensors(tensors, xi, alpha, beta, mesh, defects, probes,
                                          name=f"DpROM-{model_name}")
    t0 = time.perf_counter()
    files = []
    for a, name in zip(scn.analyses, _analysis_names(scn.analyses)):
        if model_name == "FOM-d" and a["type"] not in _FULL_ONLY:
            log.info("FOM-d skips the %s analysis", a["type"])
            continue
        files.append(_run_analysis(model, mesh, probes, a, name, out, f"xi{xi_index}", xi,
                                   scn.config_hash))
    timings["simulation"] = time.perf_counter() - t0
    return model_name, xi_index, files, timings


def _run_job_safe(*args):
    try:
        return run_job(*args)
    except Exception as exc:  # re-raised in the parent with its stage
        raise StageError(f"simulate {args[1]} xi#{args[2]}", exc) from exc


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------


@dataclass
class RunResult:
    out_dir: Path
    timing: TimingReport
    artifacts: dict
    snapshot_hits: list


def _versions():
    return {"dprom": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def default_out_dir(scn: Scenario, out=None) -> Path:
    if out:
        return Path(out)
    root = os.environ.get("DPROM_OUT")
    return Path(root or "runs") / scn.name


def build_tensors(scn: Scenario, snapshot_root: Path, timing: TimingReport,
                  force: bool = False):
    """Basis and tensors of every DpROM variant, reusing matching snapshots."""
    mesh, defects, _ = setup(scn)
    spec = scn.raw.get("basis", {}) or {}
    out, hits, basis = {}, [], None
    for variant in scn.dprom_variants:
        key = snapshot_key(scn, variant)
        sdir = snapshot_root / variant
        man = read_manifest(sdir)
        if not force and man and man.get("extra", {}).get("key") == key:
            t0 = time.perf_counter()
            out[variant] = load_snapshot(sdir)
            timing.add(variant, "snapshot_load", time.perf_counter() - t0)
            hits.append(variant)
            log.info("snapshot hit for %s in %s: tensor assembly skipped", variant, sdir)
            continue
        if basis is None:
            t0 = time.perf_counter()
            basis = build_reduction_basis(
                mesh, defects, int(spec.get("vibration_modes", 5)),
                bool(spec.get("modal_derivatives", True)),
                bool(spec.get("defect_sensitivities", True)), bool(spec.get("mds", False)),
                bool(spec.get("ds2", False)))
            timing.add("DpROM-shared", "basis", time.perf_counter() - t0)
        t0 = time.perf_counter()
        T = assemble_dprom(mesh, basis, defects, variant)
        timing.add(variant, "tensors", time.perf_counter() - t0)
        save_snapshot(T, sdir, {"key": key, "config_hash": scn.config_hash})
        out[variant] = T
    return out, hits


def run_scenario(scn: Scenario, out=None, jobs: int = 1, snapshot=None,
                 seed: Optional[int] = None) -> RunResult:
    """Execute a scenario and write its artifacts.

    Raises
    ------
    StageError
        Naming the failing stage; ``error.json`` is written to the output
        directory as well.
    """
    out_dir = default_out_dir(scn, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = scn.seed if seed is None else int(seed)
    np.random.seed(seed)
    timing = TimingReport()
    stage = "setup"
    try:
        mesh, defects, probes = setup(scn)
        alpha, beta = damping_coefficients(scn.raw, mesh)
        stage = "reference"
        reference = {}
        if scn.raw.get("reference", True):
            for k, xi in enumerate(scn.xi_grid):
                fd = fom_d(mesh, defects, xi)
                reference[str(k)] = float(fd.eigenfrequencies(1)[0])
        stage = "build"
        snap_root = Path(snapshot) if snapshot else out_dir / "snapshots"
        tensors, hits = build_tensors(scn, snap_root, timing)
        stage = "simulate"
        tasks = [(scn, m, k, tensors.get(m), alpha, beta, str(out_dir))
                 for m in scn.models for k in range(len(scn.xi_grid))]
        results = []
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futs = [pool.submit(_run_job_safe, *t) for t in tasks]
                results = [f.result() for f in futs]
        else:
            results = [_run_job_safe(*t) for t in tasks]
    except StageError as exc:
        _write_error(out_dir, exc.stage, exc.cause)
        raise
    except Exception as exc:
        _write_error(out_dir, stage, exc)
        raise StageError(stage, exc) from exc
    artifacts: dict = {}
    for model_name, k, files, tms in sorted(results, key=lambda r: (r[0], r[1])):
        artifacts.setdefault(model_name, {})[str(k)] = files
        if model_name == "ROM-d":
            timing.add(model_name, "basis", tms["basis"])
            timing.add(model_name, "tensors", tms["tensors"])
        timing.add(model_name, "simulation", tms["simulation"])
    manifest = {
        "format": RESULT_FORMAT_VERSION,
        "scenario": scn.name,
        "config_hash": scn.config_hash,
        "config": scn.raw,
        "seed": seed,
        "versions": _versions(),
        "damping": {"alpha": alpha, "beta": beta},
        "xi_grid": scn.xi_grid.tolist(),
        "models": scn.models,
        "artifacts": artifacts,
        "snapshots": {v: str(snap_root / v) for v in scn.dprom_variants},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    if reference:
        (out_dir / "reference.json").write_text(json.dumps(
            {"omega1_fom_d": reference, "config_hash": scn.config_hash}, indent=2,
            sort_keys=True))
    (out_dir / "timing.json").write_text(json.dumps(
        {"config_hash": scn.config_hash, "snapshot_hits": hits, **timing.to_dict()},
        indent=2, sort_keys=True, default=float))
    return RunResult(out_dir, timing, artifacts, hits)


def _write_error(out_dir: Path, stage: str, exc: BaseException):
    log.error("stage %s failed: %s", stage, exc)
    (out_dir / "error.json").write_text(json.dumps(
        {"stage": stage, "type": type(exc).__name__, "message": str(exc)}, indent=2))


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------


def _read_branch(path: Path):
    with path.open() as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return header, data


def _collect(run_dir: Path, label_prefix: str):
    ref_path = run_dir / "reference.json"
    reference = json.loads(ref_path.read_text())["omega1_fom_d"] if ref_path.exists() else {}
    found = {}
    for info_path in sorted((run_dir / "results").glob("*/*.json")):
        info = json.loads(info_path.read_text())
        if info.get("analysis") not in ("frf", "backbone"):
            continue
        model = info_path.parent.name
        xi_tag, name = info_path.stem.split("_", 1)
        header, data = _read_branch(info_path.with_suffix(".csv"))
        k = xi_tag[2:]
        w_ref = reference.get(k, info["omega1"])
        found[(label_prefix + model, k, name)] = dict(
            info=info, header=header, Omega=data[:, 0], amp=data[:, 2:], w_ref=w_ref)
    return found


def compare_runs(run_dirs, out=None):
    """Compare frequency responses and backbones across models and runs.

    With one run directory every pair of models is compared at each
    realization; with several, labels are prefixed by the directory name.
    Writes ``aligned.csv`` (amplitude vs detuning for every branch) and
    ``comparison.csv`` (peak and backbone deltas per pair) to ``out``.

    Returns
    -------
    list of dict
        One row per compared pair.
    """
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise ConfigurationError("no run directories given")
    branches = {}
    for i, d in enumerate(run_dirs):
        if not (d / "results").is_dir():
            raise ConfigurationError(f"{d} is not a run directory")
        prefix = f"{i}:{d.name}/" if len(run_dirs) > 1 else ""
        branches.update(_collect(d, prefix))
    rows = []
    keys = sorted(branches)
    for a_i, ka in enumerate(keys):
        for kb in keys[a_i + 1:]:
            if ka[1:] != kb[1:]:
                continue
            A, B = branches[ka], branches[kb]
            if A["header"] != B["header"]:
                raise ConfigurationError(f"probe mismatch between {ka[0]} and {kb[0]}")
            row = {"xi_index": ka[1], "analysis": ka[2], "model_a": ka[0], "model_b": kb[0]}
            if A["info"]["analysis"] == "frf":
                ia, ib = int(np.argmax(A["amp"][:, 0])), int(np.argmax(B["amp"][:, 0]))
                row["peak_sigma_a"] = A["Omega"][ia] / A["w_ref"] - 1
                row["peak_sigma_b"] = B["Omega"][ib] / B["w_ref"] - 1
                row["d_peak_freq_rel"] = B["Omega"][ib] / A["Omega"][ia] - 1
                row["d_peak_amp_rel"] = B["amp"][ib, 0] / A["amp"][ia, 0] - 1
            else:
                off = _backbone_offset(A, B)
                row["d_freq_mean_rel"] = float(np.mean(off)) if off.size else float("nan")
                row["d_freq_spread_rel"] = float(np.ptp(off)) if off.size else float("nan")
            rows.append({k: (float(v) if isinstance(v, np.floating) else v)
                         for k, v in row.items()})
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "aligned.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "xi_index", "analysis", "sigma", "amplitude"])
            for (label, k, name), br in sorted(branches.items()):
                for om, amp in zip(br["Omega"], br["amp"][:, 0]):
                    w.writerow([label, k, name, repr(om / br["w_ref"] - 1), repr(amp)])
        cols = sorted({c for r in rows for c in r})
        with (out / "comparison.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(rows)
    return rows


def _backbone_offset(A, B, n: int = 25):
    """Relative frequency offset of ``B`` vs ``A`` at matched amplitudes."""
    aa, ab = A["amp"][:, 0], B["amp"][:, 0]
    lo = max(aa.min(), ab.min())
    hi = min(aa.max(), ab.max())
    if hi <= lo:
        return np.zeros(0)
    grid = np.linspace(lo, hi, n)
    oa = np.interp(grid, *_monotone(aa, A["Omega"]))
    ob = np.interp(grid, *_monotone(ab, B["Omega"]))
    return ob / oa - 1


def _monotone(x, y):
    order = np.argsort(x)
    return x[order], y[order]
