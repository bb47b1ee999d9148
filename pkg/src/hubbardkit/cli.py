"""Command-line pipeline: build, compile, layout, simulate, mitigate, analyze.

Every stage reads its inputs from, and writes its outputs to, one output
directory, and records them in ``manifest.json`` with SHA-256 hashes.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import __version__
from .model import FockState, HubbardParams, ModelConfig, SizeError, model_from_dict, model_to_dict
from .ppp import TruncationPolicy

log = logging.getLogger("hubbardkit")

EXIT_OK, EXIT_CONFIG, EXIT_SIZE, EXIT_TOLERANCE = 0, 2, 3, 4
STAGES = ("build", "compile", "layout", "simulate", "mitigate", "analyze")
BACKENDS = ("statevector", "ppp")


class ConfigError(ValueError):
    pass


class ToleranceError(RuntimeError):
    pass


def default_dt(U: float) -> float:
    """Trotter step by interaction strength: 0.2 up to |U|=4, 0.15 up to 10, else 0.1."""
    u = abs(U)
    if u <= 4:
        return 0.2
    if u <= 10:
        return 0.15
    return 0.1


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseConfig:
    p_dep2q: float = 0.0
    p10: float = 0.0
    p01: float = 0.0
    trajectories: int = 64
    shots: int = 4000


@dataclass(frozen=True)
class MitigationConfig:
    rem: bool = True
    decay_recovery: bool = True
    c: float = 0.5
    decay_sharing: str = "mode"  # "mode": one d_n per mode; "shared": averaged over modes
    postselect: bool = True
    calibration_shots: int = 20000


@dataclass(frozen=True)
class AnalysisConfig:
    sigma: float = 1.0
    p: float = 0.3


@dataclass(frozen=True)
class LayoutConfig:
    device: str = "heron"  # "heron" or "heavy_hex"
    rows: int = 2
    cols: int = 2
    calibration: str | None = None  # JSON file; synthetic calibration when absent
    k: float | None = 5.0
    top: int = 20
    max_layouts: int = 2_000_000


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    dt: float
    n_steps: int = 30
    backend: str = "statevector"
    ordering: str = "pair_interleaved"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    truncation: TruncationPolicy = field(default_factory=TruncationPolicy)
    mitigation: MitigationConfig = field(default_factory=MitigationConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    n_twirl: int = 0
    seed: int | None = None
    source: dict = field(default_factory=dict, compare=False)

    @property
    def params(self) -> HubbardParams:
        return self.model.params

    @property
    def initial(self) -> FockState:
        return self.model.initial


def _sub(cls, data: Mapping | None, name: str):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {unknown}; allowed: {sorted(names)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{name}' section: {exc}") from exc


def config_from_dict(data: Mapping) -> RunConfig:
    allowed = {"model", "dt", "n_steps", "backend", "ordering", "noise", "truncation", "mitigation", "analysis", "layout", "n_twirl", "seed"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}; allowed: {sorted(allowed)}")
    if "model" not in data:
        raise ConfigError("config needs a 'model' section with at least 'L'")
    try:
        model = model_from_dict(data["model"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'model' section: {exc}") from exc
    dt = data.get("dt")
    dt = default_dt(model.params.U) if dt is None else float(dt)
    n_steps = data.get("n_steps", 30)
    if not (isinstance(n_steps, int) and n_steps >= 1):
        raise ConfigError(f"n_steps must be a positive integer, got {n_steps!r}")
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    backend = data.get("backend", "statevector")
    if backend not in BACKENDS:
        raise ConfigError(f"backend must be one of {BACKENDS}, got {backend!r}")
    from .circuit import ORDERINGS

    ordering = data.get("ordering", "pair_interleaved")
    if ordering not in ORDERINGS:
        raise ConfigError(f"ordering must be one of {ORDERINGS}, got {ordering!r}")
    seed = data.get("seed")
    if seed is not None and not (isinstance(seed, int) and 0 <= seed < 2**64):
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    noise = _sub(NoiseConfig, data.get("noise"), "noise")
    for name in ("p_dep2q", "p10", "p01"):
        if not 0 <= getattr(noise, name) <= 1:
            raise ConfigError(f"noise.{name} must lie in [0, 1]")
    if noise.trajectories < 1 or noise.shots < 1:
        raise ConfigError("noise.trajectories and noise.shots must be positive")
    mitigation = _sub(MitigationConfig, data.get("mitigation"), "mitigation")
    if not 0 <= mitigation.c <= 1:
        raise ConfigError("mitigation.c must lie in [0, 1]")
    if mitigation.decay_sharing not in ("mode", "shared"):
        raise ConfigError(f"mitigation.decay_sharing must be 'mode' or 'shared', got {mitigation.decay_sharing!r}")
    analysis = _sub(AnalysisConfig, data.get("analysis"), "analysis")
    if not (analysis.sigma >= 0 and 0 < analysis.p < 1):
        raise ConfigError("analysis needs sigma >= 0 and 0 < p < 1")
    layout = _sub(LayoutConfig, data.get("layout"), "layout")
    if layout.device not in ("heron", "heavy_hex"):
        raise ConfigError(f"layout.device must be 'heron' or 'heavy_hex', got {layout.device!r}")
    trunc = data.get("truncation")
    if trunc == "disabled":
        truncation = TruncationPolicy.disabled()
    else:
        truncation = _sub(TruncationPolicy, trunc, "truncation")
    n_twirl = data.get("n_twirl", 0)
    if not (isinstance(n_twirl, int) and n_twirl >= 0):
        raise ConfigError("n_twirl must be a non-negative integer")
    return RunConfig(
        model, dt, n_steps, backend, ordering, noise, truncation, mitigation, analysis, layout, n_twirl, seed,
        source=json.loads(json.dumps(data)),
    )


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    trunc = dataclasses.asdict(cfg.truncation)
    return {
        "model": model_to_dict(cfg.params, cfg.initial),
        "dt": cfg.dt,
        "n_steps": cfg.n_steps,
        "backend": cfg.backend,
        "ordering": cfg.ordering,
        "noise": dataclasses.asdict(cfg.noise),
        "truncation": trunc,
        "mitigation": dataclasses.asdict(cfg.mitigation),
        "analysis": dataclasses.asdict(cfg.analysis),
        "layout": dataclasses.asdict(cfg.layout),
        "n_twirl": cfg.n_twirl,
        "seed": cfg.seed,
    }


def config_hash(cfg: RunConfig) -> str:
    text = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _require_seed(cfg: RunConfig, stage: str) -> int:
    if cfg.seed is None:
        raise ConfigError(f"stage '{stage}' is stochastic: set 'seed' in the config or pass --seed")
    return int(cfg.seed)


# ---------------------------------------------------------------------------
# output directory and manifest
# ---------------------------------------------------------------------------


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = float(epoch) if epoch is not None else time.time()
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Workspace:
    """Output directory that tracks which files each stage wrote."""

    def __init__(self, root: str | Path, cfg: RunConfig | None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self._written: list[str] = []

    def path(self, name: str) -> Path:
        return self.root / name

    def write(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        self._written.append(name)
        return p

    def read(self, name: str, stage: str) -> str:
        p = self.path(name)
        if not p.is_file():
            raise ConfigError(f"missing input {p}: run the '{stage}' stage first")
        return p.read_text()

    def record(self, stage: str, inputs: Sequence[str] = ()) -> None:
        mpath = self.path("manifest.json")
        manifest = json.loads(mpath.read_text()) if mpath.is_file() else {}
        manifest["tool"] = "hubbardkit"
        manifest["version"] = __version__
        if self.cfg is not None:
            manifest["config"] = config_to_dict(self.cfg)
            manifest["config_sha256"] = config_hash(self.cfg)
            manifest["seed"] = self.cfg.seed
        stages = manifest.setdefault("stages", {})
        stages[stage] = {
            "timestamp": _timestamp(),
            "inputs": {n: sha256_file(self.path(n)) for n in sorted(set(inputs)) if self.path(n).is_file()},
            "outputs": {n: sha256_file(self.path(n)) for n in sorted(set(self._written))},
        }
        self._written = []
        mpath.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def verify_manifest(root: str | Path) -> list[str]:
    """Files whose current hash differs from the manifest (empty when consistent)."""
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    bad = []
    for rec in manifest.get("stages", {}).values():
        for name, digest in rec["outputs"].items():
            p = root / name
            if not p.is_file() or sha256_file(p) != digest:
                bad.append(name)
    return sorted(set(bad))


def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{float(v):.12g}"


def table_csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(str(x) if isinstance(x, (int, np.integer, str)) else _fmt(x) for x in r))
    return "\n".join(lines) + "\n"


def occupations_csv(times, occ: np.ndarray) -> str:
    n_modes = occ.shape[1]
    header = ["step", "time"] + [f"n{j}" for j in range(n_modes)]
    return table_csv(header, [[s, t, *row] for s, (t, row) in enumerate(zip(times, occ))])


def read_occupations(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    times = np.array([float(r[1]) for r in rows])
    occ = np.array([[float(x) if x else math.nan for x in r[2:]] for r in rows])
    return times, occ


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def _circuit(cfg: RunConfig, with_initial: bool = True):
    from .circuit import build_trotter_circuit

    return build_trotter_circuit(cfg.params, cfg.dt, cfg.n_steps, cfg.initial if with_initial else None, ordering=cfg.ordering)


def cmd_build(cfg: RunConfig, ws: Workspace) -> None:
    from .circuit import save_circuit

    circ = _circuit(cfg)
    save_circuit(circ, ws.path("circuit.json"))
    ws._written.append("circuit.json")
    ws.record("build")


def cmd_compile(cfg: RunConfig, ws: Workspace) -> None:
    from .circuit import load_circuit
    from .compiler import lower, metrics, metrics_csv, twirl

    circ = load_circuit(ws.path("circuit.json")) if ws.path("circuit.json").is_file() else _circuit(cfg)
    native = lower(circ)
    ws.write("native.json", native.to_json())
    m = metrics(native)
    ws.write("metrics.csv", metrics_csv([(cfg.params.L, cfg.n_steps, m)]))
    if cfg.n_twirl:
        seed = _require_seed(cfg, "compile")
        for k, variant in enumerate(twirl(native, cfg.n_twirl, seed)):
            ws.write(f"twirl/native_{k:03d}.json", variant.to_json())
    ws.record("compile", ["circuit.json"])
    log.info("compiled: D2Q=%d N2Q=%d", m.d2q, m.n2q)


def _device(cfg: RunConfig):
    from .layout import CouplingGraph, build_heavy_hex, heron_like, synthetic_calibration

    lc = cfg.layout
    if lc.calibration:
        p = Path(lc.calibration)
        if not p.is_file():
            raise ConfigError(f"calibration file {p} not found")
        return CouplingGraph.load(p), False
    g = heron_like() if lc.device == "heron" else build_heavy_hex(lc.rows, lc.cols)
    return synthetic_calibration(g, seed=_require_seed(cfg, "layout")), True


def cmd_layout(cfg: RunConfig, ws: Workspace) -> None:
    from .layout import NoFeasibleLayout, count_chains, enumerate_chains, layouts_csv, score_and_select

    graph, synthetic = _device(cfg)
    n = cfg.params.n_qubits
    if n > graph.n_nodes:
        raise ConfigError(f"{n} qubits do not fit on a {graph.n_nodes}-qubit device")
    total = count_chains(graph, n)
    if total > cfg.layout.max_layouts:
        raise ConfigError(f"{total} candidate chains exceed layout.max_layouts={cfg.layout.max_layouts}")
    chains = enumerate_chains(graph, n)
    try:
        ranked = score_and_select(chains, graph, k=cfg.layout.k)
    except NoFeasibleLayout as exc:
        raise ConfigError(f"{exc}; relax layout.k or use another calibration") from exc
    if synthetic:
        ws.write("calibration.json", json.dumps(graph.to_dict(), sort_keys=True, indent=1) + "\n")
    ws.write("layouts.csv", layouts_csv(ranked, cfg.layout.top))
    best_score, best = ranked[0]
    ws.write(
        "layout.json",
        json.dumps({"qubits": list(best), "score": best_score, "candidates": len(chains), "feasible": len(ranked)}, indent=1) + "\n",
    )
    ws.record("layout")


def _step_times(cfg: RunConfig) -> np.ndarray:
    return cfg.dt * np.arange(cfg.n_steps + 1)


def _noise(cfg: RunConfig, seed: int):
    from .statevector import NoiseModel

    return NoiseModel(cfg.noise.p_dep2q, cfg.noise.p10, cfg.noise.p01, seed)


def cmd_simulate(cfg: RunConfig, ws: Workspace) -> None:
    from .statevector import DEFAULT_QUBIT_CAP, occupation_values, sample_probabilities, sample_steps, trotter_occupations

    n_q = cfg.params.n_qubits
    times = _step_times(cfg)
    if cfg.backend == "ppp":
        from .ppp import ppp_occupations, term_census

        occ, runs = ppp_occupations(cfg.params, cfg.dt, cfg.n_steps, cfg.truncation, cfg.initial, ordering=cfg.ordering)
        ws.write("occupations_raw.csv", occupations_csv(times, occ))
        census = [dict(mode=j, **row) for j, run in enumerate(runs) for row in term_census(run)]
        keys = list(census[0]) if census else ["mode"]
        ws.write("ppp_census.csv", table_csv(keys, [[r[k] for k in keys] for r in census]))
        if n_q <= DEFAULT_QUBIT_CAP:
            ref = trotter_occupations(cfg.params, cfg.dt, cfg.n_steps, cfg.initial, ordering=cfg.ordering)
            ws.write("reference.csv", occupations_csv(times, ref))
        ws.record("simulate")
        return

    if n_q > DEFAULT_QUBIT_CAP:
        raise SizeError(f"{n_q} qubits exceed the statevector cap of {DEFAULT_QUBIT_CAP}; use backend 'ppp'")
    seed = _require_seed(cfg, "simulate")
    circ = _circuit(cfg)
    noise = _noise(cfg, seed)
    shots = sample_steps(circ, cfg.noise.shots, noise=noise, n_trajectories=cfg.noise.trajectories, seed=seed)
    raw = np.array([occupation_values(sh, circ.perm_after(s)) for s, sh in enumerate(shots)])
    for s, sh in enumerate(shots):
        ws.write(f"shots/step_{s:04d}.csv", sh.to_csv())
    ws.write("occupations_raw.csv", occupations_csv(times, raw))
    ref = trotter_occupations(cfg.params, cfg.dt, cfg.n_steps, cfg.initial, ordering=cfg.ordering)
    ws.write("reference.csv", occupations_csv(times, ref))
    perms = {str(s): circ.perm_after(s).to_list() for s in range(cfg.n_steps + 1)}
    ws.write("mode_perms.json", json.dumps(perms, sort_keys=True) + "\n")

    # readout calibration runs: all-zero and all-one preparations
    zeros = np.zeros(1)
    zeros[0] = 1.0
    n_cal = cfg.mitigation.calibration_shots
    ws.write("calibration/zeros.csv", sample_probabilities(zeros, n_cal, n_q, noise, seed + 1, np.array([0])).to_csv())
    ws.write("calibration/ones.csv", sample_probabilities(zeros, n_cal, n_q, noise, seed + 2, np.array([(1 << n_q) - 1])).to_csv())

    if cfg.mitigation.decay_recovery:
        from .circuit import build_echo_circuit
        from .statevector import step_distributions

        for m in range(2, cfg.n_steps + 1, 2):
            echo = build_echo_circuit(cfg.params, cfg.dt, m, cfg.initial)
            p = step_distributions(echo, noise=noise, n_trajectories=cfg.noise.trajectories)[-1]
            table = sample_probabilities(p, cfg.noise.shots, n_q, noise, seed + 100 + m)
            ws.write(f"echo/step_{m:04d}.csv", table.to_csv())
    ws.record("simulate")


def _canonical(values: np.ndarray, perm) -> np.ndarray:
    out = np.empty_like(values)
    for q, c in enumerate(perm.canonical()):
        out[c] = values[q]
    return out


def cmd_mitigate(cfg: RunConfig, ws: Workspace) -> None:
    from .analysis import rmse
    from .circuit import ModePermutation
    from .mitigation import ConfusionSet, build_confusion, decay_recovery, echo_factors, postselect, rem_z_expectations, report_csv
    from .shots import ShotTable
    from .statevector import occupation_values

    if cfg.backend != "statevector":
        raise ConfigError("the mitigate stage needs shot data from backend 'statevector'")
    n = cfg.n_steps
    n_q = cfg.params.n_qubits
    L = cfg.params.L
    times, ref = read_occupations(ws.read("reference.csv", "simulate"))
    perms_raw = json.loads(ws.read("mode_perms.json", "simulate"))
    perms = [ModePermutation.from_list(L, perms_raw[str(s)]) for s in range(n + 1)]
    shots = [ShotTable.from_csv(ws.read(f"shots/step_{s:04d}.csv", "simulate"), n_q) for s in range(n + 1)]
    inputs = [f"shots/step_{s:04d}.csv" for s in range(n + 1)] + ["reference.csv", "mode_perms.json"]

    raw_occ = np.array([occupation_values(sh, perms[s]) for s, sh in enumerate(shots)])
    raw_z = 1 - 2 * raw_occ
    z = raw_z.copy()
    clipped = np.zeros(n + 1)
    if cfg.mitigation.rem:
        conf = build_confusion(
            ShotTable.from_csv(ws.read("calibration/zeros.csv", "simulate"), n_q),
            ShotTable.from_csv(ws.read("calibration/ones.csv", "simulate"), n_q),
        )
        inputs += ["calibration/zeros.csv", "calibration/ones.csv"]
        for s, sh in enumerate(shots):
            est, clipped[s] = rem_z_expectations(sh, conf)
            z[s] = _canonical(np.array([e.value for e in est]), perms[s])
    else:
        conf = ConfusionSet.from_rates(0.0, 0.0, n_q)
    rem_occ = (1 - z) / 2

    dec_occ = rem_occ
    if cfg.mitigation.decay_recovery:
        ideal = 1.0 - 2.0 * np.array(cfg.initial.bits, dtype=float)
        echo = np.full((n + 1, n_q), np.nan)
        echo[0] = ideal
        for m in range(2, n + 1, 2):
            name = f"echo/step_{m:04d}.csv"
            table = ShotTable.from_csv(ws.read(name, "simulate"), n_q)
            inputs.append(name)
            if cfg.mitigation.rem:
                est, _ = rem_z_expectations(table, conf)
                echo[m] = [e.value for e in est]
            else:
                echo[m] = 1 - 2 * occupation_values(table)
        zz = np.empty_like(z)
        if cfg.mitigation.decay_sharing == "mode":
            for j in range(n_q):
                zz[:, j], _ = decay_recovery(z[:, j], echo[:, j], np.full(n + 1, ideal[j]), cfg.mitigation.c)
        else:
            d = np.array([echo_factors(echo[:, j], np.full(n + 1, ideal[j]), n).d for j in range(n_q)])
            c = cfg.mitigation.c
            zz = z / (c * np.nanmean(d, axis=0) + 1 - c)[:, None]
        dec_occ = (1 - zz) / 2

    discard = np.full(n + 1, np.nan)
    post_occ = np.full_like(raw_occ, np.nan)
    cdf_rows = []
    if cfg.mitigation.postselect:
        for s, sh in enumerate(shots):
            res = postselect(sh, cfg.initial.n_up, cfg.initial.n_down, perms[s])
            discard[s] = res.discard_rate
            if res.kept.total:
                post_occ[s] = occupation_values(res.kept, perms[s])
            cdf_rows += [[s, k, f] for k, f in res.cdf()]
        ws.write("postselected.csv", occupations_csv(times, post_occ))
        ws.write("postselect_cdf.csv", table_csv(["step", "k", "cdf"], cdf_rows))

    ws.write("occupations_mitigated.csv", occupations_csv(times, dec_occ))
    rows = []
    for s in range(n + 1):
        rows.append(
            {
                "step": s,
                "raw": rmse(raw_occ[s], ref[s]),
                "rem": rmse(rem_occ[s], ref[s]),
                "decay_recovered": rmse(dec_occ[s], ref[s]),
                "postselect_discard_rate": None if math.isnan(discard[s]) else discard[s],
                "clipped_mass": clipped[s],
            }
        )
    ws.write("report.csv", report_csv(rows))
    ws.record("mitigate", inputs)


def _vacancy(initial: FockState) -> int | None:
    """The single empty site of ``initial``, or None."""
    from .model import DOWN, UP, mode_index

    L = initial.L
    empty = [i for i in range(L) if not initial.bits[mode_index(i, UP, L)] and not initial.bits[mode_index(i, DOWN, L)]]
    return empty[0] if len(empty) == 1 else None


def _velocity(field, times, cfg: RunConfig):
    """Front velocity, or a NaN fit with a warning when the ballistic window is too short."""
    from .analysis import VelocityFit, detect_wavefront, front_velocity

    try:
        fit, trace, _ = front_velocity(field, times, cfg.analysis.sigma, cfg.analysis.p, seed=cfg.seed or 0)
    except ValueError as exc:
        log.warning("%s velocity not fitted: %s (chain too short or run too brief)", field.kind, exc)
        trace = detect_wavefront(field, cfg.analysis.sigma, cfg.analysis.p, times)
        fit = VelocityFit(math.nan, math.nan, math.nan, 0)
    return fit, trace


def cmd_analyze(cfg: RunConfig, ws: Workspace) -> None:
    from .analysis import VelocityRow, charge_tracer, rmse, spin_tracer, velocity_csv
    from .circuit import ModePermutation, apply_virtual_permutation
    from .shots import ShotTable

    times, raw = read_occupations(ws.read("occupations_raw.csv", "simulate"))
    inputs = ["occupations_raw.csv"]
    series = {"raw": raw}
    for name, fname in (("mitigated", "occupations_mitigated.csv"), ("postselected", "postselected.csv")):
        if ws.path(fname).is_file():
            series[name] = read_occupations(ws.path(fname).read_text())[1]
            inputs.append(fname)
    if ws.path("reference.csv").is_file():
        _, ref = read_occupations(ws.path("reference.csv").read_text())
        inputs.append("reference.csv")
        keys = list(series)
        rows = [[s, times[s]] + [rmse(series[k][s], ref[s]) if np.isfinite(series[k][s]).all() else math.nan for k in keys] for s in range(len(times))]
        ws.write("rmse.csv", table_csv(["step", "time"] + keys, rows))

    c = _vacancy(cfg.initial)
    if c is not None:
        best = series.get("mitigated", raw)
        ch = charge_tracer(best, c, times)
        ws.write("charge_tracer.csv", ch.to_csv())
        fc, trc = _velocity(ch, times, cfg)
        fronts = [[k, times[k], trc.left[k], trc.right[k], trc.distance[k]] for k in range(len(times))]
        ws.write("charge_front.csv", table_csv(["step", "time", "left", "right", "distance"], fronts))
        vrows = []
        if cfg.backend == "statevector" and ws.path("mode_perms.json").is_file():
            L = cfg.params.L
            perms_raw = json.loads(ws.path("mode_perms.json").read_text())
            hist = []
            for s in range(len(times)):
                sh = ShotTable.from_csv(ws.read(f"shots/step_{s:04d}.csv", "simulate"), 2 * L)
                hist.append(apply_virtual_permutation(sh, ModePermutation.from_list(L, perms_raw[str(s)])))
            sp_field = spin_tracer(hist, c, times)
            ws.write("spin_tracer.csv", sp_field.to_csv())
            fs, _ = _velocity(sp_field, times, cfg)
            vrows.append(VelocityRow(cfg.params.U, fc, fs))
            ws.write("velocity.csv", velocity_csv(vrows))
        else:
            ws.write("velocity.csv", table_csv(["U", "v_charge", "ci_charge"], [[cfg.params.U, fc.slope, fc.std_err]]))
    ws.record("analyze", inputs)


STAGE_FUNCS: dict[str, Callable[[RunConfig, Workspace], None]] = {
    "build": cmd_build,
    "compile": cmd_compile,
    "layout": cmd_layout,
    "simulate": cmd_simulate,
    "mitigate": cmd_mitigate,
    "analyze": cmd_analyze,
}


def run_stages(cfg: RunConfig, out: str | Path, stages: Sequence[str]) -> Workspace:
    ws = Workspace(out, cfg)
    for st in stages:
        if st == "mitigate" and cfg.backend != "statevector":
            log.info("skipping mitigate: backend %s produces no shots", cfg.backend)
            continue
        log.info("stage %s", st)
        STAGE_FUNCS[st](cfg, ws)
    return ws


# ---------------------------------------------------------------------------
# desk-scale reproduction runs
# ---------------------------------------------------------------------------

REPRO_TARGETS = ("spin-charge", "trotter-vs-exact", "trotter-order", "ppp-truncation", "mitigation", "postselection")


def normalize_target(name: str) -> str:
    key = name.lower().replace("_", "-")
    for t in REPRO_TARGETS:
        if t == key:
            return t
    raise ConfigError(f"unknown repro target {name!r}; choose from {', '.join(REPRO_TARGETS)}")


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def _report(ws: Workspace, checks: list[Check]) -> None:
    lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}" for c in checks]
    ws.write("report.txt", "\n".join(lines) + "\n")
    for line in lines:
        print(line)


def _override(defaults: dict, base: Mapping | None) -> RunConfig:
    data = json.loads(json.dumps(defaults))
    for k, v in (base or {}).items():
        if isinstance(v, dict) and isinstance(data.get(k), dict):
            data[k].update(v)
        else:
            data[k] = v
    return config_from_dict(data)


def repro_spin_charge(ws: Workspace, base: Mapping | None, seed: int) -> list[Check]:
    """Spin-charge separation from the exact sector-restricted quench."""
    from .analysis import VelocityRow, charge_tracer, front_velocity, spin_tracer, velocity_csv
    from .model import neel_state
    from .statevector import exact_evolve

    base = dict(base or {})
    L = int(base.get("model", {}).get("L", 11))
    c = L // 2
    t_max = 4.0
    times = np.round(np.linspace(0.0, t_max, int(round(t_max / 0.1)) + 1), 12)
    us = [0.0, 4.0, 8.0]
    rows = []
    for U in us:
        params = HubbardParams(L=L, U=U)
        states = exact_evolve(params, neel_state(L, c), list(times))
        occ = np.array([(1 - s.z_expectations()) / 2 for s in states])
        ch = charge_tracer(occ, c, times)
        sp = spin_tracer(states, c, times)
        ws.write(f"charge_tracer_U{U:g}.csv", ch.to_csv())
        ws.write(f"spin_tracer_U{U:g}.csv", sp.to_csv())
        fc, _, _ = front_velocity(ch, times, seed=seed)
        fs, _, _ = front_velocity(sp, times, seed=seed)
        rows.append(VelocityRow(U, fc, fs))
    ws.write("velocity.csv", velocity_csv(rows))
    ratios = [r.ratio for r in rows]
    return [
        Check("ratio >= 1 for U > 0", all(r >= 1 for r in ratios[1:]), f"ratios {np.round(ratios, 3).tolist()}"),
        Check("ratio non-decreasing in U", all(b >= a for a, b in zip(ratios[1:], ratios[2:])) and ratios[1] >= ratios[0], f"ratios {np.round(ratios, 3).tolist()}"),
        Check("v_charge(U=0) within 20% of 2", abs(rows[0].v_charge.slope - 2.0) <= 0.4, f"v_charge {rows[0].v_charge.slope:.4f}"),
    ]


def repro_trotter_vs_exact(ws: Workspace, base: Mapping | None, seed: int) -> list[Check]:
    """Trotter vs exact occupations on a small chain."""
    from .analysis import rmse
    from .statevector import exact_occupations, trotter_occupations

    cfg = _override({"model": {"L": 4, "U": 2.0}, "dt": 0.2, "n_steps": 30}, base)
    times = _step_times(cfg)
    trot = trotter_occupations(cfg.params, cfg.dt, cfg.n_steps, cfg.initial)
    exact = exact_occupations(cfg.params, cfg.initial, times)
    ws.write("trotter.csv", occupations_csv(times, trot))
    ws.write("exact.csv", occupations_csv(times, exact))
    err = [rmse(trot[s], exact[s]) for s in range(len(times))]
    ws.write("rmse.csv", table_csv(["step", "time", "rmse"], [[s, times[s], e] for s, e in enumerate(err)]))
    return [Check("Trotter RMSE stays below 0.1", max(err) < 0.1, f"max RMSE {max(err):.4g}")]


def repro_trotter_order(ws: Workspace, base: Mapping | None, seed: int) -> list[Check]:
    """Trotter RMSE against step size at fixed total time; log-log slope."""
    from .statevector import trotter_error_scan

    cfg = _override({"model": {"L": 4, "U": 2.0}, "dt": 0.2, "n_steps": 10}, base)
    dts = [0.05, 0.1, 0.2]
    total = 2.0
    rows = trotter_error_scan(cfg.params, dts, None, cfg.initial, total_time=total)
    ws.write("rmse_by_step.csv", table_csv(["dt", "step", "time", "rmse"], [[r.dt, r.step, r.time, r.rmse] for r in rows]))
    final = [np.mean([r.rmse for r in rows if r.dt == dt and r.step > 0]) for dt in dts]
    slope = float(np.polyfit(np.log(dts), np.log(final), 1)[0])
    ws.write("rmse_vs_dt.csv", table_csv(["dt", "mean_rmse"], [[d, e] for d, e in zip(dts, final)]) + f"# slope {slope:.6f}\n")
    return [Check("log-log slope in [1.8, 2.2]", 1.8 <= slope <= 2.2, f"slope {slope:.4f}")]


def repro_ppp_truncation(ws: Workspace, base: Mapping | None, seed: int) -> list[Check]:
    """PPP error against the statevector oracle for growing truncation weight."""
    from .ppp import ppp_occupations
    from .statevector import trotter_occupations

    cfg = _override({"model": {"L": 6, "U": 2.0}, "dt": 0.2, "n_steps": 30}, base)
    L = cfg.params.L
    modes = [L - 1, L]  # the two central modes
    ref = trotter_occupations(cfg.params, cfg.dt, cfg.n_steps, cfg.initial)
    times = _step_times(cfg)
    errs = {}
    rows = []
    for mw in (8, 12, 16):
        occ, runs = ppp_occupations(cfg.params, cfg.dt, cfg.n_steps, TruncationPolicy(mw=mw), cfg.initial, modes=modes)
        e = np.abs(occ - ref[:, modes])
        errs[mw] = float(e.max())
        rows += [[mw, s, times[s], *occ[s], *e[s]] for s in range(len(times))]
    head = ["mw", "step", "time"] + [f"n{j}" for j in modes] + [f"err{j}" for j in modes]
    ws.write("ppp_errors.csv", table_csv(head, rows))
    vals = [errs[m] for m in (8, 12, 16)]
    return [Check("max error non-increasing in mw", vals[0] >= vals[1] >= vals[2], f"max errors {vals}")]


def _mitigation_run(cfg: RunConfig, ws: Workspace) -> np.ndarray:
    run_stages(cfg, ws.root, ["simulate", "mitigate"])
    text = ws.path("report.csv").read_text().strip().splitlines()[1:]
    return np.array([[float(x) if x else math.nan for x in line.split(",")] for line in text])


def repro_mitigation(ws: Workspace, base: Mapping | None, seed: int) -> list[Check]:
    """Readout mitigation and decay recovery under synthetic noise."""
    cfg = _override(
        {
            "model": {"L": 4, "U": 2.0},
            "dt": 0.2,
            "n_steps": 20,
            "noise": {"p_dep2q": 0.01, "p10": 0.02, "p01": 0.03, "trajectories": 200, "shots": 20000},
            "mitigation": {"rem": True, "decay_recovery": True, "c": 0.5, "postselect": True},
            "seed": seed,
        },
        base,
    )
    ws.cfg = cfg
    rep = _mitigation_run(cfg, ws)
    raw, rem, dec = rep[:, 1].mean(), rep[:, 2].mean(), rep[:, 3].mean()
    gain = 1 - dec / rem
    return [
        Check("REM reduces the mean RMSE", rem < raw, f"raw {raw:.5f} -> rem {rem:.5f}"),
        Check("decay recovery gains >= 15%", gain >= 0.15, f"rem {rem:.5f} -> decay {dec:.5f} ({100 * gain:.1f}%)"),
    ]


def repro_postselection(ws: Workspace, base: Mapping | None, seed: int) -> list[Check]:
    """Post-selection discard rate against depth, noiseless and noisy."""
    from .circuit import build_trotter_circuit
    from .mitigation import postselect
    from .statevector import NoiseModel, sample_steps

    cfg = _override(
        {"model": {"L": 6, "U": 4.0}, "dt": 0.2, "n_steps": 30, "noise": {"p_dep2q": 0.003, "trajectories": 300, "shots": 4000}, "seed": seed},
        base,
    )
    circ = build_trotter_circuit(cfg.params, cfg.dt, cfg.n_steps, cfg.initial)
    ini = cfg.initial
    out = {}
    for label, p in (("noiseless", 0.0), ("noisy", cfg.noise.p_dep2q)):
        noise = NoiseModel(p_dep2q=p, seed=seed)
        shots = sample_steps(circ, cfg.noise.shots, noise=noise, n_trajectories=cfg.noise.trajectories, seed=seed)
        res = [postselect(sh, ini.n_up, ini.n_down, circ.perm_after(s)) for s, sh in enumerate(shots)]
        out[label] = res
    rows = [[s, out["noiseless"][s].discard_rate, out["noisy"][s].discard_rate] for s in range(cfg.n_steps + 1)]
    ws.write("discard_rate.csv", table_csv(["step", "noiseless", "noisy"], rows))
    cdf = [[s, k, f] for s, r in enumerate(out["noisy"]) for k, f in r.cdf()]
    ws.write("k_cdf.csv", table_csv(["step", "k", "cdf"], cdf))
    depths = np.linspace(cfg.n_steps / 5, cfg.n_steps, 5).round().astype(int)
    d = np.array([out["noisy"][s].discard_rate for s in depths])
    inc = np.diff(d)
    return [
        Check("noiseless discard rate is 0", all(r.discard_rate == 0 for r in out["noiseless"]), "all steps"),
        Check("noisy discard rate increasing over 5 depths", bool(np.all(inc > 0)), f"depths {depths.tolist()} rates {np.round(d, 4).tolist()}"),
        Check("noisy discard rate saturating", bool(inc[-1] < inc[0]), f"first/last increment {inc[0]:.4f}/{inc[-1]:.4f}"),
    ]


REPRO_FUNCS = {
    "spin-charge": repro_spin_charge,
    "trotter-vs-exact": repro_trotter_vs_exact,
    "trotter-order": repro_trotter_order,
    "ppp-truncation": repro_ppp_truncation,
    "mitigation": repro_mitigation,
    "postselection": repro_postselection,
}


def cmd_repro(target: str, out: str | Path, base: Mapping | None = None, seed: int = 0) -> list[Check]:
    name = normalize_target(target)
    ws = Workspace(out, None)
    checks = REPRO_FUNCS[name](ws, base, seed)
    _report(ws, checks)
    ws.record(f"repro_{name.replace('-', '_')}")
    return checks


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hubbardkit", description="Trotterized 1D Fermi-Hubbard simulation pipeline.")
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--seed", type=int, help="seed for stochastic stages (overrides the config)")
    ap.add_argument("--stage", choices=STAGES + ("all",), default="all", help="stage to run (default: all)")
    ap.add_argument("--repro", metavar="TARGET", help=f"run a desk-scale reproduction: {', '.join(REPRO_TARGETS)}")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.repro:
            base = None
            if args.config:
                p = Path(args.config)
                if not p.is_file():
                    raise ConfigError(f"config file {p} not found")
                base = json.loads(p.read_text())
            checks = cmd_repro(args.repro, args.out, base, args.seed if args.seed is not None else 0)
            return EXIT_OK if all(c.passed for c in checks) else EXIT_TOLERANCE
        if not args.config:
            raise ConfigError("--config is required unless --repro is given")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        stages = STAGES if args.stage == "all" else (args.stage,)
        run_stages(cfg, args.out, stages)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SizeError as exc:
        print(f"size error: {exc}", file=sys.stderr)
        return EXIT_SIZE
    except ToleranceError as exc:
        print(f"tolerance failure: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except Exception as exc:  # noqa: BLE001
        from .compiler import SynthesisError

        if isinstance(exc, SynthesisError):
            print(f"tolerance failure: {exc}", file=sys.stderr)
            return EXIT_TOLERANCE
        raise


if __name__ == "__main__":
    sys.exit(main())
