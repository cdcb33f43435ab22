"""Config-driven Monte Carlo experiments: CLT distances, variance scaling, arm decay, Stein bounds."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import _kernels as K
from ._random import derive_seed, make_rng
from .errors import DegenerateFunctionalError, InvalidParameterError, InvariantViolation
from .geometry import Box, sample_poisson
from .lattice import WeightLaw, draw_uniforms, lattice_structure
from .mst import mst_weight
from .percolation import ArmStudy, arm_rows_to_csv, estimate_arm_probability
from .stein import (DistanceReport, LatticeMSTModel, PoissonBlockModel, dkw_slack, poisson_blocks,
                    stein_bound)

KINDS = ("clt_poisson", "clt_lattice", "arm_decay", "variance_scaling", "stein_bound")
COMMAND_KINDS = {
    "clt": ("clt_poisson", "clt_lattice"),
    "arm-decay": ("arm_decay",),
    "var-scaling": ("variance_scaling",),
    "stein-bound": ("stein_bound",),
}
EXPERIMENT_ID = {"clt_poisson": 1, "clt_lattice": 2, "arm_decay": 3, "variance_scaling": 4, "stein_bound": 5}

MAX_CONTINUUM_N = 32
MAX_LATTICE_N = 64
MAX_REPLICATES = 10 ** 4
CHUNK = 256
BOOT_KEY = 1 << 20

LONG_COLUMNS = ("n", "statistic", "value", "stderr", "ci_lo", "ci_hi", "replicates")

_COMMON = {"kind": None, "d": 2, "sizes": None, "replicates": None, "seed": 0, "out": None}
_EXTRA = {
    "clt_poisson": {"intensity": 1.0, "bootstrap": 200},
    "clt_lattice": {"law": {"name": "uniform01"}, "bootstrap": 200},
    "variance_scaling": {"model": "lattice", "law": {"name": "uniform01"}, "intensity": 1.0},
    "arm_decay": {"model": "lattice", "params": None, "k": 2, "variant": "reach", "inner": 1.0,
                  "intensity": 1.0, "site": "edge", "law": {"name": "uniform01"}},
    "stein_bound": {"model": "lattice", "law": {"name": "uniform01"}, "intensity": 1.0, "outer_reps": 200,
                    "inner_reps": 64, "blocks_k": None, "bootstrap": 200},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description. ``options`` holds the kind-specific keys."""

    kind: str
    d: int
    sizes: tuple
    replicates: int
    seed: int
    out: str | None = None
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, seed: int | None = None, allow_large: bool = False) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise InvalidParameterError("config must be a JSON object")
        kind = raw.get("kind")
        if kind not in KINDS:
            raise InvalidParameterError(f"kind must be one of {KINDS}, got {kind!r}")
        allowed = {**_COMMON, **_EXTRA[kind]}
        unknown = sorted(set(raw) - set(allowed))
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {unknown}")
        cfg = {**allowed, **raw}
        if seed is not None:
            cfg["seed"] = seed
        for key in ("sizes", "replicates") + (("params",) if kind == "arm_decay" else ()):
            if cfg[key] is None:
                raise InvalidParameterError(f"missing required key {key!r}")
        d = cfg["d"]
        if not isinstance(d, int) or d < 1:
            raise InvalidParameterError("d must be a positive integer")
        sizes = cfg["sizes"]
        if not isinstance(sizes, list) or not sizes or not all(isinstance(x, (int, float)) and x > 0 for x in sizes):
            raise InvalidParameterError("sizes must be a non-empty list of positive numbers")
        reps = cfg["replicates"]
        if not isinstance(reps, int) or reps < 1:
            raise InvalidParameterError("replicates must be an integer >= 1")
        s = cfg["seed"]
        if not isinstance(s, int) or not 0 <= s < 2 ** 64:
            raise InvalidParameterError("seed must be an unsigned 64-bit integer")
        options = {k: cfg[k] for k in _EXTRA[kind]}
        model = options.get("model", "continuum" if kind == "clt_poisson" else "lattice")
        if kind in ("variance_scaling", "stein_bound") and model not in ("lattice", "poisson"):
            raise InvalidParameterError("model must be 'lattice' or 'poisson'")
        if kind == "arm_decay" and model not in ("lattice", "continuum"):
            raise InvalidParameterError("model must be 'lattice' or 'continuum'")
        lattice = model == "lattice" or kind == "clt_lattice"
        if lattice:
            if d < 2 or not all(float(x).is_integer() for x in sizes):
                raise InvalidParameterError("lattice experiments need d >= 2 and integer sizes")
            sizes = [int(x) for x in sizes]
        if "law" in options:
            options["law"] = WeightLaw.from_dict(options["law"]).to_dict()
        if "intensity" in options and not (isinstance(options["intensity"], (int, float)) and options["intensity"] > 0):
            raise InvalidParameterError("intensity must be > 0")
        if "bootstrap" in options and not (isinstance(options["bootstrap"], int) and options["bootstrap"] >= 2):
            raise InvalidParameterError("bootstrap must be an integer >= 2")
        if kind in ("variance_scaling", "clt_poisson", "clt_lattice") and reps < 2:
            raise InvalidParameterError("variance undefined with fewer than 2 replicates")
        if kind == "arm_decay":
            params = options["params"]
            if not isinstance(params, list) or not params:
                raise InvalidParameterError("params must be a non-empty list")
            # validates the remaining fields
            _arm_study(kind, d, sizes, options)
        if kind == "stein_bound":
            for key in ("outer_reps", "inner_reps"):
                if not isinstance(options[key], int) or options[key] < (2 if key == "outer_reps" else 1):
                    raise InvalidParameterError(f"{key} is too small")
            if model == "poisson":
                for n in sizes:
                    poisson_blocks(n, d, options["blocks_k"])
        if not allow_large:
            limit = MAX_LATTICE_N if lattice else MAX_CONTINUUM_N
            if max(sizes) > limit:
                raise InvalidParameterError(f"n > {limit} needs --allow-large")
            counts = [reps] + ([options["outer_reps"]] if kind == "stein_bound" else [])
            if max(counts) > MAX_REPLICATES:
                raise InvalidParameterError(f"more than {MAX_REPLICATES} replicates needs --allow-large")
        return cls(kind, d, tuple(sizes), reps, s, cfg["out"], options)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "d": self.d, "sizes": list(self.sizes), "replicates": self.replicates,
                "seed": self.seed, **self.options}

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path, seed: int | None = None, allow_large: bool = False) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidParameterError(f"cannot read config {path}: {exc}") from None
    return ExperimentConfig.from_dict(raw, seed=seed, allow_large=allow_large)


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list
    csv_text: str
    elapsed_seconds: float
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"config_hash": self.config.hash, "code_version": __version__, "rows": self.rows,
                "elapsed_seconds": self.elapsed_seconds, "seed": self.config.seed, **self.extra}

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{self.config.kind}.csv"
        json_path = out / f"{self.config.kind}.json"
        _atomic_write(csv_path, self.csv_text)
        _atomic_write(json_path, json.dumps(self.summary(), indent=2, sort_keys=True, allow_nan=True) + "\n")
        return csv_path, json_path


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    return f"{x:.10g}" if isinstance(x, float) else str(x)


def long_rows_to_csv(rows) -> str:
    """CSV with columns ``n,statistic,value,stderr,ci_lo,ci_hi,replicates``, 10 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LONG_COLUMNS)
    for r in rows:
        w.writerow([_fmt(float(r["n"]))] + [r["statistic"]] + [_fmt(float(r[k])) for k in LONG_COLUMNS[2:6]]
                   + [int(r["replicates"])])
    return buf.getvalue()


def _row(n, statistic, value, stderr, replicates, ci=None):
    if ci is None:
        ci = (value - 1.959963984540054 * stderr, value + 1.959963984540054 * stderr)
    return {"n": float(n), "statistic": statistic, "value": float(value), "stderr": float(stderr),
            "ci_lo": float(ci[0]), "ci_hi": float(ci[1]), "replicates": int(replicates)}


def _pmap(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# ------------------------------------------------------------- samplers


def sample_mst_weights(cfg: ExperimentConfig, n, n_index: int, count: int, threads: int = 1) -> np.ndarray:
    """``count`` independent draws of ``M_n``; replicate ``i`` uses seed ``(seed, experiment, n_index, i)``."""
    exp = EXPERIMENT_ID[cfg.kind]
    seeds = [derive_seed(cfg.seed, exp, n_index, i) for i in range(count)]
    lattice = cfg.kind == "clt_lattice" or cfg.options.get("model") == "lattice"
    if lattice:
        law = WeightLaw.from_dict(cfg.options["law"])
        _, u, v = lattice_structure(int(n), cfg.d)
        nv = (2 * int(n) + 1) ** cfg.d

        def chunk(ss):
            W = np.empty((len(ss), u.size))
            for i, s in enumerate(ss):
                W[i] = law.quantile(draw_uniforms(s, u.size))
            return K.mst_weight_batch(nv, u, v, W)

        parts = _pmap(chunk, [seeds[i:i + CHUNK] for i in range(0, count, CHUNK)], threads)
        return np.concatenate(parts) if parts else np.empty(0)
    domain = Box.centered(float(n), cfg.d)
    lam = float(cfg.options["intensity"])
    return np.array(_pmap(lambda s: mst_weight(sample_poisson(domain, lam, s)), seeds, threads))


def _standardize(m: np.ndarray) -> np.ndarray:
    sd = m.std(ddof=1)
    if not sd > 0:
        raise DegenerateFunctionalError("sample standard deviation is zero")
    return (m - m.mean()) / sd


def _distances_with_bootstrap(m: np.ndarray, n, boot: int, seed: int) -> list[dict]:
    z = _standardize(m)
    rep = DistanceReport.of(z)
    if not rep.metric_relation_holds:
        raise InvariantViolation(f"D = {rep.kolmogorov} exceeds 2 sqrt(W) + slack at n = {n}")
    rng = make_rng(seed)
    N = m.size
    bd = np.empty(boot)
    bw = np.empty(boot)
    for b in range(boot):
        s = m[rng.integers(0, N, size=N)]
        sd = s.std(ddof=1)
        if sd > 0:
            r = DistanceReport.of((s - s.mean()) / sd)
            bd[b], bw[b] = r.kolmogorov, r.wasserstein
        else:
            bd[b], bw[b] = 1.0, math.inf
    rows = []
    for name, val, bs in (("kolmogorov", rep.kolmogorov, bd), ("wasserstein", rep.wasserstein, bw)):
        lo, hi = np.percentile(bs, [2.5, 97.5])
        rows.append(_row(n, name, val, float(np.std(bs, ddof=1)), N, (float(lo), float(hi))))
    return rows


def _variance_se(m: np.ndarray) -> float:
    N = m.size
    var = m.var(ddof=1)
    mu4 = np.mean((m - m.mean()) ** 4)
    return math.sqrt(max(mu4 - var * var * (N - 3) / (N - 1), 0.0) / N)


# ----------------------------------------------------------- experiments


def run_clt(cfg: ExperimentConfig, threads: int = 1) -> RunResult:
    """Kolmogorov and Wasserstein distances of standardized ``M_n`` to N(0, 1), with bootstrap errors."""
    if cfg.kind not in ("clt_poisson", "clt_lattice"):
        raise InvalidParameterError(f"run_clt cannot run kind {cfg.kind!r}")
    t0 = time.perf_counter()
    rows = []
    exp = EXPERIMENT_ID[cfg.kind]
    for j, n in enumerate(cfg.sizes):
        m = sample_mst_weights(cfg, n, j, cfg.replicates, threads)
        N = m.size
        rows.append(_row(n, "mean", m.mean(), m.std(ddof=1) / math.sqrt(N), N))
        rows.append(_row(n, "variance", m.var(ddof=1), _variance_se(m), N))
        rows += _distances_with_bootstrap(m, n, cfg.options["bootstrap"], derive_seed(cfg.seed, exp, j, BOOT_KEY))
    return RunResult(cfg, rows, long_rows_to_csv(rows), time.perf_counter() - t0)


def vertex_measure(cfg: ExperimentConfig, n) -> float:
    """``|V_n|``: ``(2n+1)^d`` lattice vertices or the volume ``(2n)^d`` of ``B(n)``."""
    if cfg.options.get("model") == "poisson":
        return float(2 * n) ** cfg.d
    return float(2 * int(n) + 1) ** cfg.d


def run_variance_scaling(cfg: ExperimentConfig, threads: int = 1) -> RunResult:
    """``Var(M_n)`` and ``Var(M_n) / |V_n|`` per size."""
    if cfg.kind != "variance_scaling":
        raise InvalidParameterError(f"run_variance_scaling cannot run kind {cfg.kind!r}")
    t0 = time.perf_counter()
    rows = []
    for j, n in enumerate(cfg.sizes):
        m = sample_mst_weights(cfg, n, j, cfg.replicates, threads)
        var, se = m.var(ddof=1), _variance_se(m)
        vol = vertex_measure(cfg, n)
        rows.append(_row(n, "variance", var, se, m.size))
        rows.append(_row(n, "normalized_variance", var / vol, se / vol, m.size))
    return RunResult(cfg, rows, long_rows_to_csv(rows), time.perf_counter() - t0)


def _arm_study(kind, d, sizes, options) -> ArmStudy:
    return ArmStudy(model=options["model"], sizes=tuple(sizes), params=tuple(float(p) for p in options["params"]),
                    d=d, k=int(options["k"]), variant=options["variant"], inner=float(options["inner"]),
                    intensity=float(options["intensity"]), site=options["site"],
                    law=WeightLaw.from_dict(options["law"]))


@dataclass(frozen=True)
class DecayFit:
    """Weighted least-squares fit ``log p = alpha - beta log n``."""

    param: float
    beta_hat: float
    beta_se: float
    ci_lo: float
    ci_hi: float
    alpha: float
    points: int
    defined: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def fit_decay(rows, param: float) -> DecayFit:
    """Fit over the rows at ``param`` with ``p̂ > 0``; weights ``N p̃ / (1 - p̃)`` with ``p̃ = (s + 1/2) / (N + 1)``."""
    sel = [r for r in rows if r.param == param and r.successes > 0]
    ns = sorted({r.n for r in sel})
    if len(ns) < 2:
        return DecayFit(param, math.nan, math.nan, math.nan, math.nan, math.nan, len(sel), False)
    x = np.log([r.n for r in sel])
    y = np.log([r.phat for r in sel])
    pt = np.array([(r.successes + 0.5) / (r.replicates + 1.0) for r in sel])
    w = np.array([r.replicates for r in sel]) * pt / (1.0 - pt)
    xb = np.sum(w * x) / w.sum()
    yb = np.sum(w * y) / w.sum()
    sxx = np.sum(w * (x - xb) ** 2)
    slope = np.sum(w * (x - xb) * (y - yb)) / sxx
    se = math.sqrt(1.0 / sxx)
    beta = -float(slope)
    z = 1.959963984540054
    return DecayFit(param, beta, se, beta - z * se, beta + z * se, float(yb - slope * xb), len(sel), True)


def run_arm_decay(cfg: ExperimentConfig, threads: int = 1) -> RunResult:
    """Arm probabilities over the ``(n, param)`` grid plus a decay-exponent fit per parameter."""
    if cfg.kind != "arm_decay":
        raise InvalidParameterError(f"run_arm_decay cannot run kind {cfg.kind!r}")
    t0 = time.perf_counter()
    study = _arm_study(cfg.kind, cfg.d, cfg.sizes, cfg.options)
    arm_rows = estimate_arm_probability(study, cfg.replicates, derive_seed(cfg.seed, EXPERIMENT_ID[cfg.kind]),
                                        threads)
    fits = [fit_decay(arm_rows, p).to_dict() for p in study.params]
    rows = [dict(r.__dict__, stderr=r.stderr) for r in arm_rows]
    return RunResult(cfg, rows, arm_rows_to_csv(arm_rows), time.perf_counter() - t0, {"fits": fits})


def stein_factory(cfg: ExperimentConfig, n):
    if cfg.options["model"] == "lattice":
        law = WeightLaw.from_dict(cfg.options["law"])
        return lambda b, f: LatticeMSTModel(int(n), cfg.d, law, b, f)
    lam = float(cfg.options["intensity"])
    k = cfg.options["blocks_k"]
    return lambda b, f: PoissonBlockModel(float(n), cfg.d, lam, b, f, k)


def run_stein_bound(cfg: ExperimentConfig, threads: int = 1) -> RunResult:
    """Stein bound per size, logged next to the empirical distances of standardized ``M_n``."""
    if cfg.kind != "stein_bound":
        raise InvalidParameterError(f"run_stein_bound cannot run kind {cfg.kind!r}")
    t0 = time.perf_counter()
    exp = EXPERIMENT_ID[cfg.kind]
    rows, checks, estimates = [], [], []
    for j, n in enumerate(cfg.sizes):
        est = stein_bound(stein_factory(cfg, n), cfg.options["outer_reps"], cfg.options["inner_reps"],
                          derive_seed(cfg.seed, exp, j, BOOT_KEY + 1))
        R = est.replicates
        for name in ("t_mean", "t_var", "sigma2_hat", "third_moment", "bound_value"):
            rows.append(_row(n, name, getattr(est, name), getattr(est, "se_" + name), R))
        m = sample_mst_weights(cfg, n, j, cfg.replicates, threads)
        dist = _distances_with_bootstrap(m, n, cfg.options["bootstrap"], derive_seed(cfg.seed, exp, j, BOOT_KEY))
        rows += dist
        w_row = dist[1]
        checks.append({"n": float(n), "bound_value": est.bound_value, "wasserstein": w_row["value"],
                       "wasserstein_se": w_row["stderr"],
                       "bound_ok": bool(est.bound_value >= w_row["value"] - 3.0 * w_row["stderr"]),
                       "dkw_slack": dkw_slack(m.size)})
        estimates.append({"n": float(n), **est.to_dict()})
    return RunResult(cfg, rows, long_rows_to_csv(rows), time.perf_counter() - t0,
                     {"checks": checks, "estimates": estimates})


RUNNERS = {
    "clt_poisson": run_clt,
    "clt_lattice": run_clt,
    "arm_decay": run_arm_decay,
    "variance_scaling": run_variance_scaling,
    "stein_bound": run_stein_bound,
}


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> RunResult:
    if threads < 1:
        raise InvalidParameterError("threads must be >= 1")
    return RUNNERS[cfg.kind](cfg, threads)
