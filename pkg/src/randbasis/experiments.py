"""Trial orchestration, box-plot statistics and the CSV / SVG / JSON outputs."""

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, fields, replace
import json
import math
from pathlib import Path

import numpy as np

from randbasis.basis import GAUSSIAN, GREEDY_BOX, RANDOM_BOX, ParameterBox
from randbasis.greedy import GreedyConfig, bound_curve, run_greedy
from randbasis.grid import make_grid, norm_sq, normalized_error, target_function, target_value
from randbasis.mlp import LINEAR_ONLY, TrainConfig, TrainingDiverged, train_network
from randbasis.random_basis import (
    DEFAULT_COND_THRESHOLD,
    MC_ALPHA,
    MC_OMEGA,
    mc_direct_weights,
    run_random_basis,
    sample_mc,
)

METHODS = ("greedy", "random", "mc_direct", "mlp_full", "mlp_linear")
SUMMARY_SIZES = (10, 25, 50, 100)


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomConfig:
    box: ParameterBox = RANDOM_BOX
    cond_threshold: float = DEFAULT_COND_THRESHOLD
    kind: str = GAUSSIAN


@dataclass(frozen=True)
class MCConfig:
    alpha: float = MC_ALPHA
    Omega: float = MC_OMEGA
    x: float = 0.5
    ns: tuple = (32, 128, 512, 2048)
    sets: int = 200


@dataclass(frozen=True)
class MlpExperimentConfig:
    full: TrainConfig = TrainConfig()
    linear: TrainConfig = TrainConfig(mode=LINEAR_ONLY, output_step_size=0.01)
    full_sizes: tuple = (2, 4, 6, 8, 10, 20, 40, 60, 80, 100)
    linear_sizes: tuple = (10, 20, 30, 40, 50, 60, 70, 80, 90, 100)


@dataclass(frozen=True)
class ExperimentConfig:
    trials: int = 100
    n_max: int = 100
    seed: int = 0
    grid: int = 1000
    workers: int = 1
    greedy: GreedyConfig = GreedyConfig()
    random: RandomConfig = RandomConfig()
    mc_direct: MCConfig = MCConfig()
    mlp: MlpExperimentConfig = MlpExperimentConfig()

    def __post_init__(self):
        if self.trials < 1 or self.n_max < 1 or self.workers < 1:
            raise ConfigError("trials, n_max and workers must be >= 1")
        if self.grid < 2:
            raise ConfigError("grid must have at least 2 points")

    def to_dict(self):
        def conv(obj):
            if isinstance(obj, ParameterBox):
                return obj.to_dict()
            if hasattr(obj, "__dataclass_fields__"):
                return {f.name: conv(getattr(obj, f.name)) for f in fields(obj)}
            if isinstance(obj, tuple):
                return [conv(v) for v in obj]
            return obj

        return conv(self)

    @classmethod
    def from_dict(cls, data):
        try:
            return _from_dict(cls, data)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc


_NESTED = {
    "greedy": GreedyConfig,
    "random": RandomConfig,
    "mc_direct": MCConfig,
    "mlp": MlpExperimentConfig,
    "full": TrainConfig,
    "linear": TrainConfig,
}


def _from_dict(cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object for {cls.__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kw = {}
    base = cls()
    for key, value in data.items():
        if key in ("search_box", "box"):
            kw[key] = ParameterBox.from_dict(value)
        elif key in _NESTED and isinstance(value, dict):
            sub = _from_dict(_NESTED[key], value)
            if key == "linear" and "mode" not in value:
                sub = replace(sub, mode=LINEAR_ONLY)
            kw[key] = sub
        elif isinstance(value, list):
            kw[key] = tuple(value)
        else:
            kw[key] = value
    return replace(base, **kw)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------


def child_seed(master_seed, trial):
    """Seed for trial ``trial``; depends only on (master_seed, trial)."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(trial),))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass
class TrialSeries:
    method: str
    sizes: np.ndarray
    values: np.ndarray
    seeds: list
    failed: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.seeds), len(self.sizes))

    @property
    def trials(self):
        return len(self.seeds)

    @property
    def n_max(self):
        return int(self.sizes.max()) if self.sizes.size else 0

    def column(self, n):
        idx = np.flatnonzero(self.sizes == n)
        if idx.size == 0:
            raise KeyError(f"size {n} not in series")
        return self.values[:, idx[0]]

    def completed(self):
        """Rows of trials that did not fail."""
        ok = [i for i in range(self.trials) if i not in set(self.failed)]
        return self.values[ok]


def method_sizes(method, cfg):
    if method == "mlp_full":
        return tuple(cfg.mlp.full_sizes)
    if method == "mlp_linear":
        return tuple(cfg.mlp.linear_sizes)
    return tuple(range(1, cfg.n_max + 1))


def run_one(method, cfg, seed):
    """One trial of ``method``; returns (row of bar_e per size, extras)."""
    grid = make_grid(1, cfg.grid)
    f = target_function(grid)
    rng = np.random.default_rng(seed)
    if method == "greedy":
        gcfg = replace(cfg.greedy, max_steps=cfg.n_max)
        trace = run_greedy(gcfg, f, rng)
        return trace.bar_e, {"shortfall": trace.shortfall_count, "attempts": int(sum(s.attempts_used for s in trace.steps))}
    if method == "random":
        rc = cfg.random
        run = run_random_basis(rc.box, f, cfg.n_max, rc.cond_threshold, rng, kind=rc.kind)
        return run.bar_e, {"discarded": run.final.discarded_count}
    if method == "mc_direct":
        mc = cfg.mc_direct
        samples = sample_mc(cfg.n_max, target_value, rng, mc.alpha, mc.Omega)
        row = [normalized_error(mc_direct_weights(samples.head(n), grid), f) for n in range(1, cfg.n_max + 1)]
        return np.array(row), {}
    if method in ("mlp_full", "mlp_linear"):
        tcfg = cfg.mlp.full if method == "mlp_full" else cfg.mlp.linear
        row = []
        for n in method_sizes(method, cfg):
            sub = np.random.default_rng([seed, n])
            row.append(train_network(n, target_value, tcfg, sub, grid).bar_e)
        return np.array(row), {}
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")


def _run_one_safe(args):
    method, cfg, seed = args
    try:
        row, extras = run_one(method, cfg, seed)
        return np.asarray(row, dtype=np.float64), extras, None
    except TrainingDiverged as exc:
        return None, {}, str(exc)


def run_trials(method, cfg, trials=None, master_seed=None, workers=None):
    """Run ``trials`` independent trials; results are slotted by trial index."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    trials = cfg.trials if trials is None else trials
    master_seed = cfg.seed if master_seed is None else master_seed
    workers = cfg.workers if workers is None else workers
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    sizes = method_sizes(method, cfg)
    seeds = [child_seed(master_seed, k) for k in range(trials)]
    jobs = [(method, cfg, s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one_safe, jobs))
    else:
        results = [_run_one_safe(j) for j in jobs]
    values = np.full((trials, len(sizes)), np.nan)
    failed = []
    extras = {}
    errors = {}
    for k, (row, ex, err) in enumerate(results):
        if err is not None:
            failed.append(k)
            errors[k] = err
            continue
        values[k] = row
        for key, val in ex.items():
            extras.setdefault(key, [None] * trials)[k] = val
    if errors:
        extras["errors"] = errors
    return TrialSeries(method, np.array(sizes), values, seeds, failed, extras)


# ---------------------------------------------------------------------------
# box statistics
# ---------------------------------------------------------------------------

BOX_PERCENTILES = (25.0, 75.0)
WHISKER_PERCENTILES = (12.5, 87.5)


@dataclass
class BoxStats:
    method: str
    sizes: np.ndarray
    median: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray
    whisker_lo: np.ndarray
    whisker_hi: np.ndarray
    outliers: list
    trials: int

    @property
    def n_outliers(self):
        return np.array([len(o) for o in self.outliers], dtype=np.int64)


def boxplot_stats(series):
    """Median, central-50% box and central-75% whiskers per size (linear interpolation)."""
    data = series.completed()
    if data.shape[0] < 4:
        raise ValueError(f"box statistics need at least 4 trials, got {data.shape[0]}")
    q = np.percentile(data, [50.0, *BOX_PERCENTILES, *WHISKER_PERCENTILES], axis=0, method="linear")
    med, blo, bhi, wlo, whi = q
    outliers = []
    for j in range(data.shape[1]):
        col = data[:, j]
        outliers.append(np.sort(col[(col < wlo[j]) | (col > whi[j])]))
    return BoxStats(series.method, series.sizes.copy(), med, blo, bhi, wlo, whi, outliers, data.shape[0])


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

SERIES_HEADER = ["method", "trial", "seed", "n", "bar_e_n"]
STATS_HEADER = ["method", "n", "median", "box_lo", "box_hi", "whisker_lo", "whisker_hi", "n_outliers"]


def _fmt(v):
    return f"{float(v):.17g}"


def _open_for_write(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc


def emit_csv(obj, path):
    """Write a TrialSeries or BoxStats as CSV."""
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(obj, TrialSeries):
            w.writerow(SERIES_HEADER)
            failed = set(obj.failed)
            for k in range(obj.trials):
                if k in failed:
                    continue
                for j, n in enumerate(obj.sizes):
                    w.writerow([obj.method, k, obj.seeds[k], int(n), _fmt(obj.values[k, j])])
        elif isinstance(obj, BoxStats):
            w.writerow(STATS_HEADER)
            for j, n in enumerate(obj.sizes):
                w.writerow([
                    obj.method, int(n), _fmt(obj.median[j]), _fmt(obj.box_lo[j]), _fmt(obj.box_hi[j]),
                    _fmt(obj.whisker_lo[j]), _fmt(obj.whisker_hi[j]), len(obj.outliers[j]),
                ])
        else:
            raise TypeError(f"cannot write {type(obj).__name__} as CSV")
    return Path(path)


def empty_series(method):
    return TrialSeries(method, np.zeros(0, dtype=np.int64), np.zeros((0, 0)), [])


def read_series_csv(path):
    """Parse a TrialSeries CSV written by ``emit_csv``."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SERIES_HEADER:
            raise ConfigError(f"{path} is not a trial-series CSV (header {header})")
        rows = list(reader)
    if not rows:
        return empty_series("unknown")
    method = rows[0][0]
    trials = sorted({int(r[1]) for r in rows})
    sizes = sorted({int(r[3]) for r in rows})
    ti = {t: i for i, t in enumerate(trials)}
    ni = {n: j for j, n in enumerate(sizes)}
    values = np.full((len(trials), len(sizes)), np.nan)
    seeds = [0] * len(trials)
    for r in rows:
        i = ti[int(r[1])]
        seeds[i] = int(r[2])
        values[i, ni[int(r[3])]] = float(r[4])
    return TrialSeries(method, np.array(sizes), values, seeds)


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

_W, _PANEL_H = 720, 300
_ML, _MR, _MT, _MB = 70, 20, 30, 40
LOG_FLOOR = 1e-12


def _plot_sizes(sizes):
    sizes = [int(n) for n in sizes]
    if len(sizes) <= 20:
        return sizes
    return [n for n in sizes if n % 5 == 0]


def emit_svg(stats_list, path, bound=None, reference=None, title=None):
    """Box-plot panels (one per BoxStats) on a log vertical axis.

    ``bound`` is an optional (sizes, values) pair drawn as a red polyline in
    every panel; ``reference`` an optional (sizes, values) grey curve.
    """
    if isinstance(stats_list, BoxStats):
        stats_list = [stats_list]
    if not stats_list:
        raise ValueError("nothing to plot")
    vals = []
    for st in stats_list:
        vals += [st.whisker_lo, st.whisker_hi, st.median]
        vals += [o for o in st.outliers if len(o)]
    for extra in (bound, reference):
        if extra is not None:
            vals.append(np.asarray(extra[1]))
    allv = np.concatenate([np.ravel(v) for v in vals])
    allv = np.maximum(allv[np.isfinite(allv)], LOG_FLOOR)
    lo = math.floor(math.log10(allv.min()))
    hi = math.ceil(math.log10(allv.max()))
    if hi <= lo:
        hi = lo + 1
    n_lo = min(int(st.sizes.min()) for st in stats_list)
    n_hi = max(int(st.sizes.max()) for st in stats_list)
    if bound is not None:
        n_lo = min(n_lo, int(np.min(bound[0])))
        n_hi = max(n_hi, int(np.max(bound[0])))
    if n_hi == n_lo:
        n_lo, n_hi = n_lo - 1, n_hi + 1
    pw = _W - _ML - _MR
    ph = _PANEL_H - _MT - _MB
    height = _PANEL_H * len(stats_list)

    def px(n):
        return _ML + pw * (n - n_lo) / (n_hi - n_lo)

    def py(v, top):
        lv = math.log10(max(float(v), LOG_FLOOR))
        return top + _MT + ph * (hi - lv) / (hi - lo)

    half = max(1.5, min(6.0, 0.35 * pw / max(1, len(_plot_sizes(stats_list[0].sizes)))))
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{height}" '
        f'viewBox="0 0 {_W} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{_W}" height="{height}" fill="white"/>',
    ]
    for p, st in enumerate(stats_list):
        top = p * _PANEL_H
        label = st.method if title is None else f"{title}: {st.method}"
        out.append(f'<g class="panel" data-method="{st.method}">')
        out.append(f'<text x="{_ML}" y="{top + 18}" font-size="13">{label} ({st.trials} trials)</text>')
        out.append(
            f'<rect x="{_ML}" y="{top + _MT}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>'
        )
        for e in range(lo, hi + 1):
            y = py(10.0**e, top)
            out.append(f'<line class="grid" x1="{_ML}" y1="{y:.3f}" x2="{_ML + pw}" y2="{y:.3f}" stroke="#ddd"/>')
            out.append(f'<text x="{_ML - 6}" y="{y + 4:.3f}" text-anchor="end">1e{e}</text>')
        ticks = range(n_lo, n_hi + 1)
        if n_hi - n_lo > 20:
            ticks = [n for n in ticks if n % 10 == 0]
        for n in ticks:
            out.append(
                f'<text x="{px(n):.3f}" y="{top + _MT + ph + 16}" text-anchor="middle">{n}</text>'
            )
        out.append(
            f'<text x="{_ML + pw / 2:.3f}" y="{top + _PANEL_H - 6}" text-anchor="middle">network size n</text>'
        )
        show = set(_plot_sizes(st.sizes))
        for j, n in enumerate(st.sizes):
            n = int(n)
            if n not in show:
                continue
            x = px(n)
            yw_hi, yw_lo = py(st.whisker_hi[j], top), py(st.whisker_lo[j], top)
            yb_hi, yb_lo = py(st.box_hi[j], top), py(st.box_lo[j], top)
            ym = py(st.median[j], top)
            out.append(f'<g class="box" data-n="{n}" data-whisker-top="{yw_hi:.3f}">')
            out.append(f'<line class="whisker" x1="{x:.3f}" y1="{yw_hi:.3f}" x2="{x:.3f}" y2="{yw_lo:.3f}" stroke="#333" stroke-dasharray="2,2"/>')
            out.append(
                f'<rect class="iqr" x="{x - half:.3f}" y="{yb_hi:.3f}" width="{2 * half:.3f}" '
                f'height="{max(yb_lo - yb_hi, 0.0):.3f}" fill="none" stroke="blue"/>'
            )
            out.append(f'<line class="median" x1="{x - half:.3f}" y1="{ym:.3f}" x2="{x + half:.3f}" y2="{ym:.3f}" stroke="red"/>')
            for v in st.outliers[j]:
                yo = py(v, top)
                out.append(
                    f'<path class="outlier" d="M{x - 2:.3f},{yo - 2:.3f}L{x + 2:.3f},{yo + 2:.3f}'
                    f'M{x - 2:.3f},{yo + 2:.3f}L{x + 2:.3f},{yo - 2:.3f}" stroke="red"/>'
                )
            out.append("</g>")
        pts = " ".join(f"{px(int(n)):.3f},{py(v, top):.3f}" for n, v in zip(st.sizes, st.median))
        out.append(f'<polyline class="median-curve" points="{pts}" fill="none" stroke="black" stroke-width="1.5"/>')
        if reference is not None:
            pts = " ".join(f"{px(int(n)):.3f},{py(v, top):.3f}" for n, v in zip(*reference))
            out.append(f'<polyline class="reference" points="{pts}" fill="none" stroke="grey" stroke-width="1.5"/>')
        if bound is not None:
            bn, bv = bound
            pts = " ".join(f"{px(int(n)):.3f},{py(v, top):.3f}" for n, v in zip(bn, bv))
            ns = " ".join(str(int(n)) for n in bn)
            out.append(f'<polyline class="bound" data-n="{ns}" points="{pts}" fill="none" stroke="red" stroke-width="1.5"/>')
        out.append("</g>")
    out.append("</svg>")
    with _open_for_write(path) as fh:
        fh.write("\n".join(out) + "\n")
    return Path(path)


# ---------------------------------------------------------------------------
# reporting helpers
# ---------------------------------------------------------------------------


def normalized_bound(cfg):
    """Greedy error bound divided by ||f||^2 at n = 1..n_max."""
    f = target_function(make_grid(1, cfg.grid))
    e0 = norm_sq(f)
    return np.arange(1, cfg.n_max + 1), bound_curve(e0, cfg.greedy.M_prime, cfg.n_max) / e0


def median_at(stats, sizes=SUMMARY_SIZES):
    out = {}
    for n in sizes:
        idx = np.flatnonzero(stats.sizes == n)
        out[str(n)] = float(stats.median[idx[0]]) if idx.size else None
    return out


def summary_dict(cfg, stats_by_method, extras_by_method=None):
    bn, bv = normalized_bound(cfg)
    doc = {
        "trials": cfg.trials,
        "n_max": cfg.n_max,
        "seed": cfg.seed,
        "grid": cfg.grid,
        "methods": {m: {"median_bar_e": median_at(st)} for m, st in stats_by_method.items()},
        "bound_bar_e": {str(n): float(bv[n - 1]) for n in SUMMARY_SIZES if n <= len(bv)},
    }
    for m, ex in (extras_by_method or {}).items():
        if m in doc["methods"] and ex:
            doc["methods"][m]["extras"] = {k: v for k, v in ex.items() if k != "errors"}
    return doc


def write_json(doc, path):
    with _open_for_write(path) as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return Path(path)
