"""Config-driven Monte-Carlo experiments, sweeps, CSV and SVG output.

A config is a JSON object::

    {
      "name": "fig2",
      "problem": {"M": 20, "N": 30, "noise_variance": 0.1, "seed": 0},
      "optimizer": {"mu": 0.008, "iterations": 5000, "mode": "stochastic",
                    "diagnostics": false, "w0": null},
      "monte_carlo": {"runs": 20, "seed_base": 0},
      "outputs": {"dir": "out", "db": true, "threshold": 1e-8},
      "series": [
        {"label": "eps=0.3",
         "topology": {"kind": "path", "K": 16},
         "sequence": {"type": "perturbed", "target_eps": 0.3, "tol": 0.01,
                      "perturb_seed": 1}}
      ]
    }

Instead of ``series`` a config may give top-level ``topology`` and
``sequence`` for a single series.  Sequence types are ``exact``,
``perturbed``, ``truncated`` and ``metropolis``; see
:data:`SEQUENCE_KEYS` for the keys each accepts.  Unknown keys anywhere
are rejected.

All series share one data set per ``K`` (drawn from ``problem.seed``).
Run ``j`` uses sample-index seed ``seed_base + j``, so removing a run
leaves the others unchanged.
"""

from __future__ import annotations

import copy
import io
import json
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from . import bounds as bnd
from .ftc import (FTCError, MatrixSequence, dumps_sequence, exact_sequence, metropolis_sequence,
                  perturb_to_target, reorder_for_prefix, truncate)
from .graph import GraphError, build_graph
from .optimizer import MODES, TRAJECTORY_HEADER, run
from .problem import generate

__all__ = [
    "ConfigError",
    "SEQUENCE_KEYS",
    "PRESETS",
    "default_config",
    "validate_config",
    "load_config",
    "dumps_config",
    "preset",
    "build_sequence",
    "SeriesResult",
    "RunResult",
    "run_experiment",
    "sweep",
    "write_outputs",
    "emit_plot",
    "steady_state_window",
]


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configs."""


SECTION_DEFAULTS = {
    "problem": {"M": 20, "N": 30, "noise_variance": 0.1, "seed": 0},
    "optimizer": {"mu": 0.005, "iterations": 5000, "mode": "stochastic",
                  "diagnostics": False, "w0": None},
    "monte_carlo": {"runs": 20, "seed_base": 0},
    "outputs": {"dir": "out", "db": True, "threshold": 1e-8},
}

SEQUENCE_KEYS = {
    "exact": {"construction": "auto", "ordering": "descending", "design_seed": 0},
    "perturbed": {"construction": "auto", "ordering": "descending", "design_seed": 0,
                  "target_eps": None, "tol": 0.01, "perturb_seed": 1},
    "truncated": {"construction": "auto", "ordering": "descending", "design_seed": 0,
                  "tau_prime": None, "reorder": True},
    "metropolis": {},
}

TOP_KEYS = {"name", "problem", "optimizer", "monte_carlo", "outputs", "series", "topology", "sequence"}
SERIES_KEYS = {"label", "topology", "sequence"}
TOPOLOGY_KEYS = {"kind", "K"}

STEADY_FRACTION = 0.2


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}; allowed {sorted(allowed)}")


def _num(v, where, kind=float, lo=None, lo_open=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    v = kind(v)
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"{where}: must be {'>' if lo_open else '>='} {lo}, got {v}")
    return v


def _validate_sequence(seqdef, where):
    if seqdef is None:
        seqdef = {"type": "exact"}
    if not isinstance(seqdef, dict):
        raise ConfigError(f"{where}: expected an object")
    typ = seqdef.get("type", "exact")
    if typ not in SEQUENCE_KEYS:
        raise ConfigError(f"{where}.type: unknown sequence type {typ!r}; expected one of {sorted(SEQUENCE_KEYS)}")
    allowed = SEQUENCE_KEYS[typ]
    _reject_unknown(seqdef, set(allowed) | {"type"}, where)
    out = {"type": typ}
    for k, d in allowed.items():
        out[k] = seqdef.get(k, d)
    if typ == "perturbed":
        if out["target_eps"] is None:
            raise ConfigError(f"{where}.target_eps is required for perturbed sequences")
        out["target_eps"] = _num(out["target_eps"], f"{where}.target_eps", lo=0.0)
        if out["target_eps"] >= 1:
            raise ConfigError(f"{where}.target_eps must be < 1")
        out["tol"] = _num(out["tol"], f"{where}.tol", lo=0.0, lo_open=True)
        out["perturb_seed"] = _num(out["perturb_seed"], f"{where}.perturb_seed", int, lo=0)
    if typ == "truncated":
        if out["tau_prime"] is None:
            raise ConfigError(f"{where}.tau_prime is required for truncated sequences")
        out["tau_prime"] = _num(out["tau_prime"], f"{where}.tau_prime", int, lo=1)
        if not isinstance(out["reorder"], bool):
            raise ConfigError(f"{where}.reorder must be true or false")
    if "design_seed" in out:
        out["design_seed"] = _num(out["design_seed"], f"{where}.design_seed", int, lo=0)
    return out


def _validate_series(s, i):
    where = f"series[{i}]"
    _reject_unknown(s, SERIES_KEYS, where)
    topo = s.get("topology")
    if topo is None:
        raise ConfigError(f"{where}.topology is required")
    _reject_unknown(topo, TOPOLOGY_KEYS, f"{where}.topology")
    if "kind" not in topo or "K" not in topo:
        raise ConfigError(f"{where}.topology needs 'kind' and 'K'")
    K = _num(topo["K"], f"{where}.topology.K", int, lo=1)
    try:
        build_graph(topo["kind"], K)
    except GraphError as exc:
        raise ConfigError(f"{where}.topology: {exc}") from None
    seq = _validate_sequence(s.get("sequence"), f"{where}.sequence")
    label = s.get("label") or f"{topo['kind']}{K}-{seq['type']}"
    if not isinstance(label, str):
        raise ConfigError(f"{where}.label must be a string")
    return {"label": label, "topology": {"kind": topo["kind"], "K": K}, "sequence": seq}


def default_config() -> dict:
    """Config skeleton holding every default (no series)."""
    cfg = {"name": "experiment"}
    cfg.update(copy.deepcopy(SECTION_DEFAULTS))
    cfg["series"] = []
    return cfg


def validate_config(raw) -> dict:
    """Validate ``raw`` and return a fully defaulted copy.

    Raises
    ------
    ConfigError
        On unknown keys, wrong types, unresolvable topologies or an empty
        series list.
    """
    _reject_unknown(raw, TOP_KEYS, "config")
    cfg = default_config()
    if "name" in raw:
        if not isinstance(raw["name"], str) or not raw["name"]:
            raise ConfigError("config.name must be a nonempty string")
        cfg["name"] = raw["name"]
    for sec, defaults in SECTION_DEFAULTS.items():
        given = raw.get(sec, {})
        _reject_unknown(given, defaults, sec)
        cfg[sec].update(given)
    p, o, mc, out = cfg["problem"], cfg["optimizer"], cfg["monte_carlo"], cfg["outputs"]
    for k in ("M", "N"):
        p[k] = _num(p[k], f"problem.{k}", int, lo=1)
    p["noise_variance"] = _num(p["noise_variance"], "problem.noise_variance", lo=0.0)
    p["seed"] = _num(p["seed"], "problem.seed", int, lo=0)
    o["mu"] = _num(o["mu"], "optimizer.mu", lo=0.0, lo_open=True)
    o["iterations"] = _num(o["iterations"], "optimizer.iterations", int, lo=1)
    if o["mode"] not in MODES:
        raise ConfigError(f"optimizer.mode must be one of {MODES}")
    if not isinstance(o["diagnostics"], bool):
        raise ConfigError("optimizer.diagnostics must be true or false")
    if o["w0"] is not None:
        w0 = o["w0"]
        if not (isinstance(w0, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in w0)):
            raise ConfigError("optimizer.w0 must be null or a list of numbers")
        if len(w0) != p["M"]:
            raise ConfigError(f"optimizer.w0 must have length M={p['M']}")
        o["w0"] = [float(v) for v in w0]
    mc["runs"] = _num(mc["runs"], "monte_carlo.runs", int, lo=1)
    mc["seed_base"] = _num(mc["seed_base"], "monte_carlo.seed_base", int, lo=0)
    if not isinstance(out["dir"], str):
        raise ConfigError("outputs.dir must be a string")
    if not isinstance(out["db"], bool):
        raise ConfigError("outputs.db must be true or false")
    out["threshold"] = _num(out["threshold"], "outputs.threshold", lo=0.0, lo_open=True)
    series = raw.get("series")
    if series is not None and ("topology" in raw or "sequence" in raw):
        raise ConfigError("give either 'series' or top-level 'topology'/'sequence', not both")
    if series is None:
        if "topology" not in raw:
            raise ConfigError("config needs 'series' or a top-level 'topology'")
        series = [{"topology": raw["topology"], "sequence": raw.get("sequence")}]
    if not isinstance(series, list) or not series:
        raise ConfigError("series must be a nonempty list")
    cfg["series"] = [_validate_series(s, i) for i, s in enumerate(series)]
    labels = [s["label"] for s in cfg["series"]]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"series labels must be unique, got {labels}")
    return cfg


def load_config(path) -> dict:
    """Read and validate a JSON config file.

    Parse errors report the line and column.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return validate_config(raw)


def dumps_config(cfg: dict) -> str:
    """Canonical JSON text of a validated config."""
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


# ----------------------------------------------------------------------------
# presets
# ----------------------------------------------------------------------------

def _series(label, kind, K, **seq):
    seq.setdefault("type", "exact")
    return {"label": label, "topology": {"kind": kind, "K": K}, "sequence": seq}


PRESETS = {
    "fig2": {
        "name": "fig2",
        "problem": {"M": 20, "N": 30, "noise_variance": 0.1, "seed": 0},
        "optimizer": {"mu": 8e-3, "iterations": 5000, "mode": "stochastic"},
        "monte_carlo": {"runs": 20, "seed_base": 0},
        "series": [
            _series("eps=0", "path", 16),
            _series("eps=0.3", "path", 16, type="perturbed", target_eps=0.3, perturb_seed=1),
            _series("eps=0.6", "path", 16, type="perturbed", target_eps=0.6, perturb_seed=1),
        ],
    },
    "fig3": {
        "name": "fig3",
        "problem": {"M": 20, "N": 30, "noise_variance": 0.1, "seed": 0},
        "optimizer": {"mu": 5e-3, "iterations": 5000, "mode": "stochastic"},
        "monte_carlo": {"runs": 20, "seed_base": 0},
        "series": [
            _series("complete tau=1", "complete", 16),
            _series("hypercube tau=4", "hypercube", 16),
            _series("path tau=15", "path", 16),
        ],
    },
    "fig4a": {
        "name": "fig4a",
        "problem": {"M": 20, "N": 30, "noise_variance": 0.1, "seed": 0},
        "optimizer": {"mu": 0.02, "iterations": 2000, "mode": "deterministic"},
        "monte_carlo": {"runs": 1, "seed_base": 0},
        "series": [
            _series("hypercube tau=3", "hypercube", 8),
            _series("metropolis", "hypercube", 8, type="metropolis"),
        ],
    },
    "fig4b": {
        "name": "fig4b",
        "problem": {"M": 20, "N": 30, "noise_variance": 0.1, "seed": 0},
        "optimizer": {"mu": 0.02, "iterations": 2000, "mode": "deterministic"},
        "monte_carlo": {"runs": 1, "seed_base": 0},
        "series": [
            _series("exact tau=7", "path", 8),
            _series("truncated tau'=3", "path", 8, type="truncated", tau_prime=3, reorder=True),
            _series("metropolis", "path", 8, type="metropolis"),
        ],
    },
}


def preset(name: str, seed: int | None = None, out_dir: str | None = None) -> dict:
    """Validated preset config; ``seed`` overrides ``monte_carlo.seed_base``."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    raw = copy.deepcopy(PRESETS[name])
    if seed is not None:
        raw.setdefault("monte_carlo", {})["seed_base"] = int(seed)
    if out_dir is not None:
        raw.setdefault("outputs", {})["dir"] = out_dir
    return validate_config(raw)


# ----------------------------------------------------------------------------
# running
# ----------------------------------------------------------------------------

def build_sequence(series: dict) -> MatrixSequence:
    """Construct the matrix sequence described by a validated series entry."""
    topo, seqdef = series["topology"], series["sequence"]
    g = build_graph(topo["kind"], topo["K"])
    if seqdef["type"] == "metropolis":
        return metropolis_sequence(g)
    base = exact_sequence(g, construction=seqdef["construction"], ordering=seqdef["ordering"],
                          seed=seqdef["design_seed"])
    if seqdef["type"] == "exact":
        return base
    if seqdef["type"] == "perturbed":
        if seqdef["target_eps"] <= base.epsilon:
            return base
        return perturb_to_target(base, seqdef["target_eps"], seqdef["perturb_seed"], tol=seqdef["tol"])
    if seqdef["tau_prime"] > base.tau:
        raise FTCError(f"tau_prime={seqdef['tau_prime']} exceeds the sequence length {base.tau}")
    src = reorder_for_prefix(base, seqdef["tau_prime"]) if seqdef["reorder"] else base
    return truncate(src, seqdef["tau_prime"])


def steady_state_window(n_iter: int, fraction: float = STEADY_FRACTION) -> int:
    """Number of trailing iterations averaged for the steady-state estimate."""
    return max(1, int(round(fraction * n_iter)))


METRICS = ("msd", "centroid_err", "consensus_w", "consensus_z", "equiv_defect")


@dataclass
class SeriesResult:
    """Aggregated outcome of one series.

    ``mean`` holds the pointwise mean over completed runs of each metric
    in :data:`METRICS`.  ``steady`` holds each run's steady-state MSD
    (inf for diverged runs).
    """

    label: str
    K: int
    tau: int
    epsilon: float
    mixing_ok: tuple
    sequence_text: str
    mean: dict
    steady: np.ndarray
    seeds: tuple
    diverged: dict
    iters_to_threshold: np.ndarray
    bound: bnd.BoundConstants | None
    bound_error: str | None = None

    @property
    def flagged(self) -> bool:
        return bool(self.diverged)

    @property
    def completed(self) -> np.ndarray:
        return self.steady[np.isfinite(self.steady)]

    @property
    def steady_msd(self) -> float:
        return float(np.mean(self.completed)) if self.completed.size else float("inf")

    @property
    def steady_se(self) -> float:
        c = self.completed
        if c.size < 2:
            return 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            return float(np.std(c, ddof=1) / math.sqrt(c.size))

    @property
    def steady_db(self) -> float:
        m = self.steady_msd
        return 10 * math.log10(m) if 0 < m < float("inf") else float("nan")


@dataclass
class RunResult:
    """Outcome of :func:`run_experiment`."""

    config: dict
    series: list = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return any(s.flagged for s in self.series)

    def by_label(self, label: str) -> SeriesResult:
        for s in self.series:
            if s.label == label:
                return s
        raise KeyError(label)


def _problem_for(cfg, K, cache):
    if K not in cache:
        p = cfg["problem"]
        cache[K] = generate(K, p["M"], p["N"], p["noise_variance"], p["seed"])
    return cache[K]


def run_experiment(cfg: dict, problems: dict | None = None) -> RunResult:
    """Run every series of a validated config over all Monte-Carlo seeds.

    Divergent runs are recorded per run and excluded from the mean
    series; the series is then flagged and the remaining runs continue.
    """
    o, mc = cfg["optimizer"], cfg["monte_carlo"]
    problems = {} if problems is None else problems
    result = RunResult(config=copy.deepcopy(cfg))
    seeds = tuple(mc["seed_base"] + j for j in range(mc["runs"]))
    window = steady_state_window(o["iterations"])
    for s in cfg["series"]:
        K = s["topology"]["K"]
        problem = _problem_for(cfg, K, problems)
        seq = build_sequence(s)
        sums = {m: np.zeros(o["iterations"] + 1) for m in METRICS}
        steady, hits, diverged, n_ok = [], [], {}, 0
        for seed in seeds:
            tr = run(problem, seq, o["mu"], o["iterations"], rng_seed=seed, mode=o["mode"],
                     diagnostics=o["diagnostics"], w0=o["w0"], label=s["label"])
            hits.append(tr.iterations_to(cfg["outputs"]["threshold"]))
            if tr.diverged:
                diverged[seed] = tr.diverged_at
                steady.append(float("inf"))
                continue
            n_ok += 1
            for m in METRICS:
                sums[m] += getattr(tr, m)
            steady.append(float(np.mean(tr.msd[-window:])))
        mean = {m: (sums[m] / n_ok if n_ok else np.full(o["iterations"] + 1, np.nan)) for m in METRICS}
        bound, bound_error = None, None
        try:
            consts = problem.optima_and_constants()[2]
            bound = bnd.evaluate(bnd.inputs_from_problem(consts, o["mu"], seq.tau, seq.epsilon, K))
        except bnd.BoundError as exc:
            bound_error = str(exc)
        result.series.append(SeriesResult(
            label=s["label"], K=K, tau=seq.tau, epsilon=seq.epsilon,
            mixing_ok=seq.mixing_ok, sequence_text=dumps_sequence(seq), mean=mean,
            steady=np.array(steady), seeds=seeds, diverged=diverged,
            iters_to_threshold=np.array(hits), bound=bound, bound_error=bound_error))
    return result


SWEEP_AXES = ("eps", "tau", "mu")


def _apply_axis(cfg, axis, value):
    raw = copy.deepcopy(cfg)
    if axis == "mu":
        raw["optimizer"]["mu"] = value
    for s in raw["series"]:
        seq = s["sequence"]
        if axis == "eps":
            if seq["type"] not in ("exact", "perturbed"):
                raise ConfigError(f"eps sweep applies to exact or perturbed sequences, not {seq['type']}")
            base = {k: seq[k] for k in ("construction", "ordering", "design_seed")}
            if value == 0:
                s["sequence"] = {"type": "exact", **base}
            else:
                s["sequence"] = {"type": "perturbed", **base, "target_eps": value,
                                 "tol": seq.get("tol", 0.01), "perturb_seed": seq.get("perturb_seed", 1)}
        elif axis == "tau":
            if seq["type"] == "metropolis":
                raise ConfigError("tau sweep does not apply to metropolis sequences")
            base = {k: seq[k] for k in ("construction", "ordering", "design_seed")}
            s["sequence"] = {"type": "truncated", **base, "tau_prime": int(value),
                             "reorder": seq.get("reorder", True)}
    raw["name"] = f"{cfg['name']}-{axis}={value:g}"
    return validate_config(raw)


def sweep(cfg: dict, axis: str, values) -> tuple:
    """Run ``cfg`` once per value of ``axis`` with shared seeds.

    ``eps`` sets a perturbation target on every series (0 means exact),
    ``tau`` truncates every series to a prefix of the given length and
    ``mu`` sets the step size.  A value that fails is recorded and the
    sweep continues.

    Returns
    -------
    results : list of (value, RunResult or None, error str or None)
    summary_csv : str
        Columns ``axis,value,label,tau,epsilon,steady_msd,steady_se,steady_db,diverged_runs,error``.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    problems, results = {}, []
    for v in values:
        try:
            res = run_experiment(_apply_axis(cfg, axis, float(v)), problems)
            results.append((float(v), res, None))
        except (ConfigError, FTCError, GraphError, ValueError) as exc:
            results.append((float(v), None, f"{type(exc).__name__}: {exc}"))
    buf = io.StringIO()
    buf.write("axis,value,label,tau,epsilon,steady_msd,steady_se,steady_db,diverged_runs,error\n")
    for v, res, err in results:
        if res is None:
            buf.write(f"{axis},{v:.17g},,,,,,,,{_csv_field(err)}\n")
            continue
        for s in res.series:
            buf.write(f"{axis},{v:.17g},{_csv_field(s.label)},{s.tau},{s.epsilon:.17g},{s.steady_msd:.17g},"
                      f"{s.steady_se:.17g},{s.steady_db:.17g},{len(s.diverged)},\n")
    return results, buf.getvalue()


# ----------------------------------------------------------------------------
# output
# ----------------------------------------------------------------------------

def _csv_field(s) -> str:
    s = str(s)
    return '"' + s.replace('"', '""') + '"' if any(c in s for c in ',"\n') else s


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_") or "series"


def _db(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        return 10 * np.log10(x)


def series_csv(s: SeriesResult) -> str:
    """Mean trajectory CSV: the trajectory columns plus ``msd_db`` and ``msd_sum``.

    ``msd_sum`` is the unnormalized ``sum_k ||w_k - w^o||^2``.
    """
    buf = io.StringIO()
    buf.write(TRAJECTORY_HEADER + ",msd_db,msd_sum\n")
    cols = [s.mean[m] for m in METRICS]
    db = _db(s.mean["msd"])
    for i in range(len(cols[0])):
        buf.write(f"{i}," + ",".join(f"{c[i]:.17g}" for c in cols)
                  + f",{db[i]:.17g},{s.K * s.mean['msd'][i]:.17g}\n")
    return buf.getvalue()


SUMMARY_HEADER = ("label,K,tau,epsilon,mixing_ok,runs,diverged_runs,steady_msd,steady_se,"
                  "steady_db,steady_msd_sum,iters_to_threshold,bound,bound_db,bound_certified,bound_warnings")


def summary_csv(result: RunResult) -> str:
    """One row per series with the sequence certificate and steady-state summary."""
    buf = io.StringIO()
    buf.write(SUMMARY_HEADER + "\n")
    for s in result.series:
        hit = float(np.median(s.iters_to_threshold)) if s.iters_to_threshold.size else float("inf")
        if s.bound is not None:
            b = s.bound
            bound = f"{b.steady_state:.17g},{10 * math.log10(b.steady_state):.17g},{str(b.certified).lower()}," \
                    f"{_csv_field(' '.join(b.warnings) or 'none')}"
        else:
            bound = f"nan,nan,false,{_csv_field(s.bound_error)}"
        buf.write(f"{_csv_field(s.label)},{s.K},{s.tau},{s.epsilon:.17g},{str(all(s.mixing_ok)).lower()},"
                  f"{len(s.steady)},{len(s.diverged)},{s.steady_msd:.17g},{s.steady_se:.17g},{s.steady_db:.17g},"
                  f"{s.K * s.steady_msd:.17g},{hit:.17g},{bound}\n")
    return buf.getvalue()


def bounds_text(result: RunResult) -> str:
    """Bound reports of all series, each block preceded by ``series=<label>``."""
    parts = []
    for s in result.series:
        head = f"series={s.label}\n"
        if s.bound is None:
            parts.append(head + f"error={s.bound_error}\n")
        else:
            parts.append(head + bnd.format_report(s.bound))
    return "\n".join(parts)


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def emit_plot(result: RunResult, path, db: bool = True, max_points: int = 600) -> str:
    """Write an SVG line plot of mean MSD versus iteration.

    One polyline per series; the y-axis is ``10 log10(MSD)`` when ``db``.
    A constant series gives a flat line inside a padded range.

    Raises
    ------
    ValueError
        If any series has fewer than two finite points.
    OSError
        If ``path`` cannot be written.
    """
    W, H, L, R, T, B = 720, 440, 70, 180, 30, 50
    curves = []
    for s in result.series:
        y = s.mean["msd"]
        y = _db(y) if db else y
        x = np.arange(len(y))
        ok = np.isfinite(y)
        if ok.sum() < 2:
            raise ValueError(f"series {s.label!r} has fewer than two finite points to plot")
        step = max(1, len(y) // max_points)
        keep = np.zeros(len(y), bool)
        keep[::step] = True
        keep[-1] = True
        keep &= ok
        curves.append((s.label, x[keep], y[keep]))
    xmax = max(float(c[1][-1]) for c in curves) or 1.0
    ymin = min(float(c[2].min()) for c in curves)
    ymax = max(float(c[2].max()) for c in curves)
    pad = 0.05 * (ymax - ymin) if ymax > ymin else max(1.0, abs(ymax) * 0.05)
    ymin, ymax = ymin - pad, ymax + pad

    def px(x):
        return L + (W - L - R) * x / xmax

    def py(y):
        return T + (H - T - B) * (ymax - y) / (ymax - ymin)

    out = io.StringIO()
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">\n')
    out.write(f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>\n')
    out.write(f'<rect x="{L}" y="{T}" width="{W - L - R}" height="{H - T - B}" fill="none" stroke="black"/>\n')
    for j in range(6):
        yv = ymin + (ymax - ymin) * j / 5
        xv = xmax * j / 5
        out.write(f'<line x1="{L}" y1="{py(yv):.2f}" x2="{W - R}" y2="{py(yv):.2f}" stroke="#ddd"/>\n')
        out.write(f'<text x="{L - 6}" y="{py(yv) + 4:.2f}" font-size="11" text-anchor="end">{yv:.1f}</text>\n')
        out.write(f'<text x="{px(xv):.2f}" y="{H - B + 16}" font-size="11" text-anchor="middle">{xv:.0f}</text>\n')
    out.write(f'<text x="{(L + W - R) / 2}" y="{H - 10}" font-size="12" text-anchor="middle">iteration</text>\n')
    ylab = "MSD (dB)" if db else "MSD"
    out.write(f'<text x="16" y="{(T + H - B) / 2}" font-size="12" text-anchor="middle" '
              f'transform="rotate(-90 16 {(T + H - B) / 2})">{ylab}</text>\n')
    for j, (label, x, y) in enumerate(curves):
        color = _COLORS[j % len(_COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        out.write(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>\n')
        ly = T + 16 + 18 * j
        out.write(f'<line x1="{W - R + 10}" y1="{ly}" x2="{W - R + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>\n')
        esc = label.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        out.write(f'<text x="{W - R + 36}" y="{ly + 4}" font-size="11">{esc}</text>\n')
    out.write("</svg>\n")
    text = out.getvalue()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return text


def write_outputs(result: RunResult, out_dir: str | None = None) -> list:
    """Write series CSVs, the summary, sequences, bound reports and the SVG.

    Returns the list of written paths.
    """
    cfg = result.config
    out_dir = cfg["outputs"]["dir"] if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    name = cfg["name"]
    written = []

    def put(fname, text):
        p = os.path.join(out_dir, fname)
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(text)
        written.append(p)

    put(f"{name}_config.json", dumps_config(cfg))
    for s in result.series:
        slug = _slug(s.label)
        put(f"{name}_{slug}.csv", series_csv(s))
        put(f"{name}_{slug}_sequence.txt", s.sequence_text)
    put(f"{name}_summary.csv", summary_csv(result))
    put(f"{name}_bounds.txt", bounds_text(result))
    svg = os.path.join(out_dir, f"{name}.svg")
    emit_plot(result, svg, db=cfg["outputs"]["db"])
    written.append(svg)
    return written
