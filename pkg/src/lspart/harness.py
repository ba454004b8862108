"""Run drivers: configuration, CSV ingestion, single fits, Monte Carlo loops.

JSON reports nest all wall-clock information under the single volatile
"timestamp" key, so dropping that key leaves a byte-comparable document.
Simulation replications draw from streams keyed (master_seed, rep) and are
reduced in replication order, which makes parallel and serial runs agree
bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone

import numpy as np

from . import dgp
from .basis import BasisFamily, BasisSpec
from .errors import (
    ConfigError,
    DegenerateData,
    InvalidGrid,
    InvalidKappa,
    LspartError,
    NumericalError,
    ParseError,
)
from .fit import EstimatorKind, fit_estimator
from .inference import (
    HCKind,
    band_bootstrap,
    band_plugin,
    make_grid,
    pointwise_ci,
    sigma_hat,
)
from .partition import KnotRule, TensorPartition
from .tuning import dpi_select, rot_select

SCHEMA = "lspart/1"

# swapped in by tests to force degenerate intervals through the aggregator
_CI_HOOK = None

_EVAL_FRACTIONS = (0.25, 0.5, 0.75)


def _coerce(enum_cls, value):
    if isinstance(value, enum_cls):
        return value
    try:
        return enum_cls(str(value).lower())
    except ValueError as exc:
        names = ", ".join(e.value for e in enum_cls)
        raise ConfigError(f"expected one of {names}, got {value!r}") from exc


@dataclass
class RunConfig:
    """Everything one run needs; ``validated()`` normalizes and checks."""

    mode: str = "fit"
    data_path: str | None = None
    model_id: int | None = None
    family: BasisFamily = BasisFamily.BSPLINE
    m: int = 2
    m_tilde: int | None = None
    knot_rule: KnotRule = KnotRule.EVEN
    kappa: int | str = "rot"
    kappa_max: int | None = None
    q: tuple | None = None
    j_set: tuple = (0, 1, 2, 3)
    alpha: float = 0.05
    band_method: str | None = None
    B: int = 1000
    grid_size: int | None = None
    hc_kind: HCKind = HCKind.HC0
    replications: int = 1
    n: int | None = None
    seed: int = 0
    eval_points: tuple | None = None
    output_path: str | None = None
    jobs: int = 1

    def validated(self):
        cfg = replace(self)
        if cfg.mode not in ("fit", "simulate"):
            raise ConfigError(f"mode must be fit or simulate, got {cfg.mode!r}")
        cfg.family = _coerce(BasisFamily, cfg.family)
        cfg.knot_rule = _coerce(KnotRule, cfg.knot_rule)
        cfg.hc_kind = _coerce(HCKind, cfg.hc_kind)

        cfg.m = int(cfg.m)
        if cfg.m < 1:
            raise ConfigError(f"m must be >= 1, got {cfg.m}")
        if cfg.m_tilde is not None:
            cfg.m_tilde = int(cfg.m_tilde)

        cfg.j_set = tuple(sorted({int(j) for j in cfg.j_set}))
        if not cfg.j_set or any(j not in (0, 1, 2, 3) for j in cfg.j_set):
            raise ConfigError(f"j_set must be a nonempty subset of 0..3, got {cfg.j_set}")
        if max(cfg.j_set) >= 1:
            mt = cfg.m + 1 if cfg.m_tilde is None else cfg.m_tilde
            if mt <= cfg.m:
                raise ConfigError(f"m_tilde {mt} must exceed m {cfg.m}")

        if isinstance(cfg.kappa, str):
            if cfg.kappa not in ("rot", "dpi"):
                try:
                    cfg.kappa = int(cfg.kappa)
                except ValueError as exc:
                    raise InvalidKappa(
                        f"kappa must be a positive integer, 'rot', or 'dpi'; got {cfg.kappa!r}"
                    ) from exc
        if isinstance(cfg.kappa, (int, np.integer)):
            cfg.kappa = int(cfg.kappa)
            if cfg.kappa < 1:
                raise InvalidKappa(f"kappa must be >= 1, got {cfg.kappa}")
        if cfg.kappa_max is not None:
            cfg.kappa_max = int(cfg.kappa_max)
            if cfg.kappa_max < 1:
                raise InvalidKappa(f"kappa cap must be >= 1, got {cfg.kappa_max}")

        if not 0.0 < float(cfg.alpha) < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {cfg.alpha}")
        cfg.alpha = float(cfg.alpha)

        if cfg.band_method is not None:
            cfg.band_method = str(cfg.band_method).lower()
            if cfg.band_method not in ("plugin", "bootstrap"):
                raise ConfigError(
                    f"band method must be plugin or bootstrap, got {cfg.band_method!r}"
                )
            cfg.B = int(cfg.B)
        if cfg.grid_size is not None:
            cfg.grid_size = int(cfg.grid_size)
            if cfg.grid_size < 2:
                raise InvalidGrid(f"grid needs >= 2 points per axis, got {cfg.grid_size}")

        if cfg.q is not None:
            cfg.q = tuple(int(v) for v in np.atleast_1d(cfg.q))
            if any(v < 0 for v in cfg.q):
                raise ConfigError(f"derivative orders must be >= 0, got {cfg.q}")
        if cfg.eval_points is not None:
            pts = np.atleast_2d(np.asarray(cfg.eval_points, dtype=float))
            cfg.eval_points = tuple(tuple(float(v) for v in row) for row in pts)

        cfg.seed = int(cfg.seed)
        cfg.jobs = int(cfg.jobs)
        if cfg.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {cfg.jobs}")

        if cfg.mode == "fit":
            if not cfg.data_path:
                raise ConfigError("fit mode needs a data file")
        else:
            dgp.dgp_dim(cfg.model_id)
            if cfg.n is None or int(cfg.n) < 1:
                raise ConfigError(f"simulate mode needs n >= 1, got {cfg.n}")
            cfg.n = int(cfg.n)
            cfg.replications = int(cfg.replications)
            if cfg.replications < 1:
                raise ConfigError(f"need at least 1 replication, got {cfg.replications}")
        return cfg


def read_data(path):
    """Parse a CSV with header x1,...,xd,y into (X, y)."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("line 1: empty file")
        cols = [c.strip() for c in header]
        d = len(cols) - 1
        want = [f"x{k + 1}" for k in range(d)] + ["y"]
        if d < 1 or cols != want:
            raise ParseError(
                f"line 1: header must be x1,...,xd,y; got {','.join(cols)!r}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ParseError(
                    f"line {lineno}: expected {d + 1} fields, got {len(row)}"
                )
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            if not all(np.isfinite(vals)):
                raise ParseError(f"line {lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise DegenerateData("no data rows")
    arr = np.asarray(rows, dtype=float)
    return arr[:, :d], arr[:, d]


def _bounds_from_data(X):
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    for ell in range(X.shape[1]):
        if not hi[ell] > lo[ell]:
            raise DegenerateData(f"covariate {ell + 1} is constant")
    return np.stack([lo, hi], axis=1)


def _effective_cap(cfg, d):
    if cfg.kappa_max is not None:
        return cfg.kappa_max
    return 5 if d == 3 else None


def _select_kappa(cfg, X, y, d, bounds):
    q = cfg.q if cfg.q is not None else (0,) * d
    info = {"rule": None, "requested": cfg.kappa, "kappa": None,
            "kappa_rot": None, "kappa_dpi": None, "rot_fallback": False,
            "cap": None, "capped": False}
    if isinstance(cfg.kappa, int):
        # an explicit size is taken literally; the cap only binds selectors
        info.update(rule="fixed", kappa=cfg.kappa)
        return cfg.kappa, info
    if cfg.kappa == "rot":
        rep = rot_select(X, y, cfg.family, cfg.m, q, bounds=bounds)
        info.update(rule="rot", kappa_rot=rep.kappa_rot)
        selected = rep.kappa_rot
    else:
        rep = dpi_select(
            X, y, cfg.family, cfg.m, q, knots=cfg.knot_rule, bounds=bounds
        )
        info.update(
            rule="dpi",
            kappa_rot=rep.kappa_rot,
            kappa_dpi=rep.kappa_dpi,
            rot_fallback=rep.rot_fallback,
        )
        selected = rep.selected()
    cap = _effective_cap(cfg, d)
    if cap is not None:
        info["cap"] = cap
        if selected > cap:
            info["capped"] = True
            selected = cap
    info["kappa"] = int(selected)
    return int(selected), info


def _default_eval_points(bounds):
    lo, hi = bounds[:, 0], bounds[:, 1]
    return np.stack([lo + f * (hi - lo) for f in _EVAL_FRACTIONS], axis=0)


def _build_fit(cfg, X, y, bounds, kappa):
    part = TensorPartition.build(cfg.knot_rule, bounds, kappa, data=X)
    if max(cfg.j_set) >= 1:
        kind = EstimatorKind.default(cfg.family, cfg.m, part, cfg.m_tilde)
    else:
        kind = EstimatorKind(BasisSpec(cfg.family, cfg.m, part))
    for j in cfg.j_set:
        kind.require_j(j)
    return fit_estimator(kind, X, y)


def _band_fn(cfg):
    return band_plugin if cfg.band_method == "plugin" else band_bootstrap


def _pyify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _pyify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_pyify(v) for v in obj]
    return obj


def _write_json(path, report):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def run_fit(config):
    """Fit one dataset and return (and optionally write) the JSON report."""
    t0 = time.perf_counter()
    cfg = config.validated()
    if cfg.mode != "fit":
        raise ConfigError("run_fit needs a fit-mode config")
    X, y = read_data(cfg.data_path)
    n, d = X.shape
    q = cfg.q if cfg.q is not None else (0,) * d
    if len(q) != d:
        raise ConfigError(f"q has {len(q)} entries for {d} covariates")
    bounds = _bounds_from_data(X)

    kappa, selection = _select_kappa(cfg, X, y, d, bounds)
    fit = _build_fit(cfg, X, y, bounds, kappa)
    part = fit.kind.main_spec.partition

    if cfg.eval_points is not None:
        pts = np.asarray(cfg.eval_points, dtype=float)
        if pts.shape[1] != d:
            raise ConfigError(f"eval points have {pts.shape[1]} coordinates, need {d}")
    else:
        pts = _default_eval_points(bounds)

    estimates = {}
    bands = {}
    grid = make_grid(bounds, cfg.grid_size) if cfg.band_method else None
    for j in cfg.j_set:
        var = sigma_hat(fit, j, cfg.hc_kind)
        pw = pointwise_ci(fit, var, pts, q, cfg.alpha)
        estimates[f"j{j}"] = {
            "estimate": pw.estimates,
            "se": pw.se,
            "ci_lo": pw.ci_lo,
            "ci_hi": pw.ci_hi,
        }
        if cfg.band_method:
            band = _band_fn(cfg)(
                fit, var, grid, q, cfg.alpha, cfg.B, seed=(cfg.seed, j)
            )
            bands[f"j{j}"] = {
                "method": band.method,
                "draws": band.draws,
                "quantile": band.quantile,
                "estimate": band.estimates,
                "lo": band.lo,
                "hi": band.hi,
            }

    report = _pyify({
        "schema": SCHEMA,
        "mode": "fit",
        "n": n,
        "d": d,
        "family": cfg.family.value,
        "m": cfg.m,
        "m_tilde": (cfg.m + 1 if cfg.m_tilde is None else cfg.m_tilde)
        if max(cfg.j_set) >= 1
        else None,
        "knot_rule": cfg.knot_rule.value,
        "q": list(q),
        "j_set": list(cfg.j_set),
        "alpha": cfg.alpha,
        "hc": cfg.hc_kind.value,
        "seed": cfg.seed,
        "selection": selection,
        "knots": [k for k in part.knots],
        "mesh": part.mesh_stats(),
        "eval_points": pts,
        "estimates": estimates,
        "band": ({"grid": grid, **bands} if cfg.band_method else None),
        "timestamp": {
            "written_at": datetime.now(timezone.utc).isoformat(),
            "runtime_seconds": time.perf_counter() - t0,
        },
    })
    if cfg.output_path:
        _write_json(cfg.output_path, report)
    return report


# -- simulation ---------------------------------------------------------------


def _simulate_rep(args):
    """One replication; returns (rep, error message or None, metrics or None)."""
    cfg, rep = args
    try:
        rng = np.random.default_rng([cfg.seed, rep])
        X, y = dgp.dgp_sample(cfg.model_id, cfg.n, rng)
        d = X.shape[1]
        q = cfg.q if cfg.q is not None else (0,) * d
        bounds = _bounds_from_data(X)
        kappa, _ = _select_kappa(cfg, X, y, d, bounds)
        fit = _build_fit(cfg, X, y, bounds, kappa)

        pts = (
            np.asarray(cfg.eval_points, dtype=float)
            if cfg.eval_points is not None
            else _default_eval_points(np.array([[0.0, 1.0]] * d))
        )
        truth_pts = dgp.dgp_eval(cfg.model_id, pts)
        grid = make_grid(bounds, cfg.grid_size) if cfg.band_method else None

        ci_fn = _CI_HOOK or pointwise_ci
        per_j = {}
        for j in cfg.j_set:
            var = sigma_hat(fit, j, cfg.hc_kind)
            pw = ci_fn(fit, var, pts, q, cfg.alpha)
            entry = {
                "est": np.asarray(pw.estimates, dtype=float),
                "cover": (pw.ci_lo <= truth_pts) & (truth_pts <= pw.ci_hi),
                "il": np.asarray(pw.ci_hi - pw.ci_lo, dtype=float),
            }
            if cfg.band_method:
                band = _band_fn(cfg)(
                    fit, var, grid, q, cfg.alpha, cfg.B, seed=(cfg.seed, rep, 1 + j)
                )
                cover = band.covers(dgp.dgp_eval(cfg.model_id, grid))
                entry["band_cover"] = cover
                entry["aw"] = float(np.mean(2.0 * band.half_widths))
                entry["ucr"] = bool(cover.all())
            per_j[j] = entry
        return rep, None, {"kappa": kappa, "per_j": per_j}
    except (LspartError, np.linalg.LinAlgError) as exc:
        return rep, f"{type(exc).__name__}: {exc}", None


def _aggregate(cfg, results, truth_pts):
    """Reduce per-replication metrics, in replication order, to MetricsRows."""
    ok = [res for _, err, res in results if err is None]
    failures = [(rep, err) for rep, err, _ in results if err is not None]
    R = len(results)
    if len(failures) > 0.2 * R:
        raise NumericalError(
            f"{len(failures)} of {R} replications failed; first: {failures[0][1]}"
        )
    if not ok:
        raise NumericalError("all replications failed")

    kappas = np.array([res["kappa"] for res in ok], dtype=float)
    rows = []
    for j in cfg.j_set:
        est = np.stack([res["per_j"][j]["est"] for res in ok])
        cover = np.stack([res["per_j"][j]["cover"] for res in ok])
        il = np.stack([res["per_j"][j]["il"] for res in ok])
        row = {
            "model": cfg.model_id,
            "selector": cfg.kappa if isinstance(cfg.kappa, str) else "fixed",
            "j": j,
            "family": cfg.family.value,
            "m": cfg.m,
            "m_tilde": (cfg.m + 1 if cfg.m_tilde is None else cfg.m_tilde)
            if max(cfg.j_set) >= 1
            else None,
            "n": cfg.n,
            "reps": R,
            "failures": len(failures),
            "kappa_mean": float(np.mean(kappas)),
            "kappa_median": float(np.median(kappas)),
            "kappa_sd": float(np.std(kappas)),
            "rmse": np.sqrt(np.mean((est - truth_pts) ** 2, axis=0)),
            "cr": np.mean(cover, axis=0),
            "il": np.mean(il, axis=0),
            "cp": None,
            "ace": None,
            "aw": None,
            "ucr": None,
        }
        if cfg.band_method:
            bc = np.stack([res["per_j"][j]["band_cover"] for res in ok])
            point_cov = np.mean(bc, axis=0)
            ucr = float(np.mean([res["per_j"][j]["ucr"] for res in ok]))
            # uniform coverage cannot beat the weakest grid point
            assert ucr <= float(np.min(point_cov)) + 1e-12
            row["cp"] = float(np.mean(point_cov >= 1.0 - cfg.alpha))
            row["ace"] = float(np.mean(np.abs(point_cov - (1.0 - cfg.alpha))))
            row["aw"] = float(np.mean([res["per_j"][j]["aw"] for res in ok]))
            row["ucr"] = ucr
        rows.append(row)
    return rows, failures


def metrics_csv(rows, num_eval_points):
    """Render MetricsRows to CSV text, one row per (model, selector, j)."""
    per_point = []
    for p in range(1, num_eval_points + 1):
        per_point += [f"rmse_{p}", f"cr_{p}", f"il_{p}"]
    header = (
        ["model", "selector", "j", "family", "m", "m_tilde", "n", "reps",
         "failures", "kappa_mean", "kappa_median", "kappa_sd"]
        + per_point
        + ["cp", "ace", "aw", "ucr"]
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        rec = []
        for k in ("model", "selector", "j", "family", "m", "m_tilde", "n",
                  "reps", "failures"):
            v = row[k]
            rec.append("" if v is None else v)
        for k in ("kappa_mean", "kappa_median", "kappa_sd"):
            rec.append(f"{row[k]:.17g}")
        for p in range(num_eval_points):
            for k in ("rmse", "cr", "il"):
                rec.append(f"{row[k][p]:.17g}")
        for k in ("cp", "ace", "aw", "ucr"):
            rec.append("" if row[k] is None else f"{row[k]:.17g}")
        writer.writerow(rec)
    return buf.getvalue()


def run_simulation(config):
    """Monte Carlo study; returns (rows, summary) and optionally writes both.

    With ``output_path`` set, the metrics table lands there and the JSON
    summary next to it with a .json suffix.
    """
    t0 = time.perf_counter()
    cfg = config.validated()
    if cfg.mode != "simulate":
        raise ConfigError("run_simulation needs a simulate-mode config")
    d = dgp.dgp_dim(cfg.model_id)
    q = cfg.q if cfg.q is not None else (0,) * d
    if len(q) != d:
        raise ConfigError(f"q has {len(q)} entries for {d} covariates")

    pts = (
        np.asarray(cfg.eval_points, dtype=float)
        if cfg.eval_points is not None
        else _default_eval_points(np.array([[0.0, 1.0]] * d))
    )
    if pts.shape[1] != d:
        raise ConfigError(f"eval points have {pts.shape[1]} coordinates, need {d}")
    truth_pts = dgp.dgp_eval(cfg.model_id, pts)

    args = [(cfg, rep) for rep in range(cfg.replications)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_simulate_rep, args))
    else:
        results = [_simulate_rep(a) for a in args]
    results.sort(key=lambda t: t[0])

    rows, failures = _aggregate(cfg, results, truth_pts)
    summary = _pyify({
        "schema": SCHEMA,
        "mode": "simulate",
        "model": cfg.model_id,
        "n": cfg.n,
        "replications": cfg.replications,
        "selector": cfg.kappa if isinstance(cfg.kappa, str) else "fixed",
        "family": cfg.family.value,
        "m": cfg.m,
        "j_set": list(cfg.j_set),
        "alpha": cfg.alpha,
        "hc": cfg.hc_kind.value,
        "band_method": cfg.band_method,
        "seed": cfg.seed,
        "eval_points": pts,
        "truth": truth_pts,
        "rows": rows,
        "failures": [{"rep": rep, "error": msg} for rep, msg in failures],
        "timestamp": {
            "written_at": datetime.now(timezone.utc).isoformat(),
            "runtime_seconds": time.perf_counter() - t0,
        },
    })
    if cfg.output_path:
        csv_text = metrics_csv(rows, pts.shape[0])
        with open(cfg.output_path, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        _write_json(str(cfg.output_path) + ".json", summary)
    return rows, summary


def emit_plotdata(band, truth=None, path=None):
    """Band results as plot-ready CSV text; 17 significant digits throughout."""
    grid = np.atleast_2d(band.grid)
    d = grid.shape[1]
    cols = ["x"] if d == 1 else [f"x{k + 1}" for k in range(d)]
    cols += ["estimate", "lo", "hi"]
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        cols.append("truth")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    lo, hi = band.lo, band.hi
    for g in range(grid.shape[0]):
        rec = [f"{v:.17g}" for v in grid[g]]
        rec += [f"{band.estimates[g]:.17g}", f"{lo[g]:.17g}", f"{hi[g]:.17g}"]
        if truth is not None:
            rec.append(f"{truth[g]:.17g}")
        writer.writerow(rec)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
