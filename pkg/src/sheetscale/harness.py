"""Parameter sweeps, scaling fits and reports.

A sweep is described by a JSON configuration (see :data:`CONFIG_KEYS`).
Rows are emitted in configuration order whatever the completion order of
the worker pool, one CSV line per parameter point, plus a sidecar
``<output>.meta.json`` with the configuration hash and grid resolutions.
Numbers are written with ``repr`` so that identical inputs give identical
bytes.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .cap import (
    CAP_SETTINGS,
    CapProfile,
    build_inversion,
    cap_energy,
    choose_Rl,
    lower_bound_report,
    minimize_cap,
    tau,
)
from .circle import (
    CIRCLE_SETTINGS,
    TWO_PI,
    circle_constraint,
    dominant_mode,
    optimal_curve,
    solve_circle_min,
    spectral_mass,
)
from .core import ModelParams, RadialGrid
from .econe import EConeConfig, PolarGrid, build_econe_pair, fvk_energy_polar, gauss_curvature
from .optim import ConvergenceError, NumericError, OptimSettings

logger = logging.getLogger(__name__)

EXPERIMENTS = ("circle", "econe-upper", "cap-construct", "cap-min", "cap-diagnostics")

CONFIG_KEYS = {
    "experiment": "one of " + ", ".join(EXPERIMENTS),
    "h_values": "plate thicknesses, each in (0, 1/2]",
    "delta_values": "indentation depths, each in [0, 1]",
    "Delta_values": "excess-angle parameters, each >= 0",
    "grid_n": "radial nodes of the cap grid",
    "angular_n": "angular nodes of the polar grid (even)",
    "cells_below_h": "radial cells below r = h on the polar grid",
    "fourier_N": "Fourier truncation order of the circle problem",
    "optim": "overrides of the optimizer settings",
    "output_path": "CSV file written by the sweep",
}

DEFAULTS = {
    "circle": {"Delta_values": [0.25, 0.5, 1.0]},
    "econe-upper": {"h_values": [2.0**-k for k in range(4, 11)], "Delta_values": [0.5, 1.0]},
    "cap-construct": {"h_values": [2.0**-k for k in range(3, 10)], "delta_values": [0.0, 1.0]},
    "cap-min": {"h_values": [2.0**-k for k in range(3, 10)], "delta_values": [0.0, 1.0]},
    "cap-diagnostics": {"h_values": [2.0**-k for k in range(3, 10)], "delta_values": [1.0]},
}

_CAP_ENERGY = ["energy", "membrane_u", "membrane_stretch", "bend"]
_LB_COLUMNS = [
    "tau_ratio",
    "sphere_ratio",
    "l1_origin_ratio",
    "l1_annulus_constant",
    "g_a_ratio",
    "strain_ratio",
    "osc_ratio",
    "plus_well_ratio",
    "minus_well_ratio",
]

COLUMNS = {
    "circle": ["Delta", "energy", "target", "ratio", "constraint_residual", "mass_fraction_12", "dominant_mode", "error"],
    "econe-upper": ["Delta", "h", "nr", "energy", "membrane", "bend", "energy_over_h2", "target_log_term", "kappa_half", "error"],
    "cap-construct": ["h", "delta", *_CAP_ENERGY, "law", "ratio", "R", "l", "branch", "tau", "error"],
    "cap-min": ["h", "delta", "init", *_CAP_ENERGY, "init_energy", "law", "ratio", "converged", "iterations", "tau", "error"],
    "cap-diagnostics": ["h", "delta", "init", *_CAP_ENERGY, "law", "ratio", "converged", "tau", *_LB_COLUMNS, "error"],
}

COLUMN_HELP = """\
CSV columns by experiment (a failed point keeps its parameters, leaves the
other fields empty and names the failure in `error`):
  circle:          Delta, energy, target (6 pi Delta^2), ratio, constraint_residual,
                   mass_fraction_12, dominant_mode, error
  econe-upper:     Delta, h, nr, energy, membrane, bend, energy_over_h2,
                   target_log_term (6 pi Delta^2 log(1/h)), kappa_half, error
  cap-construct:   h, delta, energy, membrane_u, membrane_stretch, bend,
                   law (h^2 + delta^1.5 h^1.5), ratio, R, l, branch, tau, error
  cap-min:         h, delta, init, energy terms, init_energy, law, ratio,
                   converged, iterations, tau, error
  cap-diagnostics: h, delta, init, energy terms, law, ratio, converged, tau,
                   lower-bound ratios (tau, sphere, l1 origin, l1 annulus,
                   g_a, strain, oscillation, plus well, minus well), error
"""


class ConfigError(ValueError):
    """The sweep configuration is invalid."""


class FitError(ValueError):
    """The scaling fit cannot be carried out."""


@dataclass(frozen=True)
class SweepConfig:
    experiment: str
    h_values: tuple = ()
    delta_values: tuple = ()
    Delta_values: tuple = ()
    grid_n: int = 2048
    angular_n: int = 512
    cells_below_h: int = 8
    fourier_N: int = 8
    optim: dict = field(default_factory=dict)
    output_path: str = "results.csv"

    def settings(self) -> OptimSettings:
        base = CIRCLE_SETTINGS if self.experiment == "circle" else CAP_SETTINGS
        return replace(base, **self.optim)

    def canonical(self) -> dict:
        d = asdict(self)
        for key in ("h_values", "delta_values", "Delta_values"):
            d[key] = list(d[key])
        return d

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def points(self) -> list:
        if self.experiment == "circle":
            return [{"Delta": D} for D in self.Delta_values]
        if self.experiment == "econe-upper":
            return [{"Delta": D, "h": h} for D, h in itertools.product(self.Delta_values, self.h_values)]
        return [{"h": h, "delta": d} for d, h in itertools.product(self.delta_values, self.h_values)]


def _float_list(raw, key):
    if not isinstance(raw, (list, tuple)) or not raw:
        raise ConfigError(f"{key} must be a non-empty list")
    try:
        return tuple(float(v) for v in raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} must hold numbers") from exc


def validate_config(raw: dict) -> SweepConfig:
    """Check every key and value before anything is computed."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
    merged = {**DEFAULTS[exp], **raw}
    kwargs = {"experiment": exp}
    needed = {
        "circle": ("Delta_values",),
        "econe-upper": ("h_values", "Delta_values"),
    }.get(exp, ("h_values", "delta_values"))
    for key in needed:
        kwargs[key] = _float_list(merged.get(key), key)
    for key in ("grid_n", "angular_n", "cells_below_h", "fourier_N"):
        if key in merged:
            val = merged[key]
            if isinstance(val, bool) or not isinstance(val, int) or val < 1:
                raise ConfigError(f"{key} must be a positive integer")
            kwargs[key] = val
    if "output_path" in merged:
        if not isinstance(merged["output_path"], str) or not merged["output_path"]:
            raise ConfigError("output_path must be a non-empty string")
        kwargs["output_path"] = merged["output_path"]
    optim = merged.get("optim", {})
    if not isinstance(optim, dict):
        raise ConfigError("optim must be an object")
    bad = sorted(set(optim) - set(OptimSettings.__dataclass_fields__))
    if bad:
        raise ConfigError(f"unknown optim keys: {', '.join(bad)}")
    kwargs["optim"] = dict(optim)
    cfg = SweepConfig(**kwargs)
    try:
        cfg.settings()
        for D in cfg.Delta_values or (1.0,):
            for h in cfg.h_values or (0.5,):
                for d in cfg.delta_values or (0.0,):
                    ModelParams(h=h, delta=d, Delta=D)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if exp.startswith("cap") and cfg.grid_n < 8:
        raise ConfigError("grid_n must be at least 8")
    if exp == "econe-upper" and (cfg.angular_n < 8 or cfg.angular_n % 2):
        raise ConfigError("angular_n must be even and at least 8")
    if exp == "circle" and cfg.fourier_N < 4:
        raise ConfigError("fourier_N must be at least 4")
    return cfg


def load_config(path) -> SweepConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return validate_config(raw)


# ---------------------------------------------------------------------------
# single points


def _law(h, delta):
    return h * h + delta**1.5 * h**1.5


def _circle_point(cfg, p):
    D = p["Delta"]
    curve, energy = solve_circle_min(D, cfg.fourier_N, seed=cfg.settings().seed, settings=cfg.settings())
    target = 3.0 * TWO_PI * D * D
    mass = spectral_mass(curve)
    total = mass.sum()
    return {
        "energy": energy,
        "target": target,
        "ratio": energy / target if target else 1.0,
        "constraint_residual": circle_constraint(curve) - TWO_PI * D * D,
        "mass_fraction_12": float(mass[1:3].sum() / total) if total else 1.0,
        "dominant_mode": dominant_mode(curve) if total else 0,
    }


def _econe_point(cfg, p):
    D, h = p["Delta"], p["h"]
    grid = PolarGrid.for_truncation(h, cfg.angular_n, cfg.cells_below_h)
    alpha = optimal_curve(D, cfg.fourier_N)
    U, W = build_econe_pair(EConeConfig(alpha, D, h), grid)
    e = fvk_energy_polar(U, W, D, h, grid)
    half = float(grid.r[np.argmin(np.abs(grid.r - 0.5))])
    return {
        "nr": grid.nr,
        "energy": e.total,
        "membrane": e.membrane,
        "bend": e.bend,
        "energy_over_h2": e.total / h**2,
        "target_log_term": 3.0 * TWO_PI * D * D * math.log(1.0 / h),
        "kappa_half": gauss_curvature(W, half, grid),
    }


def _cap_energy_fields(e):
    return {"energy": e.total, "membrane_u": e.membrane_u, "membrane_stretch": e.membrane_stretch, "bend": e.bend}


def _cap_construct_point(cfg, p):
    h, d = p["h"], p["delta"]
    grid = RadialGrid.uniform(cfg.grid_n)
    if d == 0.0:
        R = l = 0.0
        branch = "none"
    else:
        choice = choose_Rl(h, d)
        R, l, branch = choice.R, choice.l, choice.branch
    prof = build_inversion(h, d, grid)
    e = cap_energy(prof, h)
    return {
        **_cap_energy_fields(e),
        "law": _law(h, d),
        "ratio": e.total / _law(h, d),
        "R": R,
        "l": l,
        "branch": branch,
        "tau": tau(prof),
    }


def _cap_init(h, d, grid):
    if d == 0.0:
        return "sphere", CapProfile.sphere(grid)
    if choose_Rl(h, d).feasible:
        return "inversion", build_inversion(h, d, grid)
    return "scaled", CapProfile.sphere(grid, d)


def _cap_min_point(cfg, p, diagnostics=False):
    h, d = p["h"], p["delta"]
    grid = RadialGrid.uniform(cfg.grid_n)
    label, init = _cap_init(h, d, grid)
    res = minimize_cap(h, d, init, settings=cfg.settings())
    row = {
        "init": label,
        **_cap_energy_fields(res.energy),
        "law": _law(h, d),
        "ratio": res.energy.total / _law(h, d),
        "converged": bool(res.converged),
        "tau": tau(res.profile),
    }
    if diagnostics:
        rep = lower_bound_report(res.profile, h, d).as_dict()
        row.update({k: rep[k] for k in _LB_COLUMNS})
    else:
        row["init_energy"] = cap_energy(init, h).total
        row["iterations"] = len(res.trace)
    return row


_RUNNERS = {
    "circle": _circle_point,
    "econe-upper": _econe_point,
    "cap-construct": _cap_construct_point,
    "cap-min": _cap_min_point,
    "cap-diagnostics": lambda cfg, p: _cap_min_point(cfg, p, diagnostics=True),
}

NUMERIC_FAILURES = (NumericError, ConvergenceError, FloatingPointError, ArithmeticError)


def run_point(cfg: SweepConfig, point: dict) -> dict:
    """Evaluate one parameter point; failures land in the ``error`` column."""
    start = time.perf_counter()
    row = dict(point)
    try:
        row.update(_RUNNERS[cfg.experiment](cfg, point))
        row["error"] = ""
    except Exception as exc:  # a failing point must not abort the sweep
        row["error"] = f"{type(exc).__name__}: {exc}"
    logger.info("%s %s done in %.2fs %s", cfg.experiment, point, time.perf_counter() - start, row["error"])
    return {k: _plain(v) for k, v in row.items()}


def _plain(v):
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list

    @property
    def columns(self) -> list:
        return COLUMNS[self.config.experiment]

    def failed(self) -> list:
        return [r for r in self.rows if r.get("error")]


def write_metadata(cfg: SweepConfig, path: Path) -> Path:
    meta = {
        "config_sha256": cfg.digest(),
        "version": __version__,
        "experiment": cfg.experiment,
        "config": cfg.canonical(),
        "grids": {
            "grid_n": cfg.grid_n,
            "angular_n": cfg.angular_n,
            "cells_below_h": cfg.cells_below_h,
            "fourier_N": cfg.fourier_N,
        },
        "columns": COLUMNS[cfg.experiment],
    }
    side = path.with_name(path.name + ".meta.json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return side


def run_sweep(cfg: SweepConfig, threads: int = 1, output_path=None) -> SweepResult:
    """Run every parameter point and stream rows to the CSV in config order."""
    path = Path(output_path or cfg.output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = COLUMNS[cfg.experiment]
    points = cfg.points()
    rows = []
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        fh.flush()
        if threads > 1 and len(points) > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                results = pool.map(run_point, itertools.repeat(cfg), points)
                for row in results:
                    writer.writerow([_format(row.get(c)) for c in columns])
                    fh.flush()
                    rows.append(row)
        else:
            for point in points:
                row = run_point(cfg, point)
                writer.writerow([_format(row.get(c)) for c in columns])
                fh.flush()
                rows.append(row)
    write_metadata(cfg, path)
    return SweepResult(cfg, rows)


def _parse_cell(text):
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return float(text)
    except ValueError:
        return text


def read_table(path) -> list:
    """Rows of a sweep CSV with numeric cells parsed."""
    with Path(path).open(newline="") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# fits

MODELS = {
    "log": "C1*h^2*log(1/h) + C2*h^2",
    "power_h": "A*h^p",
    "power_hd": "A*h^p*delta^q",
}

CLAIMS = {
    "log": "coefficient C1 of h^2 log(1/h) for the truncated cone; upper-bound target 6 pi Delta^2",
    "power_h": "h-exponent of the cap energy; target 3/2 at delta=1 and 2 at delta=0",
    "power_hd": "h- and delta-exponents of the cap energy; target 3/2 for both where delta^1.5 h^1.5 dominates",
}


@dataclass(frozen=True)
class ScalingFit:
    model: str
    coefficients: dict
    exponents: dict
    max_rel_residual: float
    n_samples: int

    @property
    def label(self) -> str:
        return MODELS[self.model]

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "label": self.label,
            "coefficients": self.coefficients,
            "exponents": self.exponents,
            "max_rel_residual": self.max_rel_residual,
            "n_samples": self.n_samples,
        }


def _usable(rows, needed):
    out = []
    for row in rows:
        if row.get("error"):
            continue
        vals = [row.get(k) for k in needed]
        if all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals):
            out.append(row)
    return out


def _solve(design, target, names):
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        _, _, vt = np.linalg.svd(design)
        null = vt[-1]
        worst = names[int(np.argmax(np.abs(null)))]
        raise FitError(
            f"design is rank-deficient along {worst} "
            f"(null direction {dict(zip(names, np.round(null, 6).tolist()))})"
        )
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return coef


def fit_scaling(table, model: str, energy_key: str = "energy") -> ScalingFit:
    """Least-squares fit of one of :data:`MODELS` to the rows of ``table``.

    Power laws are fitted linearly in log space; the logarithmic model fits
    ``energy / h^2`` against ``log(1/h)``. Rows with an error or a missing
    value are skipped. The residual is the largest relative misfit of the
    energy over the fitted rows.
    """
    if model not in MODELS:
        raise FitError(f"unknown model {model!r}; choose from {sorted(MODELS)}")
    needed = ["h", energy_key] + (["delta"] if model == "power_hd" else [])
    rows = _usable(table, needed)
    if len(rows) < 4:
        raise FitError(f"need at least 4 usable rows, got {len(rows)}")
    h = np.array([r["h"] for r in rows], dtype=np.float64)
    E = np.array([r[energy_key] for r in rows], dtype=np.float64)
    if np.any(h <= 0):
        raise FitError("h must be positive")
    if model == "log":
        x = np.log(1.0 / h)
        c1, c2 = _solve(np.column_stack((x, np.ones_like(x))), E / h**2, ["log(1/h)", "constant"])
        pred = (c1 * x + c2) * h**2
        coefficients, exponents = {"C1": float(c1), "C2": float(c2)}, {}
    else:
        if np.any(E <= 0):
            raise FitError("power-law fits need positive energies")
        cols, names = [np.ones_like(h), np.log(h)], ["log(A)", "log(h)"]
        if model == "power_hd":
            d = np.array([r["delta"] for r in rows], dtype=np.float64)
            if np.any(d <= 0):
                raise FitError("power_hd needs positive delta")
            cols.append(np.log(d))
            names.append("log(delta)")
        coef = _solve(np.column_stack(cols), np.log(E), names)
        pred = np.exp(np.column_stack(cols) @ coef)
        coefficients = {"A": float(np.exp(coef[0]))}
        exponents = {"p": float(coef[1])}
        if model == "power_hd":
            exponents["q"] = float(coef[2])
    resid = float(np.max(np.abs(pred - E) / np.abs(E)))
    return ScalingFit(model, coefficients, exponents, resid, len(rows))


# ---------------------------------------------------------------------------
# report


def _target(row):
    """(label, target value) the row's energy is compared against, if any."""
    if "target" in row and isinstance(row.get("target"), float):
        return "6 pi Delta^2", row["target"]
    if "target_log_term" in row and isinstance(row.get("h"), float):
        return "6 pi Delta^2 h^2 log(1/h)", row["target_log_term"] * row["h"] ** 2
    if "law" in row and isinstance(row.get("law"), float):
        return "h^2 + delta^1.5 h^1.5", row["law"]
    return None, None


def _fmt(x, digits=6):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        return str(x)
    return f"{x:.{digits}g}"


def summary_text(table, fits=()) -> str:
    lines = ["Sweep summary", "", f"rows: {len(table)}"]
    failed = [r for r in table if r.get("error")]
    if failed:
        lines.append(f"failed rows: {len(failed)}")
    lines.append("")
    for row in table:
        params = ", ".join(f"{k}={_fmt(row[k])}" for k in ("Delta", "h", "delta") if k in row and row[k] is not None)
        if row.get("error"):
            lines.append(f"{params}: failed ({row['error']})")
            continue
        label, target = _target(row)
        energy = row.get("energy")
        if label is not None and isinstance(energy, float) and target:
            lines.append(f"{params}: energy {_fmt(energy)}, target {label} = {_fmt(target)}, observed/target {_fmt(energy / target)}")
        else:
            lines.append(f"{params}: energy {_fmt(energy)}")
    if fits:
        lines += ["", "Fits"]
        for fit in fits:
            fd = fit.as_dict() if isinstance(fit, ScalingFit) else fit
            parts = [f"{k}={_fmt(v)}" for k, v in {**fd["coefficients"], **fd["exponents"]}.items()]
            lines.append(f"{fd['label']}: {', '.join(parts)}, max rel residual {_fmt(fd['max_rel_residual'], 3)}")
            lines.append(f"  tests: {CLAIMS[fd['model']]}")
    return "\n".join(lines) + "\n"


def report(table, fits, path) -> tuple:
    """Write ``<path>.json`` (rows and fits) and ``<path>.txt`` (summary)."""
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    fit_dicts = [f.as_dict() if isinstance(f, ScalingFit) else f for f in fits]
    payload = {"rows": table, "fits": fit_dicts}

    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, list):
            return [clean(x) for x in v]
        return v

    json_path = base.with_name(base.name + ".json")
    txt_path = base.with_name(base.name + ".txt")
    json_path.write_text(json.dumps(clean(payload), indent=2, sort_keys=True) + "\n")
    txt_path.write_text(summary_text(table, fits))
    return json_path, txt_path
