"""Configuration-driven verification pipeline and report emission.

``run_experiment`` builds every refinement level of one instance and runs
space -> kernel -> whitney -> partition -> extension -> heat -> csj on it.
Hard invariants raise (wrapped in :class:`InvariantFailure`); fitted
constants are recorded together with a witness and compared against the
configured stability thresholds.
"""
from __future__ import annotations

import csv
import inspect
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import csj as csj_mod
from . import extension as ext_mod
from . import heat as heat_mod
from .errors import ConfigError, InvariantFailure, IoFailure, ReflektError, UnknownGenerator
from .generators import GENERATORS, generate_example
from .kernel import ScaleFunction, build_jump_kernel, reflected_form, tail_bound_check
from .partition import build_eta, build_mass_functions, build_psi, check_mass_functions
from .space import check_ahlfors, check_doubling, domain_from_mask
from .whitney import build_cover, verify_geometry

SCHEMA_VERSION = 1
REPORT_FILE = "report.json"
CONFIG_FILE = "config.json"

HK_COLUMNS = ("level", "t", "x", "y", "p", "q", "ratio")
ROW_COLUMNS = ("level", "x0", "r", "lhs", "rhs", "ratio")
EXTENSION_TABLES = ("l2", "near", "off", "cross", "combined")
CSJ_TABLES = ("ball", "composite", "reflected")
PLOT_FILES = (
    tuple(f"hk_{k}.csv" for k in ("ambient", "reflected"))
    + tuple(f"extension_{k}.csv" for k in EXTENSION_TABLES)
    + tuple(f"csj_{k}.csv" for k in CSJ_TABLES)
)

DEFAULT_THRESHOLDS = {
    "r_sweep": 4.0,  # max / min of a fitted constant across the radius sweep
    "refinement": 2.0,  # max / min of a fitted constant between consecutive levels
    "kappa": 3.0,  # reflected / ambient log-width of the HK ratio band
    "kappa_drift": 0.5,  # relative change of kappa between consecutive levels
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    generator: str = "path_interval"
    params: dict = field(default_factory=dict)
    scale: dict = field(default_factory=lambda: {"kind": "power", "beta": 1.5})
    normalization: float = 1.0
    probe_centers: int = 64  # extension probes and reflected CSJ centres, sampled in D
    csj_centers: int = 16  # ambient CSJB centres, sampled in X
    composite_centers: int = 4  # composite-cutoff centres, a prefix of the CSJB centres
    window: tuple = heat_mod.WINDOW  # t in [phi(a mesh), phi(b diam)]
    n_times: int = heat_mod.N_TIMES
    pair_sample: int = heat_mod.PAIR_SAMPLE
    refinement: tuple = ()  # parameter overrides, one per level; empty means a single level
    seed: int = 0
    out_dir: str = "reflekt-out"
    lam: float = csj_mod.LAMBDA
    min_ahlfors: float = heat_mod.MIN_AHLFORS
    thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))

    def __post_init__(self):
        _validate(self)

    @property
    def levels(self) -> list:
        """Generator parameters of every refinement level."""
        if not self.refinement:
            return [dict(self.params)]
        return [{**self.params, **dict(o)} for o in self.refinement]

    @property
    def scale_function(self) -> ScaleFunction:
        return ScaleFunction.from_dict(self.scale)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        d["refinement"] = [dict(o) for o in self.refinement]
        return d

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("the configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        data = dict(data)
        if "window" in data:
            data["window"] = _pair(data["window"], "window")
        if "refinement" in data:
            if not isinstance(data["refinement"], (list, tuple)) or not all(isinstance(o, dict) for o in data["refinement"]):
                raise ConfigError("refinement must be a list of parameter objects")
            data["refinement"] = tuple(dict(o) for o in data["refinement"])
        if "thresholds" in data:
            if not isinstance(data["thresholds"], dict):
                raise ConfigError("thresholds must be an object")
            data["thresholds"] = {**DEFAULT_THRESHOLDS, **data["thresholds"]}
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from None
        return cls.from_json(text)

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)


def _pair(v, name):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{name} must be a pair of numbers")
    try:
        return (float(v[0]), float(v[1]))
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a pair of numbers") from None


def _validate(cfg: ExperimentConfig):
    if not isinstance(cfg.generator, str):
        raise ConfigError("generator must be a string")
    if cfg.generator not in GENERATORS:
        raise UnknownGenerator(f"unknown generator {cfg.generator!r}; choose from {sorted(GENERATORS)}")
    accepted = set(inspect.signature(GENERATORS[cfg.generator]).parameters) - {"max_points_override"}
    accepted.add("full_domain")
    for p in [cfg.params, *cfg.refinement]:
        if not isinstance(p, dict):
            raise ConfigError("generator parameters must be an object")
        bad = sorted(set(p) - accepted)
        if bad:
            raise ConfigError(f"{cfg.generator} does not accept parameters {bad}; accepted: {sorted(accepted)}")
    if not isinstance(cfg.scale, dict):
        raise ConfigError("scale must be an object")
    try:
        ScaleFunction.from_dict(cfg.scale)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scale function: {exc}") from None
    for name in ("probe_centers", "csj_centers", "composite_centers", "n_times", "pair_sample", "seed"):
        v = getattr(cfg, name)
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise ConfigError(f"{name} must be a non-negative integer")
    if cfg.n_times < 2:
        raise ConfigError("n_times must be at least 2")
    for name in ("normalization", "lam", "min_ahlfors"):
        v = getattr(cfg, name)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError(f"{name} must be a positive number")
    a, b = _pair(cfg.window, "window")
    if not (a > 0 and b > 0):
        raise ConfigError("window multipliers must be positive")
    if not isinstance(cfg.out_dir, str) or not cfg.out_dir:
        raise ConfigError("out_dir must be a non-empty string")
    if not isinstance(cfg.thresholds, dict) or set(cfg.thresholds) != set(DEFAULT_THRESHOLDS):
        raise ConfigError(f"thresholds must have exactly the keys {sorted(DEFAULT_THRESHOLDS)}")
    for k, v in cfg.thresholds.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError(f"threshold {k} must be a positive number")


# ---------------------------------------------------------------------------
# serialisation helpers
# ---------------------------------------------------------------------------


def _jsonable(obj):
    """Plain JSON types; non-finite floats become the strings "inf", "-inf", "nan"."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _num(v) -> float:
    """Inverse of the non-finite encoding of :func:`_jsonable`."""
    if isinstance(v, str):
        return float(v)
    return float(v)


def variation(values) -> float:
    """``max / min`` of non-negative constants; 1 if all vanish, inf if only some do."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0 or not (v > 0).any():
        return 1.0
    if (v <= 0).any():
        return float("inf")
    return float(v.max() / v.min())


def _fitted(value, witness, **extra) -> dict:
    return {"value": float(value), "witness": witness, **extra}


def _probe_summary(table: ext_mod.ProbeTable) -> dict:
    sweep = table.sweep()
    return {
        "constant": table.constant,
        "witness": table.witness(),
        "sweep": [[r, c] for r, c in sweep.items()],
        "r_variation": variation(sweep.values()),
        "rows": int(table.lhs.size),
        "holds": table.holds(),
    }


def _csj_summary(table: csj_mod.CsjTable) -> dict:
    sweep = table.sweep()
    return {
        "joint": table.joint,
        "witness": table.witness(),
        "sweep": [[r, c] for r, c in sweep.items()],
        "r_variation": variation(sweep.values()),
        "pareto": table.pareto(),
        "rows": len(table),
    }


def _probe_rows(level: int, table: ext_mod.ProbeTable) -> np.ndarray:
    n = table.lhs.size
    return np.column_stack([np.full(n, level), table.centers, table.radii, table.lhs, table.rhs, table.ratios])


def _csj_rows(level: int, table: csj_mod.CsjTable, rhs: Optional[np.ndarray] = None) -> np.ndarray:
    n = len(table)
    rhs = table.energy + table.mass if rhs is None else rhs
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, table.lhs / np.where(rhs > 0, rhs, 1.0), np.where(table.lhs > 0, np.inf, 0.0))
    return np.column_stack([np.full(n, level), table.x0, table.r, table.lhs, rhs, ratio])


def _hk_rows(level: int, rep: heat_mod.HkRatioReport) -> np.ndarray:
    nt, k, _ = rep.samples.shape
    t = np.repeat(rep.times, k)
    xy = np.tile(rep.pairs, (nt, 1))
    s = rep.samples.reshape(nt * k, 3)
    return np.column_stack([np.full(nt * k, level), t, xy[:, 0], xy[:, 1], s])


# ---------------------------------------------------------------------------
# the bundle
# ---------------------------------------------------------------------------


@dataclass
class ReportBundle:
    """JSON-ready report plus the bulk numeric tables emitted as CSV."""

    config: Optional[dict] = None
    levels: list = field(default_factory=list)  # per-level reports
    stability: dict = field(default_factory=dict)  # cross-level comparisons
    tables: dict = field(default_factory=dict)  # file name -> (columns, rows)

    @classmethod
    def empty(cls) -> "ReportBundle":
        return cls()

    @property
    def flags(self) -> dict:
        """Every pass/fail flag, keyed ``level<k>.<name>`` or ``stability.<name>``."""
        out = {}
        for k, lv in enumerate(self.levels):
            for name, ok in lv["flags"].items():
                out[f"level{k}.{name}"] = bool(ok)
        for name, s in self.stability.items():
            out[f"stability.{name}"] = bool(s["pass"])
        return out

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def failures(self) -> list:
        return sorted(k for k, v in self.flags.items() if not v)

    def report(self) -> dict:
        return _jsonable({
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "levels": self.levels,
            "stability": self.stability,
            "flags": self.flags,
            "passed": self.passed,
        })


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


class _Stage:
    """Wraps library errors of one pipeline step into a structured failure."""

    def __init__(self, module: str, operation: str):
        self.module, self.operation = module, operation

    def __enter__(self):
        return self

    def __exit__(self, tp, exc, tb):
        if exc is None or isinstance(exc, InvariantFailure):
            return False
        if isinstance(exc, (ReflektError, ValueError, ArithmeticError, AssertionError)):
            witness = getattr(exc, "witness", ())
            raise InvariantFailure(self.module, self.operation, str(exc), witness or ()) from exc
        return False


def _run_level(cfg: ExperimentConfig, level: int, params: dict, max_points: Optional[int], tables: dict) -> dict:
    sf = cfg.scale_function
    th = cfg.thresholds
    flags = {}
    rep: dict = {}

    with _Stage("space", "generate_example"):
        space, domain = generate_example(cfg.generator, params, max_points_override=max_points)
    full = bool(domain.mask.all())
    rep["instance"] = {
        "params": params, "n_points": space.n, "n_domain": int(domain.mask.sum()), "mesh": space.mesh,
        "diam": space.diam, "domain_diam": domain.diam, "full_domain": full,
    }

    with _Stage("space", "check_doubling"):
        dbl = check_doubling(space, domain)
    with _Stage("space", "check_ahlfors"):
        ahl = check_ahlfors(space, domain)
    rep["space"] = {
        "doubling": _fitted(dbl.doubling_constant, dbl.doubling_witness),
        "c1": _fitted(dbl.c1, dbl.c1_witness, d1=dbl.d1),
        "qrvd": _fitted(dbl.qrvd_C, dbl.qrvd_witness, lambda0=dbl.qrvd_lambda0),
        "ahlfors": _fitted(ahl.c_D, ahl.witness, boundary_mass_ok=ahl.boundary_mass_ok),
    }
    flags["ahlfors_regular"] = ahl.c_D >= cfg.min_ahlfors

    with _Stage("kernel", "build_jump_kernel"):
        kernel = build_jump_kernel(space, sf, cfg.normalization)
        tail = tail_bound_check(kernel)
        form = reflected_form(kernel, domain)
    rep["kernel"] = {"tail": _fitted(tail.c, tail.witness)}

    rng_centers = ext_mod.probe_centers(space, domain, cfg.probe_centers, cfg.seed)
    ext = None
    if full:
        # nothing to extend: the extension is the identity and every exterior check is vacuous
        rep["whitney"] = {"n_balls": 0}
        rep["partition"] = {}
        rep["extension"] = {"tables": {}}
        for k in EXTENSION_TABLES:
            tables[f"extension_{k}.csv"].append(np.zeros((0, len(ROW_COLUMNS))))
    else:
        with _Stage("whitney", "verify_geometry"):
            cover = build_cover(space, domain)
            geo = verify_geometry(cover)
        rep["whitney"] = {
            "n_balls": geo.n_balls, "n_lambda": geo.n_lambda, "ratio_bounds": geo.ratio_bounds,
            "max_degree": geo.max_degree, "distance_band": geo.distance_band,
            "max_multiplicity": geo.max_multiplicity, "far_counts": geo.far_counts,
        }
        flags["whitney_geometry"] = geo.disjoint and geo.distance_identity and geo.covers and geo.lambda_cover_ok

        with _Stage("partition", "build"):
            etas = build_eta(kernel, cover)
            pou = build_psi(etas, cover, domain, kernel)
            mf = build_mass_functions(space, domain, cover)
            mrep = check_mass_functions(mf, cover)
        rep["partition"] = {
            "eta": _fitted(etas.constant, etas.witness),
            "psi": _fitted(pou.constant, int(np.argmax(pou.ratios)) if pou.ratios.size else None,
                           sum_error=pou.sum_error, lambda_sum_error=pou.lambda_sum_error),
            "mass": {
                "alpha": mf.alpha, "C1": mf.C1, "C2": mf.C2, "C3": mf.C3,
                "C_literal": mf.C_literal, "C_certificate": mf.C_certificate,
                "integral_ratio": mrep.integral_ratio, "literal_ok": mrep.literal_ok,
                "certificate_ok": mrep.certificate_ok,
            },
        }
        flags["partition_sums"] = pou.sum_error <= 1e-12 and pou.lambda_sum_error <= 1e-12
        flags["mass_functions"] = (mrep.range_ok and mrep.sum_ok and mrep.diam_ok and mrep.reach_ok
                                   and mrep.support_in_ball and mrep.certificate_ok)

        with _Stage("extension", "reports"):
            ext = ext_mod.build_extension(cover, pou, mf)
            cont = ext_mod.check_containments(ext)
            pw = ext_mod.check_pointwise_geometry(ext)
            radii = ext_mod.probe_radii(space, domain)
            us = ext_mod.probe_functions(space, domain, cfg.seed)
            l2 = ext_mod.l2_locality_report(ext, us, rng_centers, radii)
            split = ext_mod.energy_split_report(ext, kernel, us, rng_centers, radii)
            glob = [ext_mod.extension_energy_bound(ext, kernel, u) for u in us]
        probe_tables = {"l2": l2, "near": split.near, "off": split.off, "cross": split.cross,
                        "combined": split.combined}
        g_ratio = [g[2] for g in glob]
        rep["extension"] = {
            "containments": {"within_7r": cont.within_7r, "within_14r": cont.within_14r,
                             "worst_7": cont.worst_7, "worst_14": cont.worst_14,
                             "witness_7": cont.witness_7, "witness_14": cont.witness_14},
            "pointwise": asdict(pw),
            "additivity_error": split.additivity_error,
            "global_energy": _fitted(max(g_ratio), int(np.argmax(g_ratio))),
            "tables": {k: _probe_summary(t) for k, t in probe_tables.items()},
        }
        flags["containments"] = cont.within_7r and cont.within_14r
        flags["pointwise_geometry"] = pw.separation_ok and pw.domain_distance_ok and pw.support_distance_ok
        for k, t in probe_tables.items():
            flags[f"extension_{k}_holds"] = t.holds()
            flags[f"extension_{k}_r_sweep"] = rep["extension"]["tables"][k]["r_variation"] <= th["r_sweep"]
            tables[f"extension_{k}.csv"].append(_probe_rows(level, t))

    with _Stage("heat", "main_theorem_experiment"):
        mt = heat_mod.main_theorem_experiment(space, domain, sf, cfg.normalization, tuple(cfg.window), cfg.n_times,
                                              cfg.seed, cfg.min_ahlfors, kernel=kernel,
                                              pair_sample=cfg.pair_sample)
        sg = heat_mod.semigroup_checks(heat_mod.build_generator(kernel))
    rep["heat"] = {
        "semigroup": asdict(sg),
        "ambient": {"band": mt.ambient.band, "window": mt.ambient.window, "witness_min": mt.ambient.witness_min,
                    "witness_max": mt.ambient.witness_max, "log_width": mt.ambient.log_width,
                    "n_pairs": mt.ambient.n_pairs, "connected": mt.ambient_connected},
        "reflected": {"band": mt.reflected.band, "window": mt.reflected.window,
                      "witness_min": mt.reflected.witness_min, "witness_max": mt.reflected.witness_max,
                      "log_width": mt.reflected.log_width, "n_pairs": mt.reflected.n_pairs,
                      "connected": mt.reflected_connected},
        "kappa": _fitted(mt.kappa, (mt.reflected.witness_min, mt.reflected.witness_max)),
    }
    flags["semigroup"] = sg.ok
    flags["hk_band_finite_positive"] = mt.finite_positive
    flags["hk_kappa"] = mt.kappa <= th["kappa"]
    tables["hk_ambient.csv"].append(_hk_rows(level, mt.ambient))
    tables["hk_reflected.csv"].append(_hk_rows(level, mt.reflected))

    with _Stage("csj", "sweeps"):
        everywhere = domain_from_mask(space, np.ones(space.n, dtype=bool))
        amb_centers = ext_mod.probe_centers(space, everywhere, cfg.csj_centers, cfg.seed)
        amb_radii = csj_mod.csj_radii(space, space.diam)
        ball = csj_mod.csjb_sweep(kernel, amb_centers, amb_radii, cfg.lam, cfg.seed)
        comp_radii = amb_radii[amb_radii >= 4 * space.mesh]
        comp = csj_mod.composite_sweep(kernel, amb_centers[: cfg.composite_centers], comp_radii, lam=cfg.lam,
                                       seed=cfg.seed)
        refl_radii = csj_mod.csj_radii(space, domain.diam)
        if ext is None:
            refl_rows = csj_mod.csjb_sweep(kernel, rng_centers, refl_radii, cfg.lam, cfg.seed)
            chain = {}
        else:
            refl = csj_mod.reflected_sweep(kernel, form, ext, rng_centers, refl_radii, cfg.lam, cfg.seed)
            refl_rows = refl.rows
            chain = refl.chain_holds()
            C3, C4 = refl.extension_constants()
    rep["csj"] = {
        "ball": _csj_summary(ball),
        "composite": {
            **_csj_summary(comp.table),
            "local_constant": comp.local_constant, "local_witness": comp.local.witness(),
            "overlap": comp.overlap, "checks": comp.checks, "cutoffs_valid": comp.cutoffs_valid,
            "explicit_max": comp.explicit.max(axis=0) if comp.explicit.size else [0.0, 0.0],
            "all_rows_pass": bool(comp.passes.all()),
        },
        "reflected": {**_csj_summary(refl_rows), "chain": chain},
    }
    if ext is not None:
        rep["csj"]["reflected"]["extension_constants"] = {"C3": C3, "C4": C4}
    flags["csj_composite"] = comp.cutoffs_valid and bool(comp.passes.all()) and all(comp.checks.values())
    flags["csj_reflected_finite"] = bool(np.isfinite(refl_rows.joint))
    flags["csj_reflected_r_sweep"] = rep["csj"]["reflected"]["r_variation"] <= th["r_sweep"]
    flags["csj_reflected_chain"] = all(chain.values())
    tables["csj_ball.csv"].append(_csj_rows(level, ball))
    if len(comp.table):
        explicit_rhs = comp.explicit[:, 0] * comp.table.energy + comp.explicit[:, 1] * comp.table.mass
        tables["csj_composite.csv"].append(_csj_rows(level, comp.table, explicit_rhs))
    tables["csj_reflected.csv"].append(_csj_rows(level, refl_rows))

    rep["constants"] = _level_constants(rep)
    rep["flags"] = {k: bool(v) for k, v in sorted(flags.items())}
    return rep


def _level_constants(rep: dict) -> dict:
    """The fitted constants compared across refinement levels."""
    out = {}
    for k, t in rep["extension"].get("tables", {}).items():
        out[f"extension_{k}"] = t["constant"]
    out["csj_reflected"] = rep["csj"]["reflected"]["joint"]
    out["kappa"] = rep["heat"]["kappa"]["value"]
    return out


def stability_between(a: dict, b: dict, thresholds: dict) -> dict:
    """Compare the fitted constants of two level reports."""
    out = {}
    for name in sorted(set(a) & set(b)):
        x, y = _num(a[name]), _num(b[name])
        if name == "kappa":
            drift = abs(y - x) / x if x > 0 else float("inf")
            out[name] = {"values": [x, y], "change": drift, "pass": drift <= thresholds["kappa_drift"]}
        else:
            ratio = variation([x, y])
            out[name] = {"values": [x, y], "change": ratio, "pass": ratio <= thresholds["refinement"]}
    return out


def run_experiment(config: ExperimentConfig, max_points: Optional[int] = None) -> ReportBundle:
    """Run the pipeline on every refinement level and compare consecutive levels."""
    if not isinstance(config, ExperimentConfig):
        raise ConfigError("run_experiment needs an ExperimentConfig")
    tables = {name: [] for name in PLOT_FILES}
    levels = [_run_level(config, k, p, max_points, tables) for k, p in enumerate(config.levels)]
    stability = {}
    for k in range(1, len(levels)):
        for name, s in stability_between(levels[k - 1]["constants"], levels[k]["constants"],
                                         config.thresholds).items():
            stability[f"{name}[{k - 1}->{k}]"] = s
    return ReportBundle(
        config=config.to_dict(),
        levels=[_jsonable(lv) for lv in levels],
        stability=_jsonable(stability),
        tables={name: _stack(rows, name) for name, rows in tables.items()},
    )


def _columns_for(name: str) -> tuple:
    return HK_COLUMNS if name.startswith("hk_") else ROW_COLUMNS


def _stack(parts: list, name: str) -> np.ndarray:
    width = len(_columns_for(name))
    parts = [p for p in parts if p.size]
    return np.vstack(parts) if parts else np.zeros((0, width))


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def _format(v: float, integral: bool) -> str:
    if integral:
        return str(int(v))
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


INTEGER_COLUMNS = {"level", "x", "y", "x0"}


def _write(path: str, text: str):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None


def _ensure_dir(directory: str):
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {directory}: {exc}") from None
    if not os.access(directory, os.W_OK):
        raise IoFailure(f"{directory} is not writable")


def emit_reports(bundle: ReportBundle, directory) -> str:
    """Write ``report.json`` (and ``config.json`` when known); returns the report path."""
    directory = os.fspath(directory)
    _ensure_dir(directory)
    path = os.path.join(directory, REPORT_FILE)
    _write(path, json.dumps(bundle.report(), sort_keys=True, indent=2, allow_nan=False) + "\n")
    if bundle.config is not None:
        cfg = {"schema_version": SCHEMA_VERSION, **_jsonable(bundle.config)}
        _write(os.path.join(directory, CONFIG_FILE), json.dumps(cfg, sort_keys=True, indent=2) + "\n")
    return path


def emit_plot_data(bundle: ReportBundle, directory) -> list:
    """Write one CSV per table; each starts with a schema line and a header row."""
    directory = os.fspath(directory)
    _ensure_dir(directory)
    written = []
    for name in PLOT_FILES:
        cols = _columns_for(name)
        rows = bundle.tables.get(name, np.zeros((0, len(cols))))
        buf = io.StringIO()
        buf.write(f"# schema_version={SCHEMA_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        integral = [c in INTEGER_COLUMNS for c in cols]
        for row in rows:
            w.writerow([_format(v, i) for v, i in zip(row, integral)])
        path = os.path.join(directory, name)
        _write(path, buf.getvalue())
        written.append(path)
    return written


def read_plot_data(path) -> tuple:
    """``(columns, rows)`` of an emitted CSV; rejects newer schema versions."""
    try:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline().strip()
            if not first.startswith("# schema_version="):
                raise ConfigError(f"{path} has no schema line")
            _check_version(int(first.split("=", 1)[1]), path)
            r = csv.reader(fh)
            cols = tuple(next(r))
            rows = [[float(v) for v in row] for row in r]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    return cols, np.asarray(rows, dtype=float).reshape(-1, len(cols))


def _check_version(v: int, where):
    if v > SCHEMA_VERSION:
        raise ConfigError(f"{where} has schema version {v}; this reader accepts <= {SCHEMA_VERSION}")


def load_report(path) -> dict:
    """Read ``report.json`` (a file or the directory holding it)."""
    path = os.fspath(path)
    if os.path.isdir(path):
        path = os.path.join(path, REPORT_FILE)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict) or "schema_version" not in data:
        raise ConfigError(f"{path} is not a report (no schema_version)")
    _check_version(int(data["schema_version"]), path)
    return data


def compare(report_a: dict, report_b: dict, thresholds: Optional[dict] = None) -> dict:
    """Refinement-stability diff of the last level of ``a`` against the last level of ``b``."""
    th = {**DEFAULT_THRESHOLDS, **(thresholds or {})}
    la, lb = report_a.get("levels") or [], report_b.get("levels") or []
    if not la or not lb:
        return {}
    return stability_between(la[-1]["constants"], lb[-1]["constants"], th)


__all__ = [
    "ExperimentConfig", "ReportBundle", "run_experiment", "emit_reports", "emit_plot_data", "read_plot_data",
    "load_report", "compare", "stability_between", "variation", "SCHEMA_VERSION", "PLOT_FILES", "HK_COLUMNS",
    "ROW_COLUMNS", "DEFAULT_THRESHOLDS",
]
