"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every criterion is checked at its stated tolerance.  The measured numbers are
recomputed here from the raw sweeps and constants of the report bundles rather
than read back from the pipeline's own flags.  Run directly with
``python3 tests/test_acceptance.py`` or as part of ``pytest``; the lines are
collected in the terminal summary.
"""
import os
import sys
import time

import numpy as np
import pytest

from helpers import ACCEPTANCE_LINES, line_space, plane_space
from oracles.generate_oracles import euclid, half_double_sum, jump_weights, ordered_sum
from reflekt.errors import ReflektError
from reflekt.experiment import (
    EXTENSION_TABLES,
    ExperimentConfig,
    emit_plot_data,
    emit_reports,
    run_experiment,
    variation,
)
from reflekt.extension import build_extension, check_containments, check_pointwise_geometry
from reflekt.generators import generate_example
from reflekt.heat import build_generator, compute_heat_kernel, semigroup_checks
from reflekt.kernel import ScaleFunction, build_jump_kernel, dirichlet_energy, reflected_form, restricted_energy
from reflekt.partition import ROUNDOFF, build_eta, build_mass_functions, build_psi, check_mass_functions, solve_equilibrium_potential
from reflekt.whitney import build_cover, verify_geometry

SF = ScaleFunction.power(1.5)

# (generator, refinement parameter, coarse, fine); the fine level stays below 2048 points
INSTANCES = {
    "path_interval": ("N", 129, 257),
    "grid_square": ("n", 17, 33),
    "grid_with_slits": ("n", 17, 33),
    "comb": ("n", 17, 33),
}

SWEEP_BAR = 4.0  # across the dyadic r-sweep
REFINE_BAR = 2.0  # between consecutive refinements
KAPPA_BAR = 3.0
KAPPA_DRIFT = 0.5


def _record(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title}"
    if detail:
        line += f" -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def _config(name: str) -> ExperimentConfig:
    key, coarse, fine = INSTANCES[name]
    return ExperimentConfig.from_dict({"generator": name, "refinement": [{key: coarse}, {key: fine}]})


_BUNDLES = {}


def _bundle(name: str):
    if name not in _BUNDLES:
        _BUNDLES[name] = run_experiment(_config(name))
    return _BUNDLES[name]


# ---------------------------------------------------------------------------
# 1. exact structural invariants
# ---------------------------------------------------------------------------


def _structural(name: str) -> dict:
    key, _, fine = INSTANCES[name]
    s, D = generate_example(name, {key: fine})
    assert s.n <= 2048
    k = build_jump_kernel(s, SF)
    cover = build_cover(s, D)
    out = {}
    try:
        geo = verify_geometry(cover)
        # radius comparability and distance band at the literal (5 -+ lam) constants
        lit = all(lo >= (5 - lam) / (5 + lam) and hi <= (5 + lam) / (5 - lam)
                  for lam, (lo, hi) in geo.ratio_bounds.items())
        band = all(lo >= 5 - lam and hi <= 5 + lam for lam, (lo, hi) in geo.distance_band.items())
        out["whitney"] = geo.disjoint and geo.distance_identity and geo.covers and lit and band
        out["qualifying_set"] = geo.lambda_cover_ok
    except ReflektError:
        out["whitney"] = out["qualifying_set"] = False
    pou = build_psi(build_eta(k, cover), cover, D, k)
    out["psi_sum"] = pou.sum_error <= ROUNDOFF
    out["lambda_psi_sum"] = pou.lambda_sum_error <= ROUNDOFF
    mf = build_mass_functions(s, D, cover)
    rep = check_mass_functions(mf, cover)
    out["mass_structure"] = rep.range_ok and rep.sum_ok and rep.diam_ok and rep.reach_ok and rep.support_in_ball
    out["mass_literal_C"] = rep.literal_ok and mf.mass_bounds_hold(2 * mf.C1 * mf.C3 / mf.C2)
    ext = build_extension(cover, pou, mf)
    c = check_containments(ext)
    out["containment_7r"] = c.within_7r
    out["containment_14r"] = c.within_14r
    p = check_pointwise_geometry(ext)
    out["separation"] = p.separation_ok
    out["domain_distance"] = p.domain_distance_ok
    out["support_distance"] = p.support_distance_ok
    return out


def test_criterion_1_structural_invariants():
    t = time.perf_counter()
    results = {name: _structural(name) for name in INSTANCES}
    elapsed = time.perf_counter() - t
    failed = [f"{name}:{check}" for name, r in results.items() for check, ok in r.items() if not ok]
    ok = not failed and elapsed < 300
    _record(1, "exact structural invariants", ok,
            f"{elapsed:.0f}s; failing: {', '.join(failed)}" if failed else f"{elapsed:.0f}s, all checks hold")
    assert not failed, failed
    assert elapsed < 300


# ---------------------------------------------------------------------------
# 2. oracle equivalence
# ---------------------------------------------------------------------------


def _capacity_errors(oracle) -> list:
    errs = []
    for name, o in oracle["capacities"].items():
        assert len(o["free"]) <= 12
        s = line_space(range(21)) if name == "path21" else plane_space([(i, j) for i in range(9) for j in range(9)])
        pot = solve_equilibrium_potential(build_jump_kernel(s, SF), o["inner"], o["outer"])
        errs.append(abs(pot.capacity - o["capacity"]) / o["capacity"])
    return errs


def _restricted_errors(n_instances: int = 60, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n_instances):
        n = int(rng.integers(3, 65))
        flat = rng.choice(41 * 41, size=n, replace=False)
        pts = [(int(p // 41), int(p % 41)) for p in flat]
        mass = rng.uniform(0.5, 2.0, n)
        k = build_jump_kernel(plane_space(pts, mass), SF)
        w = jump_weights(pts, list(mass), euclid, 1.5)
        f = rng.normal(size=n)
        A = np.flatnonzero(rng.random(n) < 0.5)
        B = np.flatnonzero(rng.random(n) < 0.5)
        for got, want in ((restricted_energy(k, f, (A, B)), ordered_sum(w, list(f), A, B)),
                          (dirichlet_energy(k, f), half_double_sum(w, list(f)))):
            errs.append(0.0 if want == got == 0 else abs(got - want) / abs(want))
    return errs


def test_criterion_2_oracle_equivalence(oracle):
    cap = max(_capacity_errors(oracle))
    res = max(_restricted_errors())
    ok = cap <= 1e-9 and res <= 1e-12
    _record(2, "oracle equivalence", ok, f"capacity rel err {cap:.1e} (bar 1e-9), restricted energy rel err "
                                         f"{res:.1e} (bar 1e-12)")
    assert cap <= 1e-9 and res <= 1e-12


# ---------------------------------------------------------------------------
# 3. semigroup suite
# ---------------------------------------------------------------------------


def test_criterion_3_semigroup():
    worst = {"symmetry": 0.0, "conservation": 0.0, "chapman_kolmogorov": 0.0}
    positive = True
    for name, (key, coarse, _) in INSTANCES.items():
        s, D = generate_example(name, {key: coarse})
        k = build_jump_kernel(s, SF)
        for form in (k, reflected_form(k, D)):
            rep = semigroup_checks(build_generator(form))
            for f in worst:
                worst[f] = max(worst[f], getattr(rep, f))
            positive &= rep.positive_ok
    closed = 0.0
    for c in (0.3, 1.0, 2.5):
        gen = build_generator(build_jump_kernel(line_space([0, 1]), ScaleFunction.power(1.0), normalization=c))
        for t in (0.01, 0.5, 3.0):
            p = compute_heat_kernel(gen, t)
            e = np.exp(-2 * c * t)
            closed = max(closed, abs(p[0, 0] - (1 + e) / 2), abs(p[0, 1] - (1 - e) / 2))
    ok = (worst["symmetry"] <= 1e-12 and worst["conservation"] <= 1e-10 and worst["chapman_kolmogorov"] <= 1e-8
          and closed <= 1e-10 and positive)
    _record(3, "semigroup suite", ok,
            f"symmetry {worst['symmetry']:.1e}, conservation {worst['conservation']:.1e}, "
            f"CK {worst['chapman_kolmogorov']:.1e}, two-point {closed:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 4. extension bounds
# ---------------------------------------------------------------------------


def _extension_failures(name: str) -> list:
    b = _bundle(name)
    out = []
    consts = {t: [] for t in EXTENSION_TABLES}
    for lv_i, lv in enumerate(b.levels):
        for t in EXTENSION_TABLES:
            tab = lv["extension"]["tables"][t]
            if not tab["holds"]:
                out.append(f"{name}/L{lv_i}/{t}:holds")
            sweep = [float(c) for _, c in tab["sweep"]]
            rv = variation(sweep)
            if rv > SWEEP_BAR:
                out.append(f"{name}/L{lv_i}/{t}:r-sweep x{rv:.3g}")
            consts[t].append(float(tab["constant"]))
    for t, cs in consts.items():
        v = variation(cs)
        if v > REFINE_BAR:
            out.append(f"{name}/{t}:refinement x{v:.3g}")
    return out


def test_criterion_4_extension_bounds():
    t = time.perf_counter()
    failures = [f for name in INSTANCES for f in _extension_failures(name)]
    elapsed = time.perf_counter() - t
    _record(4, "extension bounds", not failures,
            "; ".join(failures) if failures else f"all tables stable ({elapsed:.0f}s)")
    assert not failures, failures


# ---------------------------------------------------------------------------
# 5. CSJ suite
# ---------------------------------------------------------------------------


def _csj_failures(name: str) -> list:
    b = _bundle(name)
    out = []
    joints = []
    for lv_i, lv in enumerate(b.levels):
        comp = lv["csj"]["composite"]
        if not (comp["all_rows_pass"] and comp["cutoffs_valid"] and all(comp["checks"].values())):
            out.append(f"{name}/L{lv_i}:composite")
        refl = lv["csj"]["reflected"]
        joint = float(refl["joint"])
        if not np.isfinite(joint):
            out.append(f"{name}/L{lv_i}:reflected not finite")
        rv = variation(float(c) for _, c in refl["sweep"])
        if rv > SWEEP_BAR:
            out.append(f"{name}/L{lv_i}:reflected r-sweep x{rv:.3g}")
        joints.append(joint)
    v = variation(joints)
    if v > REFINE_BAR:
        out.append(f"{name}:reflected refinement x{v:.3g}")
    return out


def test_criterion_5_csj():
    failures = [f for name in INSTANCES for f in _csj_failures(name)]
    _record(5, "CSJ suite", not failures, "; ".join(failures) if failures else "composite rows pass, reflected "
                                                                                "constants finite and stable")
    assert not failures, failures


# ---------------------------------------------------------------------------
# 6. main theorem experiment
# ---------------------------------------------------------------------------


def test_criterion_6_heat_kernel_band():
    failures, kappas = [], {}
    for name in ("grid_with_slits", "comb"):
        b = _bundle(name)
        ks = []
        for lv_i, lv in enumerate(b.levels):
            lo, hi = (float(v) for v in lv["heat"]["reflected"]["band"])
            if not (lo > 0 and np.isfinite(hi)):
                failures.append(f"{name}/L{lv_i}:band [{lo:.3g}, {hi:.3g}]")
            amb_lo, amb_hi = (float(v) for v in lv["heat"]["ambient"]["band"])
            kappa = np.log(hi / lo) / np.log(amb_hi / amb_lo)
            if kappa > KAPPA_BAR:
                failures.append(f"{name}/L{lv_i}:kappa {kappa:.3g}")
            ks.append(kappa)
        drift = abs(ks[1] - ks[0]) / ks[0]
        if drift > KAPPA_DRIFT:
            failures.append(f"{name}:kappa drift {drift:.0%}")
        kappas[name] = ks
    detail = ", ".join(f"{n} kappa {a:.3g}->{b:.3g}" for n, (a, b) in kappas.items())
    _record(6, "HK band on slits and comb (band finiteness and stability surrogate)", not failures,
            "; ".join(failures + [detail]))
    assert not failures, failures


# ---------------------------------------------------------------------------
# 7. determinism
# ---------------------------------------------------------------------------


def test_criterion_7_determinism(tmp_path):
    differing = []
    for name in ("path_interval", "grid_with_slits"):
        for run in ("a", "b"):
            b = run_experiment(_config(name))
            emit_reports(b, tmp_path / name / run)
            emit_plot_data(b, tmp_path / name / run)
        a_dir, b_dir = tmp_path / name / "a", tmp_path / name / "b"
        files = sorted(os.listdir(a_dir))
        if files != sorted(os.listdir(b_dir)):
            differing.append(f"{name}:file list")
        for f in files:
            if (a_dir / f).read_bytes() != (b_dir / f).read_bytes():
                differing.append(f"{name}:{f}")
    _record(7, "determinism", not differing, "; ".join(differing) if differing else "byte-identical bundles")
    assert not differing, differing


if __name__ == "__main__":
    code = pytest.main([os.path.abspath(__file__), "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
