import json
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reflekt import cli
from reflekt.errors import ConfigError, IoFailure, UnknownGenerator
from reflekt.experiment import (
    HK_COLUMNS,
    PLOT_FILES,
    ROW_COLUMNS,
    SCHEMA_VERSION,
    ExperimentConfig,
    ReportBundle,
    compare,
    emit_plot_data,
    emit_reports,
    load_report,
    read_plot_data,
    run_experiment,
    variation,
)

SMALL = {"generator": "path_interval", "params": {"N": 65}, "probe_centers": 8, "csj_centers": 4,
         "composite_centers": 2, "pair_sample": 32, "n_times": 5}


@pytest.fixture(scope="module")
def small_bundle():
    return run_experiment(ExperimentConfig.from_dict(SMALL))


@given(
    st.sampled_from(["path_interval", "grid_square", "comb"]),
    st.integers(0, 10**6),
    st.floats(0.5, 2.5),
    st.lists(st.integers(5, 40), max_size=3),
)
def test_config_round_trip(gen, seed, beta, levels):
    key = "N" if gen == "path_interval" else "n"
    cfg = ExperimentConfig(generator=gen, seed=seed, scale={"kind": "power", "beta": beta},
                           refinement=tuple({key: n} for n in levels))
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg and back.to_json() == cfg.to_json()


def test_config_validation():
    with pytest.raises(UnknownGenerator):
        ExperimentConfig.from_dict({"generator": "nope"})
    for bad in ({"bogus": 1}, {"seed": -1}, {"params": {"n": 5}}, {"window": [1]}, {"scale": {"kind": "x"}},
                {"thresholds": {"r_sweep": 0}}, {"n_times": 1}):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(bad)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json("{not json")


def test_levels_merge_overrides():
    cfg = ExperimentConfig.from_dict({"generator": "path_interval", "params": {"D": [0.3, 0.7]},
                                      "refinement": [{"N": 33}, {"N": 65}]})
    assert cfg.levels == [{"D": [0.3, 0.7], "N": 33}, {"D": [0.3, 0.7], "N": 65}]


def test_bundle_witnesses_and_flags(small_bundle):
    lv = small_bundle.levels[0]
    for key in ("doubling", "c1", "qrvd", "ahlfors"):
        assert lv["space"][key]["witness"] is not None
    for t in lv["extension"]["tables"].values():
        assert t["witness"] is not None
    assert lv["csj"]["reflected"]["witness"] is not None
    assert lv["heat"]["kappa"]["witness"] is not None
    assert lv["flags"]["semigroup"] and lv["flags"]["containments"] and lv["flags"]["csj_composite"]


def test_hk_rows_are_times_by_pairs(small_bundle):
    lv = small_bundle.levels[0]
    rows = small_bundle.tables["hk_ambient.csv"]
    assert rows.shape == (SMALL["n_times"] * SMALL["pair_sample"], len(HK_COLUMNS))
    assert lv["heat"]["ambient"]["n_pairs"] >= SMALL["pair_sample"]


def test_emission_is_deterministic(tmp_path, small_bundle):
    again = run_experiment(ExperimentConfig.from_dict(SMALL))
    for name, b in ((tmp_path / "a", small_bundle), (tmp_path / "b", again)):
        emit_reports(b, name)
        emit_plot_data(b, name)
    files = sorted(os.listdir(tmp_path / "a"))
    assert files == sorted(os.listdir(tmp_path / "b")) and len(files) == len(PLOT_FILES) + 2
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_empty_bundle_is_schema_valid(tmp_path):
    b = ReportBundle.empty()
    emit_reports(b, tmp_path)
    emit_plot_data(b, tmp_path)
    rep = load_report(tmp_path)
    assert rep["schema_version"] == SCHEMA_VERSION and rep["levels"] == []
    for name in PLOT_FILES:
        cols, rows = read_plot_data(tmp_path / name)
        assert cols == (HK_COLUMNS if name.startswith("hk_") else ROW_COLUMNS)
        assert rows.shape == (0, len(cols))


def test_plot_data_round_trip(tmp_path, small_bundle):
    emit_plot_data(small_bundle, tmp_path)
    for name in PLOT_FILES:
        cols, rows = read_plot_data(tmp_path / name)
        assert np.array_equal(rows, small_bundle.tables[name])


def test_newer_schema_rejected(tmp_path):
    (tmp_path / "report.json").write_text(json.dumps({"schema_version": SCHEMA_VERSION + 1}))
    with pytest.raises(ConfigError):
        load_report(tmp_path)
    (tmp_path / "x.csv").write_text(f"# schema_version={SCHEMA_VERSION + 1}\na,b\n")
    with pytest.raises(ConfigError):
        read_plot_data(tmp_path / "x.csv")


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(IoFailure):
        emit_reports(ReportBundle.empty(), blocker / "sub")


def test_full_domain_bundle_passes():
    cfg = ExperimentConfig.from_dict({"generator": "grid_square", "params": {"n": 9, "full_domain": True}})
    b = run_experiment(cfg)
    assert b.passed
    heat = b.levels[0]["heat"]
    assert heat["ambient"]["band"] == heat["reflected"]["band"] and heat["kappa"]["value"] == 1.0


def test_default_path_config_is_quick():
    import time
    t = time.perf_counter()
    run_experiment(ExperimentConfig.from_dict({"generator": "path_interval", "params": {"N": 201}}))
    assert time.perf_counter() - t < 60


def test_variation_and_compare(small_bundle):
    assert variation([]) == 1.0 and variation([0, 0]) == 1.0
    assert variation([0, 1]) == float("inf") and variation([2, 1, 4]) == 4.0
    rep = small_bundle.report()
    diff = compare(rep, rep)
    assert diff and all(d["pass"] and d["change"] in (0.0, 1.0) for d in diff.values())
    assert compare({"levels": []}, rep) == {}


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def _write_config(tmp_path, data):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(data))
    return str(p)


def test_cli_check_and_config_errors(tmp_path, capsys):
    assert cli.main(["check", _write_config(tmp_path, SMALL)]) == 0
    assert json.loads(capsys.readouterr().out)["n_points"] == [65]
    assert cli.main(["check", _write_config(tmp_path, {"generator": "nope"})]) == 2
    assert cli.main(["check", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["check", _write_config(tmp_path, SMALL), "--max-points", "10"]) == 2
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == 2


def test_cli_env_cap(tmp_path, monkeypatch):
    monkeypatch.setenv("REFLEKT_MAX_POINTS", "20")
    assert cli.main(["check", _write_config(tmp_path, SMALL)]) == 2
    monkeypatch.setenv("REFLEKT_MAX_POINTS", "100")
    assert cli.main(["check", _write_config(tmp_path, SMALL)]) == 0


def test_cli_run_and_compare(tmp_path, capsys):
    cfg = _write_config(tmp_path, {**SMALL, "generator": "grid_square", "params": {"n": 9, "full_domain": True}})
    assert cli.main(["run", cfg, "--out", str(tmp_path / "a"), "--seed", "3"]) == 0
    rep = load_report(tmp_path / "a")
    assert rep["config"]["seed"] == 3 and rep["passed"]
    assert cli.main(["run", cfg, "--out", str(tmp_path / "b"), "--seed", "3"]) == 0
    assert cli.main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 0
    capsys.readouterr()
    # a failing flag maps to exit code 1
    strict = _write_config(tmp_path, {**SMALL, "thresholds": {"r_sweep": 1.0, "refinement": 2.0, "kappa": 3.0,
                                                              "kappa_drift": 0.5}})
    assert cli.main(["run", strict, "--out", str(tmp_path / "c")]) == 1
