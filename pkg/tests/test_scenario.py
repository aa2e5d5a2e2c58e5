import copy
import json
import shutil

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from dprom.cli import main
from dprom.exceptions import ConfigurationError
from dprom.scenario import (StageError, TimingReport, compare_runs, load_scenario,
                            run_scenario, snapshot_key, validate_scenario)

SMALL = {
    "name": "small",
    "seed": 3,
    "mesh": {"type": "beam", "lx": 1.0, "ty": 0.05, "nx": 8, "ny": 1, "thickness": 0.1},
    "material": "aluminium",
    "defects": [{"type": "arch_sine"}],
    "basis": {"vibration_modes": 3},
    "damping": {"quality_factors": [100, 100]},
    "probes": [{"name": "mid_v", "point": [0.5, 0.025], "component": 1}],
    "models": ["ROM-d", "N1", "FOM-d"],
    "xi_grid": [0.0, 0.5],
    "analyses": [
        {"type": "modal", "modes": 2},
        {"type": "frf", "harmonics": 3, "force": {"probe": "mid_v", "amplitude": 200.0},
         "range": [0.9, 1.1], "normalize": 0.05},
        {"type": "backbone", "harmonics": 3, "probe": "mid_v", "amplitude": [1e-4, 1e-2]},
    ],
}


def _write(tmp_path, raw, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    scn = validate_scenario(copy.deepcopy(SMALL))
    return run_scenario(scn, root / "a"), scn, root


class TestValidation:
    @pytest.mark.parametrize("mutate,match", [
        (lambda r: r.pop("mesh"), "mesh"),
        (lambda r: r.update(defects=[]), "defect"),
        (lambda r: r.update(xi_grid=[[0.0, 1.0]]), "amplitude"),
        (lambda r: r.update(xi_grid=[]), "xi_grid"),
        (lambda r: r.update(models=["N1", "N1"]), "duplicate"),
        (lambda r: r.update(models=["Exact"]), "FOM-d"),
        (lambda r: r.update(models=["N7"]), "variant"),
        (lambda r: r["analyses"].append({"type": "sweep"}), "analysis type"),
        (lambda r: r["analyses"].append({"type": "static"}), "needs a force"),
        (lambda r: r["analyses"][1]["force"].update(probe="tip"), "tip"),
        (lambda r: r["analyses"][2].update(probe="tip"), "backbone"),
        (lambda r: r["mesh"].update(type="sphere"), "mesh.type"),
    ])
    def test_rejected(self, mutate, match):
        raw = copy.deepcopy(SMALL)
        mutate(raw)
        with pytest.raises(ConfigurationError, match=match):
            validate_scenario(raw)

    def test_missing_and_malformed_files(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_scenario(tmp_path / "none.yaml")
        (tmp_path / "bad.yaml").write_text("mesh: [unclosed\n")
        with pytest.raises(ConfigurationError, match="YAML"):
            load_scenario(tmp_path / "bad.yaml")

    def test_shipped_configs_are_valid(self):
        from pathlib import Path

        configs = Path(__file__).parents[1] / "configs"
        scn = load_scenario(configs / "beam_arch.yaml")
        assert scn.m_d == 1 and scn.dprom_variants == ["N1", "N0"]
        scn = load_scenario(configs / "gyro_wall_angle.yaml")
        assert scn.m_d == 2 and scn.dprom_variants == ["N1", "N1-v"]

    def test_snapshot_key_ignores_simulation_settings(self):
        a = validate_scenario(copy.deepcopy(SMALL))
        raw = copy.deepcopy(SMALL)
        raw["xi_grid"] = [0.1]
        raw["analyses"] = raw["analyses"][:1]
        b = validate_scenario(raw)
        assert snapshot_key(a, "N1") == snapshot_key(b, "N1") != snapshot_key(a, "N0")
        assert a.config_hash != b.config_hash


class TestRun:
    def test_artifacts(self, small_run):
        res, scn, _ = small_run
        out = res.out_dir
        man = json.loads((out / "manifest.json").read_text())
        assert man["config_hash"] == scn.config_hash and man["seed"] == 3
        assert sorted(man["artifacts"]) == ["FOM-d", "N1", "ROM-d"]
        # the full model runs the modal analysis only
        assert man["artifacts"]["FOM-d"]["0"] == ["xi0_modal.csv"]
        assert man["artifacts"]["N1"]["1"] == ["xi1_modal.csv", "xi1_frf.csv", "xi1_backbone.csv"]
        head = (out / "results" / "N1" / "xi1_frf.csv").read_text().splitlines()[0]
        assert head == "Omega_rad_s,f_Hz,mid_v_h1"
        info = json.loads((out / "results" / "N1" / "xi1_frf.json").read_text())
        assert info["xi"] == [0.5] and info["H"] == 3 and "seconds" not in info["solver"]
        ref = json.loads((out / "reference.json").read_text())["omega1_fom_d"]
        assert set(ref) == {"0", "1"}

    def test_frequencies_close_to_reference(self, small_run):
        res, _, _ = small_run
        ref = json.loads((res.out_dir / "reference.json").read_text())["omega1_fom_d"]
        for model in ("N1", "ROM-d"):
            for k in ("0", "1"):
                rows = (res.out_dir / "results" / model / f"xi{k}_modal.csv").read_text()
                w1 = float(rows.splitlines()[1].split(",")[1])
                np.testing.assert_allclose(w1, ref[k], rtol=2e-2)

    def test_timing_bookkeeping(self, small_run):
        res, _, _ = small_run
        t = res.timing
        assert t.count("N1", "tensors") == 1 and t.count("N1", "simulation") == 2
        assert t.count("ROM-d", "basis") == 2 and t.count("ROM-d", "tensors") == 2
        summary = json.loads((res.out_dir / "timing.json").read_text())["summary"]
        assert "break_even" in summary["N1"]

    def test_rerun_reuses_snapshot_and_is_deterministic(self, small_run, caplog):
        res, scn, root = small_run
        with caplog.at_level("INFO"):
            res2 = run_scenario(scn, root / "b", snapshot=res.out_dir / "snapshots")
        assert res2.snapshot_hits == ["N1"]
        assert "snapshot hit" in caplog.text
        assert res2.timing.count("N1", "tensors") == 0
        for model, per in res.artifacts.items():
            for k, files in per.items():
                for f in files:
                    a = (res.out_dir / "results" / model / f).read_bytes()
                    assert a == (res2.out_dir / "results" / model / f).read_bytes()

    def test_stage_failure_writes_error_file(self, tmp_path):
        raw = copy.deepcopy(SMALL)
        raw["models"] = ["N1"]
        raw["analyses"] = [{"type": "static", "force": {"probe": "mid_v", "amplitude": 1e15}}]
        with pytest.raises(StageError) as exc:
            run_scenario(validate_scenario(raw), tmp_path)
        err = json.loads((tmp_path / "error.json").read_text())
        assert err["stage"].startswith("simulate N1") and exc.value.stage == err["stage"]
        assert err["type"] == "ConvergenceError"


class TestCompare:
    def test_identical_runs_have_zero_deltas(self, small_run, tmp_path):
        res, _, root = small_run
        b = tmp_path / "copy"
        shutil.copytree(res.out_dir, b)
        rows = compare_runs([res.out_dir, b], tmp_path / "cmp")
        same = [r for r in rows if r["model_a"].split("/")[1] == r["model_b"].split("/")[1]]
        assert same
        for r in same:
            for k, v in r.items():
                if k.startswith("d_"):
                    assert v == 0.0
        assert (tmp_path / "cmp" / "aligned.csv").exists()
        assert (tmp_path / "cmp" / "comparison.csv").read_text().startswith("analysis,")

    def test_models_within_one_run(self, small_run):
        rows = compare_runs([small_run[0].out_dir])
        frf = [r for r in rows if r["analysis"] == "frf" and r["xi_index"] == "0"]
        assert len(frf) == 1 and abs(frf[0]["d_peak_freq_rel"]) < 1e-2

    def test_probe_mismatch(self, small_run, tmp_path):
        b = tmp_path / "other"
        shutil.copytree(small_run[0].out_dir, b)
        p = b / "results" / "N1" / "xi0_frf.csv"
        p.write_text(p.read_text().replace("mid_v_h1", "tip_h1", 1))
        with pytest.raises(ConfigurationError, match="probe mismatch"):
            compare_runs([small_run[0].out_dir, b])

    def test_not_a_run(self, tmp_path):
        with pytest.raises(ConfigurationError):
            compare_runs([tmp_path])


class TestCli:
    def test_check(self, capsys):
        assert main(["check"]) == 0
        assert capsys.readouterr().out.count("PASS") == 5

    def test_invalid_config_exits_2(self, tmp_path, capsys):
        raw = copy.deepcopy(SMALL)
        raw["models"] = []
        assert main(["run", "--config", str(_write(tmp_path, raw))]) == 2
        assert json.loads(capsys.readouterr().err)["stage"] == "config"

    def test_build_then_run_then_compare(self, tmp_path, capsys):
        raw = copy.deepcopy(SMALL)
        raw["models"] = ["N1", "N0"]
        raw["xi_grid"] = [0.5]
        raw["analyses"] = raw["analyses"][:2]
        cfg = _write(tmp_path, raw)
        out = tmp_path / "run"
        assert main(["build", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["build", "--config", str(cfg), "--out", str(out)]) == 0
        assert capsys.readouterr().out.count("reused") == 2
        assert main(["run", "--config", str(cfg), "--out", str(out), "--jobs", "2"]) == 0
        assert main(["compare", str(out), "--out", str(tmp_path / "cmp")]) == 0
        text = capsys.readouterr().out
        assert "N1 vs N0" in text or "N0 vs N1" in text

    def test_stage_failure_exits_1(self, tmp_path):
        raw = copy.deepcopy(SMALL)
        raw["models"] = ["N1"]
        raw["analyses"] = [{"type": "static", "force": {"probe": "mid_v", "amplitude": 1e15}}]
        assert main(["run", "--config", str(_write(tmp_path, raw)),
                     "--out", str(tmp_path / "o")]) == 1
        assert (tmp_path / "o" / "error.json").exists()

    def test_bad_jobs(self, tmp_path):
        assert main(["run", "--config", str(_write(tmp_path, SMALL)), "--jobs", "0"]) == 2

    def test_default_out_dir_uses_environment(self, tmp_path, monkeypatch):
        raw = copy.deepcopy(SMALL)
        raw["models"] = ["N1"]
        raw["xi_grid"] = [0.0]
        raw["analyses"] = raw["analyses"][:1]
        monkeypatch.setenv("DPROM_OUT", str(tmp_path / "env"))
        assert main(["run", "--config", str(_write(tmp_path, raw))]) == 0
        assert (tmp_path / "env" / "small" / "manifest.json").exists()


_durations = st.lists(st.one_of(st.just(0.0), st.floats(1e-3, 10.0)), min_size=1, max_size=5)


@settings(max_examples=50, deadline=None)
@given(_durations, _durations, _durations, _durations)
def test_break_even_formula(shared, tensors, sim, romd):
    t = TimingReport()
    for x in shared:
        t.add("DpROM-shared", "basis", x)
    for x in tensors:
        t.add("N1", "tensors", x)
    for x in sim:
        t.add("N1", "simulation", x)
    for x in romd:
        t.add("ROM-d", "simulation", x)
        t.add("ROM-d", "basis", x)
    overhead = sum(shared) + sum(tensors)
    np.testing.assert_allclose(t.overhead("N1"), overhead)
    gain = 2 * sum(romd) / len(romd) - sum(sim) / len(sim)
    be = t.break_even("N1")
    if gain <= 0:
        assert be == float("inf")
    else:
        np.testing.assert_allclose(be, overhead / gain, rtol=1e-9)
        # past break-even the DpROM total is the cheaper one
        n = int(np.ceil(be)) + 1
        assert overhead + n * sum(sim) / len(sim) <= n * 2 * sum(romd) / len(romd) + 1e-9
    assert t.overhead("ROM-d") == 0.0


def test_negative_duration_rejected():
    with pytest.raises(ValueError):
        TimingReport().add("N1", "simulation", -1.0)
