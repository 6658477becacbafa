import csv
import json
import os

import numpy as np
import pytest

import cmd_experiment
import experiment
import utils
from conftest import sphere_mask
from utils import ConfigError
from volume import Volume

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")
SMOKE = os.path.join(CONFIG_DIR, "smoke.json")


def smoke_config(tmp_path, name="config.json", **experiment_overrides):
    with open(SMOKE, "r", encoding="utf-8") as f:
        config = json.load(f)
    config["experiment"].update(experiment_overrides)
    path = tmp_path / name
    path.write_text(json.dumps(config), encoding="utf-8")
    return str(path)


def read_rows(path):
    with open(path, "r", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def read_profile(path):
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert lines[0] == "x\tinput\tfiltered"
    return np.array([[float(c) for c in line.split("\t")] for line in lines[1:]])


def test_load_smoke_config():
    hps = experiment.load_config(SMOKE)
    data = experiment.data_config(hps)
    settings = experiment.experiment_settings(hps)
    assert data.template.shape == "sphere"
    assert data.n_train == 3 and data.n_val == 2
    assert settings.modes == ("dice", "dice+be")
    assert settings.seeds == (0,)


def test_shipped_configs_parse():
    for name in ("smoke.json", "boundary_enhancement.json", "lambda2_tuning.json", "baselines.json"):
        hps = experiment.load_config(os.path.join(CONFIG_DIR, name))
        experiment.data_config(hps)
        experiment.experiment_settings(hps)


def test_unknown_config_key(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"train": {"learning_rate": 0.1}}), encoding="utf-8")
    with pytest.raises(ConfigError, match="train.learning_rate"):
        experiment.run_experiment(str(path), str(tmp_path / "out"))
    assert cmd_experiment.main(["run", "-c", str(path), "-o", str(tmp_path / "out")]) == 1


def test_prepare_datasets_split():
    data = experiment.data_config(experiment.load_config(SMOKE))
    train_set, val_set = experiment.prepare_datasets(data)
    assert len(train_set) == 3 and len(val_set) == 2
    assert not {s.case_id for s in train_set} & {s.case_id for s in val_set}
    for s in train_set + val_set:
        assert set(np.unique(s.mask.data)) <= {0.0, 1.0}


def test_run_experiment_smoke(tmp_path):
    out = tmp_path / "run"
    report = experiment.run_experiment(smoke_config(tmp_path), str(out))

    assert list(report["modes"]) == ["dice", "dice+be"]
    assert len(report["rows"]) == 2 * 1 * 2
    assert report["modes"]["dice"]["lambda2"] == 0.0
    assert report["modes"]["dice+be"]["lambda2"] == 1000.0
    curves = report["modes"]["dice+be"]["loss_curves"]["0"]
    assert len(curves["steps"]) == 6
    assert {"dice", "be", "total"} <= set(curves["steps"][0])
    assert [v["epoch"] for v in curves["validation"]] == [1, 2]
    for block in report["modes"].values():
        assert set(block["summary"]) == {"dice", "asd_mm", "hd95_mm"}

    rows = read_rows(out / "metrics.csv")
    assert list(rows[0]) == list(experiment.CSV_FIELDS)
    assert len(rows) == 4
    assert [r["mode"] for r in rows] == ["dice", "dice", "dice+be", "dice+be"]
    for r in rows:
        assert 0.0 <= float(r["dice"]) <= 1.0
        assert len(r["asd_mm"].split(".")[1]) == 6

    with open(out / "report.json", "r", encoding="utf-8") as f:
        assert len(json.load(f)["rows"]) == 4
    assert (out / "config.json").is_file()
    assert (out / "train.log").is_file()
    case = rows[0]["case_id"]
    assert (out / "predictions" / "truth" / "{}.vol3".format(case)).is_file()
    assert (out / "predictions" / "dice+be" / "seed0" / "{}.vol3".format(case)).is_file()
    slices = sorted(os.listdir(out / "slices"))
    assert any(name.endswith("_filtered.pgm") for name in slices)
    assert any(name.endswith("_profile.txt") for name in slices)


def test_run_experiment_is_reproducible(tmp_path):
    config = smoke_config(tmp_path)
    experiment.run_experiment(config, str(tmp_path / "a"))
    experiment.run_experiment(config, str(tmp_path / "b"))
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_single_mode_config(tmp_path):
    report = experiment.run_experiment(smoke_config(tmp_path, modes=["dice"], export_slices=False),
                                       str(tmp_path / "out"))
    assert list(report["modes"]) == ["dice"]
    assert len(report["rows"]) == 2
    assert not (tmp_path / "out" / "slices").exists()


def test_lambda2_grid_selects_by_asd(tmp_path):
    out = tmp_path / "out"
    report = experiment.run_experiment(
        smoke_config(tmp_path, modes=["dice+be"], lambda2_grid=[10, 1000], export_slices=False), str(out))
    tuning = report["tuning"]["dice+be"]
    scores = tuning["lambda2_mean_asd_mm"]
    assert set(scores) == {"10", "1000"}
    chosen = tuning["chosen_lambda2"]
    assert scores[str(chosen)] == min(scores.values())
    assert report["modes"]["dice+be"]["lambda2"] == chosen
    assert len(report["rows"]) == 2
    mean_asd = float(np.mean([r["asd_mm"] for r in report["rows"]]))
    assert mean_asd == pytest.approx(scores[str(chosen)], rel=0, abs=1e-12)


def test_rederive_report_matches_run(tmp_path):
    out = tmp_path / "out"
    report = experiment.run_experiment(smoke_config(tmp_path, export_slices=False), str(out))
    original = (out / "metrics.csv").read_bytes()
    rederived = experiment.rederive_report(str(out))
    assert rederived["rows"] == report["rows"]
    assert (out / "metrics.csv").read_bytes() == original
    assert (out / "report_rederived.json").is_file()


def test_rederive_report_without_predictions(tmp_path):
    with pytest.raises(FileNotFoundError):
        experiment.rederive_report(str(tmp_path))


def test_filter_demo_sphere(tmp_path):
    # 27 * ones is filtered to exact zeros away from the surface
    path = str(tmp_path / "sphere.vol3")
    utils.write_volume(path, Volume(27.0 * sphere_mask(32, 8.0).data))
    paths = experiment.filter_demo(path, str(tmp_path / "demo" / "sphere"))
    assert set(paths) == {"input", "filtered", "profile"}

    image = utils.read_pgm(paths["input"])
    assert image.shape == (32, 32)
    assert image[16, 16] == 255 and image[0, 0] == 0

    filtered = utils.read_pgm(paths["filtered"])
    assert filtered[16, 16] == 128
    assert filtered[0, 0] == 128
    rows, cols = np.nonzero((filtered == 0) | (filtered == 255))
    assert rows.size > 0
    r = np.hypot(rows - 15.5, cols - 15.5)
    assert r.min() >= 4.0 and r.max() <= 12.0

    profile = read_profile(paths["profile"])
    assert profile.shape == (32, 3)
    assert list(profile[:, 0]) == list(range(32))


def test_filter_demo_zero_volume(tmp_path):
    path = str(tmp_path / "zero.vol3")
    utils.write_volume(path, Volume(np.zeros((9, 10, 11))))
    paths = experiment.filter_demo(path, str(tmp_path / "zero"))
    assert np.all(utils.read_pgm(paths["filtered"]) == 128)
    assert np.all(utils.read_pgm(paths["input"]) == 0)
    profile = read_profile(paths["profile"])
    assert np.all(profile[:, 2] == 0.0)


def test_filter_demo_step_edge_profile(tmp_path):
    data = np.zeros((32, 32, 32))
    data[:, :, :16] = 1.0
    path = str(tmp_path / "edge.vol3")
    utils.write_volume(path, Volume(data))
    profile = read_profile(experiment.filter_demo(path, str(tmp_path / "edge"))["profile"])
    filtered = profile[:, 2]
    assert filtered[15] < 0.0 < filtered[16]
    assert filtered[15] == pytest.approx(-1.0 / 27.0, abs=1e-6)
    assert filtered[16] == pytest.approx(1.0 / 27.0, abs=1e-6)
    assert np.all(filtered[20:28] == 0.0)
    assert np.all(np.abs(filtered[5:12]) < 1e-6)


def test_gradient_suite_passes():
    results = experiment.gradient_suite(seed=0)
    assert set(results) == {"soft_dice", "boundary_enhancement", "combined_loss", "focal_loss",
                            "distance_boundary_loss", "net_combined_lambda2_0", "net_combined_lambda2_1000"}
    for name, report in results.items():
        tol = cmd_experiment.LINEAR_GRADCHECK_TOL if name == "distance_boundary_loss" else cmd_experiment.GRADCHECK_TOL
        assert report.passed(tol), (name, report.max_rel_error)


def test_cli_gradcheck(capsys):
    assert cmd_experiment.main(["gradcheck", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "soft_dice" in out and "FAILED" not in out


def test_cli_filter(tmp_path):
    path = str(tmp_path / "sphere.vol3")
    utils.write_volume(path, sphere_mask(16, 4.0))
    assert cmd_experiment.main(["filter", "-v", path, "-o", str(tmp_path / "f" / "sphere")]) == 0
    assert (tmp_path / "f" / "sphere_filtered.pgm").is_file()


def test_cli_filter_bad_input(tmp_path):
    assert cmd_experiment.main(["filter", "-v", str(tmp_path / "missing.vol3"), "-o", str(tmp_path / "x")]) == 1
    bad = tmp_path / "bad.vol3"
    bad.write_bytes(b"NOTAVOL3" + bytes(40))
    assert cmd_experiment.main(["filter", "-v", str(bad), "-o", str(tmp_path / "x")]) == 1


def test_cli_phantom(tmp_path):
    out = tmp_path / "phantoms"
    assert cmd_experiment.main(["phantom", "-c", SMOKE, "-o", str(out)]) == 0
    with open(out / "phantoms.json", "r", encoding="utf-8") as f:
        manifest = json.load(f)
    assert len(manifest) == 5
    for entry in manifest:
        image = utils.read_volume(str(out / "{}_image.vol3".format(entry["case_id"])))
        mask = utils.read_volume(str(out / "{}_mask.vol3".format(entry["case_id"])))
        assert image.dims == mask.dims == (20, 20, 20)


def test_cli_train_eval_report(tmp_path):
    out = str(tmp_path / "out")
    assert cmd_experiment.main(["train", "-c", SMOKE, "-o", out, "-m", "dice", "-s", "0"]) == 0
    assert os.path.isfile(os.path.join(out, "dice_seed0.pth"))
    assert os.path.isfile(os.path.join(out, "dice_seed0_history.json"))

    assert cmd_experiment.main(["eval", "-c", SMOKE, "-o", out, "-m", "dice", "-s", "0"]) == 0
    evaluated = os.path.join(out, "metrics_dice_seed0.csv")
    assert len(read_rows(evaluated)) == 2

    assert cmd_experiment.main(["report", "-o", out]) == 0
    with open(evaluated, "rb") as a, open(os.path.join(out, "metrics.csv"), "rb") as b:
        assert a.read() == b.read()


def test_cli_eval_missing_checkpoint(tmp_path):
    out = str(tmp_path / "out")
    assert cmd_experiment.main(["eval", "-c", SMOKE, "-o", out, "--checkpoint",
                                str(tmp_path / "none.pth")]) == 1


def test_cli_run_mode_and_seed_overrides(tmp_path):
    out = tmp_path / "out"
    config = smoke_config(tmp_path, export_slices=False)
    assert cmd_experiment.main(["run", "-c", config, "-o", str(out), "-m", "dice+be", "-m", "dice", "-s", "1"]) == 0
    rows = read_rows(out / "metrics.csv")
    assert [r["mode"] for r in rows] == ["dice+be", "dice+be", "dice", "dice"]
    assert {r["seed"] for r in rows} == {"1"}
    with open(out / "config.json", "r", encoding="utf-8") as f:
        echoed = json.load(f)["experiment"]
    assert echoed["modes"] == ["dice+be", "dice"]
    assert echoed["seeds"] == [1]
    assert (out / "predictions" / "dice" / "seed1").is_dir()

    assert cmd_experiment.main(["report", "-o", str(out)]) == 0
    assert [r["mode"] for r in read_rows(out / "metrics.csv")] == ["dice+be", "dice+be", "dice", "dice"]


def test_cli_run_rejects_unknown_mode(tmp_path):
    with pytest.raises(SystemExit):
        cmd_experiment.main(["run", "-c", SMOKE, "-o", str(tmp_path / "out"), "-m", "dice+bce"])


@pytest.mark.slow
def test_standard_experiment(tmp_path):
    out = tmp_path / "be"
    report = experiment.run_experiment(os.path.join(CONFIG_DIR, "boundary_enhancement.json"), str(out))
    assert len(report["rows"]) == 2 * 3 * 8
    assert len(read_rows(out / "metrics.csv")) == 48


@pytest.mark.slow
def test_boundary_term_improves_surface_distance(tmp_path):
    report = experiment.run_experiment(os.path.join(CONFIG_DIR, "lambda2_tuning.json"), str(tmp_path / "tuned"))
    dice_only = report["modes"]["dice"]["summary"]
    with_be = report["modes"]["dice+be"]["summary"]
    assert with_be["asd_mm"]["mean"] <= dice_only["asd_mm"]["mean"]
    assert with_be["dice"]["mean"] >= dice_only["dice"]["mean"] - 0.02
