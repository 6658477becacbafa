"""Experiment pipeline: seeded phantom data, one model per loss mode and seed,
scanning-window validation, JSON/CSV reports and slice exports."""
import os
import csv
import json
import logging
import dataclasses
from dataclasses import dataclass, replace

import numpy as np

import commons
import utils
from data_utils import split_dataset
from filtering import BeFilter, be_filter_apply
from geometry import evaluate_masks, signed_distance_map
from inference import evaluate_case
from losses import (
    LossWeights,
    boundary_enhancement,
    check_gradient,
    combined_loss,
    distance_boundary_loss,
    focal_loss,
    soft_dice,
)
from models import TinyConvNet, check_parameter_gradient
from phantoms import PhantomSpec, generate_dataset
from preprocess import preprocess_sample
from train import TrainConfig, train
from volume import Volume, threshold

logger = logging.getLogger(__name__)

CSV_FIELDS = ("case_id", "mode", "seed", "dice", "hd95_mm", "asd_mm")
EVAL_THRESHOLD = 0.5


@dataclass(frozen=True)
class DataConfig:
    template: PhantomSpec = PhantomSpec(shape="blob", radii=(6.0, 6.0, 6.0), center=(15.5, 15.5, 15.5),
                                        fuzz_sigma=2.0, noise_sigma=0.05, blob_amplitude=0.1)
    n_train: int = 20
    n_val: int = 8
    dataset_seed: int = 7
    radius_jitter: float = 0.25
    center_jitter: float = 2.0
    normalization: str = "percentile"
    target_spacing: float = 1.0


@dataclass(frozen=True)
class ExperimentSettings:
    modes: tuple = ("dice", "dice+be")
    seeds: tuple = (0, 1, 2)
    lambda2_grid: tuple = ()
    save_predictions: bool = True
    export_slices: bool = True
    tensorboard: bool = False


def _fields(cls):
    return {f.name: None for f in dataclasses.fields(cls)}


CONFIG_SCHEMA = {
    "train": _fields(TrainConfig),
    "data": dict(_fields(DataConfig), template=_fields(PhantomSpec)),
    "experiment": _fields(ExperimentSettings),
}


def load_config(config_path):
    return utils.get_hparams_from_file(config_path, CONFIG_SCHEMA)


def data_config(hps):
    section = hps.get("data")
    if section is None:
        return DataConfig()
    values = {k: v for k, v in section.items() if k != "template"}
    if "template" in section:
        values["template"] = PhantomSpec(**section.template.to_dict())
    return DataConfig(**values)


def experiment_settings(hps):
    section = hps.get("experiment")
    if section is None:
        return ExperimentSettings()
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    return ExperimentSettings(**values)


def prepare_datasets(data):
    samples = generate_dataset(data.n_train + data.n_val, data.template, data.dataset_seed,
                               data.radius_jitter, data.center_jitter)
    samples = [preprocess_sample(s, data.normalization, data.target_spacing) for s in samples]
    return split_dataset(samples, data.n_val, data.dataset_seed)


def history_to_json(history):
    validation = []
    for entry in history["validation"]:
        row = {k: v for k, v in entry.items() if k != "cases"}
        row["cases"] = [r.as_dict() for r in entry["cases"]]
        validation.append(row)
    return {"steps": history["steps"], "validation": validation}


def _summary(rows):
    out = {}
    for key in ("dice", "asd_mm", "hd95_mm"):
        mean, std = commons.mean_std([r[key] for r in rows])
        out[key] = {"mean": mean, "std": std}
    return out


def write_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in rows:
            writer.writerow([r["case_id"], r["mode"], r["seed"],
                             "{:.6f}".format(r["dice"]), "{:.6f}".format(r["hd95_mm"]),
                             "{:.6f}".format(r["asd_mm"])])


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def prediction_path(out_dir, mode, seed, case_id):
    return os.path.join(out_dir, "predictions", mode, "seed{}".format(seed), "{}.vol3".format(case_id))


def save_predictions(out_dir, mode, seed, cases):
    for case_id, prob in cases:
        path = prediction_path(out_dir, mode, seed, case_id)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        utils.write_volume(path, prob)


def _make_writer(out_dir, config):
    from torch.utils.tensorboard import SummaryWriter
    name = "{}_lambda2_{:g}_seed{}".format(config.mode, config.lambda2, config.seed)
    return SummaryWriter(log_dir=os.path.join(out_dir, "tensorboard", name))


def run_single(train_set, val_set, config, out_dir=None, settings=None):
    """Train one model, then evaluate every validation case by scanning-window inference.

    Returns (net, history, rows, probs) with probs as [(case_id, Volume)].
    """
    settings = settings or ExperimentSettings()
    writer = _make_writer(out_dir, config) if out_dir and settings.tensorboard else None
    try:
        net, history = train(train_set, config, val_set, writer=writer)
    finally:
        if writer is not None:
            writer.close()
    rows, probs = [], []
    for s in val_set:
        prob, record = evaluate_case(net, s, config.window_size, config.window_overlap, EVAL_THRESHOLD)
        probs.append((s.case_id, prob))
        rows.append(dict(record.as_dict(), mode=config.mode, seed=config.seed))
    return net, history, rows, probs


def run_experiment(config_path, out_dir, modes=None, seeds=None):
    """Everything the report needs, derived only from the config document.

    `modes` / `seeds` replace experiment.modes / experiment.seeds; the echoed
    config.json records the values actually run.
    """
    hps = load_config(config_path)
    settings = experiment_settings(hps)
    if modes:
        settings = replace(settings, modes=tuple(modes))
    if seeds:
        settings = replace(settings, seeds=tuple(seeds))
    echo = hps.to_dict()
    echo.setdefault("experiment", {}).update(modes=list(settings.modes), seeds=list(settings.seeds))
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "config.json"), echo)
    run_logger = utils.get_logger(out_dir)
    data = data_config(hps)
    base = TrainConfig.from_hparams(hps.get("train"))

    train_set, val_set = prepare_datasets(data)
    run_logger.info("dataset: %d train / %d validation phantoms", len(train_set), len(val_set))
    if settings.save_predictions:
        for s in val_set:
            path = os.path.join(out_dir, "predictions", "truth", "{}.vol3".format(s.case_id))
            os.makedirs(os.path.dirname(path), exist_ok=True)
            utils.write_volume(path, s.mask)

    report = {"config": hps.to_dict(), "modes": {}, "tuning": {}, "rows": []}
    for mode in settings.modes:
        candidates = [None]
        if mode == "dice+be" and settings.lambda2_grid:
            candidates = list(settings.lambda2_grid)
        runs = {}
        for lambda2 in candidates:
            runs[lambda2] = []
            for seed in settings.seeds:
                config = replace(base, mode=mode, seed=int(seed),
                                 lambda2=base.lambda2 if lambda2 is None else float(lambda2))
                run_logger.info("mode %s seed %d lambda2 %s", mode, seed, config.lambda2)
                _, history, rows, probs = run_single(train_set, val_set, config, out_dir, settings)
                runs[lambda2].append((int(seed), history, rows, probs))
        if len(candidates) > 1:
            scores = {lam: float(np.mean([r["asd_mm"] for _, _, rows, _ in runs[lam] for r in rows]))
                      for lam in candidates}
            chosen = min(candidates, key=lambda lam: (scores[lam], lam))
            report["tuning"][mode] = {"lambda2_mean_asd_mm": {str(k): v for k, v in scores.items()},
                                      "chosen_lambda2": chosen}
            run_logger.info("mode %s: lambda2 %s selected by validation ASD", mode, chosen)
        else:
            chosen = candidates[0]
        mode_rows = [r for _, _, rows, _ in runs[chosen] for r in rows]
        if settings.save_predictions:
            for seed, _, _, probs in runs[chosen]:
                save_predictions(out_dir, mode, seed, probs)
        report["modes"][mode] = {
            "summary": _summary(mode_rows),
            "lambda2": replace(base, mode=mode).weights.lambda2 if chosen is None else chosen,
            "loss_curves": {str(seed): history_to_json(history) for seed, history, _, _ in runs[chosen]},
        }
        report["rows"].extend(mode_rows)

    write_json(os.path.join(out_dir, "report.json"), report)
    write_csv(os.path.join(out_dir, "metrics.csv"), report["rows"])
    if settings.export_slices and val_set:
        mask_path = os.path.join(out_dir, "slices", "{}_mask.vol3".format(val_set[0].case_id))
        os.makedirs(os.path.dirname(mask_path), exist_ok=True)
        utils.write_volume(mask_path, val_set[0].mask)
        filter_demo(mask_path, os.path.join(out_dir, "slices", val_set[0].case_id))
    for mode, block in report["modes"].items():
        s = block["summary"]
        run_logger.info("%s: dice %.4f +- %.4f  asd %.4f +- %.4f  hd95 %.4f +- %.4f", mode,
                        s["dice"]["mean"], s["dice"]["std"], s["asd_mm"]["mean"], s["asd_mm"]["std"],
                        s["hd95_mm"]["mean"], s["hd95_mm"]["std"])
    return report


def _mode_order(out_dir, found):
    """Modes in the order the saved config lists them; anything else sorted after."""
    path = os.path.join(out_dir, "config.json")
    listed = []
    if os.path.isfile(path):
        with open(path, "r", encoding="utf-8") as f:
            listed = json.load(f).get("experiment", {}).get("modes", [])
    ordered = [m for m in listed if m in found]
    return ordered + sorted(m for m in found if m not in ordered)


def rederive_report(out_dir):
    """Recompute metrics.csv / report rows from saved probability volumes."""
    root = os.path.join(out_dir, "predictions")
    truth_dir = os.path.join(root, "truth")
    if not os.path.isdir(truth_dir):
        raise FileNotFoundError("no saved ground truth under {}".format(truth_dir))
    found = [d for d in os.listdir(root) if d != "truth" and os.path.isdir(os.path.join(root, d))]
    rows = []
    for mode in _mode_order(out_dir, found):
        for seed_dir in sorted(os.listdir(os.path.join(root, mode)), key=lambda d: int(d[len("seed"):])):
            seed = int(seed_dir[len("seed"):])
            for name in sorted(os.listdir(os.path.join(root, mode, seed_dir))):
                case_id = name[:-len(".vol3")]
                prob = utils.read_volume(os.path.join(root, mode, seed_dir, name))
                truth = utils.read_volume(os.path.join(truth_dir, name))
                record = evaluate_masks(threshold(prob, EVAL_THRESHOLD), truth, case_id)
                rows.append(dict(record.as_dict(), mode=mode, seed=seed))
    modes = list(dict.fromkeys(r["mode"] for r in rows))
    report = {"modes": {m: {"summary": _summary([r for r in rows if r["mode"] == m])} for m in modes},
              "rows": rows}
    write_json(os.path.join(out_dir, "report_rederived.json"), report)
    write_csv(os.path.join(out_dir, "metrics.csv"), rows)
    return report


def filter_demo(volume_path, out_prefix, be=None):
    """Central axial slice before/after the boundary-enhancement filter, plus a 1D profile."""
    be = be or BeFilter.create()
    v = utils.read_volume(volume_path)
    filtered = be_filter_apply(be, v)
    nz, ny, nx = v.data.shape
    mid = nz // 2
    paths = {"input": out_prefix + "_input.pgm",
             "filtered": out_prefix + "_filtered.pgm",
             "profile": out_prefix + "_profile.txt"}
    parent = os.path.dirname(out_prefix)
    if parent:
        os.makedirs(parent, exist_ok=True)
    utils.write_pgm(paths["input"], utils.scale_to_uint8(v.data[mid]))
    utils.write_pgm(paths["filtered"], utils.scale_to_uint8(filtered.data[mid], signed=True))
    with open(paths["profile"], "w", encoding="utf-8") as f:
        f.write("x\tinput\tfiltered\n")
        for x in range(nx):
            f.write("{}\t{:.6f}\t{:.6f}\n".format(x, v.data[mid, ny // 2, x], filtered.data[mid, ny // 2, x]))
    return paths


def _random_case(seed, n=8):
    rng = commons.make_rng(seed, 0x6763)
    shape = (n, n, n)
    pred = Volume(rng.uniform(0.05, 0.95, shape))
    target = np.zeros(shape)
    target[2:6, 2:6, 1:7] = 1.0
    target = Volume(np.where(rng.random(shape) < 0.1, 1.0 - target, target))
    return pred, target


def gradient_suite(seed=0, samples=50):
    """Max relative errors of every analytical gradient against central differences."""
    pred, target = _random_case(seed)
    phi = signed_distance_map(target)
    be = BeFilter.create()
    heavy = LossWeights(1.0, 1000.0)
    results = {
        "soft_dice": check_gradient(soft_dice, pred, target, samples=samples, seed=seed),
        "boundary_enhancement": check_gradient(lambda p, t: boundary_enhancement(p, t, be), pred, target,
                                               samples=samples, seed=seed),
        "combined_loss": check_gradient(lambda p, t: combined_loss(p, t, heavy, be), pred, target,
                                        samples=samples, seed=seed),
        "focal_loss": check_gradient(focal_loss, pred, target, samples=samples, seed=seed),
        # linear in the prediction: a wide step has no truncation error and less rounding noise
        "distance_boundary_loss": check_gradient(lambda p, t: distance_boundary_loss(p, t, phi), pred, target,
                                                 samples=samples, seed=seed, step=1e-3),
    }
    image = Volume(commons.make_rng(seed, 0x696d).normal(size=(8, 8, 8)))
    net = TinyConvNet(hidden_channels=4, init_seed=seed)
    for lambda2 in (0.0, 1000.0):
        w = LossWeights(1.0, lambda2)
        results["net_combined_lambda2_{:g}".format(lambda2)] = check_parameter_gradient(
            net, image, target, lambda p, t: combined_loss(p, t, w, be), samples=samples, seed=seed)
    return results
