"""Command line entry for the boundary-enhancement toolkit.

Usage

python cmd_experiment.py run -c configs/boundary_enhancement.json -o output/be
python cmd_experiment.py phantom -c configs/smoke.json -o output/phantoms
python cmd_experiment.py train -c configs/smoke.json -o output/smoke --mode dice+be --seed 1
python cmd_experiment.py eval -c configs/smoke.json -o output/smoke --mode dice+be --seed 1
python cmd_experiment.py report -o output/smoke
python cmd_experiment.py filter -v output/phantoms/case000_mask.vol3 -o output/filter/case000
python cmd_experiment.py gradcheck --seed 0
"""
import os
import sys
import json
import argparse
import logging
import dataclasses
from dataclasses import replace

import utils
import experiment
from inference import evaluate_case
from models import TinyConvNet
from phantoms import generate_dataset
from train import LOSS_MODES, NonFiniteLossError, TrainConfig, train

logger = logging.getLogger("cmd_experiment")

GRADCHECK_TOL = 1e-4
# the distance loss is linear in the prediction, so differences are exact up to rounding
LINEAR_GRADCHECK_TOL = 1e-8


def _train_config(args, hps):
    return TrainConfig.from_hparams(hps.get("train"), mode=args.mode, seed=args.seed)


def _checkpoint_path(args, config):
    if getattr(args, "checkpoint", None):
        return args.checkpoint
    return os.path.join(args.out, "{}_seed{}.pth".format(config.mode, config.seed))


def cmd_phantom(args):
    hps = experiment.load_config(args.config)
    data = experiment.data_config(hps)
    seed = data.dataset_seed if args.seed is None else args.seed
    samples = generate_dataset(data.n_train + data.n_val, data.template, seed,
                               data.radius_jitter, data.center_jitter)
    os.makedirs(args.out, exist_ok=True)
    manifest = []
    for s in samples:
        utils.write_volume(os.path.join(args.out, "{}_image.vol3".format(s.case_id)), s.image)
        utils.write_volume(os.path.join(args.out, "{}_mask.vol3".format(s.case_id)), s.mask)
        manifest.append(dict(dataclasses.asdict(s.spec), case_id=s.case_id))
    experiment.write_json(os.path.join(args.out, "phantoms.json"), manifest)
    logger.info("wrote %d phantoms to %s", len(samples), args.out)
    return 0


def cmd_train(args):
    hps = experiment.load_config(args.config)
    config = _train_config(args, hps)
    train_set, val_set = experiment.prepare_datasets(experiment.data_config(hps))
    os.makedirs(args.out, exist_ok=True)
    utils.get_logger(args.out)
    net, history = train(train_set, config, val_set, progress=True)
    utils.save_checkpoint(net, len(history["steps"]), _checkpoint_path(args, config),
                          dataclasses.asdict(config))
    experiment.write_json(os.path.join(args.out, "{}_seed{}_history.json".format(config.mode, config.seed)),
                          experiment.history_to_json(history))
    return 0


def cmd_eval(args):
    hps = experiment.load_config(args.config)
    config = _train_config(args, hps)
    net, step, saved = utils.load_checkpoint(_checkpoint_path(args, config), TinyConvNet)
    if saved:
        config = replace(config, mode=saved["mode"], seed=saved["seed"])
    _, val_set = experiment.prepare_datasets(experiment.data_config(hps))
    rows = []
    for s in val_set:
        prob, record = evaluate_case(net, s, config.window_size, config.window_overlap, experiment.EVAL_THRESHOLD)
        experiment.save_predictions(args.out, config.mode, config.seed, [(s.case_id, prob)])
        truth = os.path.join(args.out, "predictions", "truth", "{}.vol3".format(s.case_id))
        os.makedirs(os.path.dirname(truth), exist_ok=True)
        utils.write_volume(truth, s.mask)
        rows.append(dict(record.as_dict(), mode=config.mode, seed=config.seed))
        logger.info("%s dice %.4f hd95 %.4f asd %.4f", s.case_id, record.dice, record.hausdorff95_mm,
                    record.avg_surface_dist_mm)
    experiment.write_csv(os.path.join(args.out, "metrics_{}_seed{}.csv".format(config.mode, config.seed)), rows)
    logger.info("evaluated checkpoint from step %d on %d cases", step, len(rows))
    return 0


def cmd_filter(args):
    paths = experiment.filter_demo(args.volume, args.out)
    for k, p in paths.items():
        logger.info("%s -> %s", k, p)
    return 0


def cmd_gradcheck(args):
    results = experiment.gradient_suite(seed=args.seed or 0)
    failed = 0
    for name, report in results.items():
        tol = LINEAR_GRADCHECK_TOL if name == "distance_boundary_loss" else GRADCHECK_TOL
        ok = report.passed(tol)
        failed += not ok
        print("{:<32s} max_rel_error {:.3e}  {}".format(name, report.max_rel_error, "ok" if ok else "FAILED"))
    return 1 if failed else 0


def cmd_report(args):
    report = experiment.rederive_report(args.out)
    print(json.dumps({m: b["summary"] for m, b in report["modes"].items()}, indent=2, sort_keys=True))
    return 0


def cmd_run(args):
    report = experiment.run_experiment(args.config, args.out, modes=args.mode, seeds=args.seed)
    logger.info("%d result rows written to %s", len(report["rows"]), args.out)
    return 0


COMMANDS = {
    "phantom": cmd_phantom,
    "train": cmd_train,
    "eval": cmd_eval,
    "filter": cmd_filter,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
    "run": cmd_run,
}


def get_parser():
    parser = argparse.ArgumentParser(description='boundary enhancement loss experiments')
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument('-o', '--out', type=str, default="output", help='output directory or prefix')
        if name in ("phantom", "train", "eval", "gradcheck"):
            p.add_argument('-s', '--seed', type=int, default=None, help='seed override')
        if name in ("phantom", "train", "eval", "run"):
            p.add_argument('-c', '--config', type=str, default="configs/boundary_enhancement.json",
                           help='JSON config path')
        if name in ("train", "eval"):
            p.add_argument('-m', '--mode', type=str, default=None, choices=LOSS_MODES, help='loss mode')
        if name == "run":
            p.add_argument('-s', '--seed', type=int, action="append", default=None,
                           help='seed to run instead of experiment.seeds (repeatable)')
            p.add_argument('-m', '--mode', type=str, action="append", default=None, choices=LOSS_MODES,
                           help='loss mode to run instead of experiment.modes (repeatable)')
        if name == "eval":
            p.add_argument('--checkpoint', type=str, default=None, help='checkpoint path')
        if name == "filter":
            p.add_argument('-v', '--volume', type=str, required=True, help='input .vol3 file')
    return parser


def main(argv=None):
    args = get_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, NonFiniteLossError) as e:
        logger.error("%s failed: %s", args.command, e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
