"""Command line interface.

    vtlearn <command> [--seed N] [--config FILE] [--out DIR] [...]

Commands mirror the pipeline stages (simulate, preprocess, train,
train-classifier, embed, analyze), plus `gradcheck` for the layer-wise
gradient suite, `pipeline` for the whole experiment, and
`import-paper-dataset` to convert a real dataset tree into the manifest
convention.  Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

import argparse
import dataclasses
import sys

from . import config as config_mod
from . import gradcheck, pipeline


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad usage; reroute to exit 1
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def build_parser():
    p = _Parser(prog="vtlearn",
                description="synthetic visuo-tactile learning experiments")
    sub = p.add_subparsers(dest="command", metavar="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--config", default=None,
                        help="config file of `key = value` lines")
        sp.add_argument("--out", default=None,
                        help="output directory (default from config)")
        return sp

    add("simulate", "generate the known/unknown synthetic stroke datasets")
    pre = add("preprocess", "build train/val/test containers from raw data")
    pre.add_argument("--augment-per", choices=("material", "stroke"),
                     default=None, dest="augment_per",
                     help="crop-octet policy (default from config)")
    pre.add_argument("--manifest", default=None,
                     help="explicit manifest path (default <out>/raw_known)")
    add("train", "train the tactile reconstruction net")
    add("train-classifier", "train the material classifier")
    add("embed", "embed every material with both trained nets")
    add("analyze", "property scores, correlations, and scatter plots")
    grad = add("gradcheck", "finite-difference gradient suite per layer kind")
    grad.add_argument("--entries", type=int, default=100,
                      help="sampled entries per parameter (default 100)")
    add("pipeline", "run every stage and write report.txt")
    imp = add("import-paper-dataset",
              "convert a real dataset tree into the manifest convention")
    imp.add_argument("--src", required=True,
                     help="dataset root, one directory per material")
    return p


def _resolve_config(args):
    cfg = (config_mod.load_config(args.config) if args.config
           else config_mod.ExperimentConfig())
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "augment_per", None):
        overrides["augment_per"] = args.augment_per
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _cmd_simulate(cfg, args):
    for name, path in sorted(pipeline.simulate_stage(cfg).items()):
        print(f"{name} manifest: {path}")


def _cmd_preprocess(cfg, args):
    counts = pipeline.preprocess_stage(cfg, manifest_path=args.manifest)
    for name in ("train", "val", "test"):
        print(f"{name} records: {counts[name]}")


def _cmd_train(cfg, args):
    res = pipeline.train_stage(cfg)
    print(f"final train mse: {res['final_train_mse']:.6g}")
    print(f"final val mse: {res['final_val_mse']:.6g}")
    print(f"best val mse: {res['best_val_mse']:.6g}")
    print(f"mean-predictor val mse: {res['mean_predictor_val_mse']:.6g}")


def _cmd_train_classifier(cfg, args):
    res = pipeline.classifier_stage(cfg)
    print(f"final train loss: {res['final_train_loss']:.6g}")
    print(f"final val loss: {res['final_val_loss']:.6g}")
    print(f"train accuracy: {res['train_accuracy']:.4f}")


def _cmd_embed(cfg, args):
    res = pipeline.embed_stage(cfg)
    n_known = sum(e.known for e in res["reconstruction"])
    total = len(res["reconstruction"])
    print(f"embedded {total} materials ({n_known} known, {total - n_known} unknown)")


def _cmd_analyze(cfg, args):
    from .analysis import PROPERTY_NAMES
    res = pipeline.analyze_stage(cfg)
    for name, key in (("reconstruction", "corr_reconstruction"),
                      ("classifier", "corr_classifier")):
        mat = res[key]
        print(f"{name} spearman rho (rows z0..z3, cols "
              f"{'/'.join(PROPERTY_NAMES)}):")
        for i in range(4):
            print("  " + "  ".join(f"{mat[i, j]:+.3f}" for j in range(mat.shape[1])))


def _cmd_gradcheck(cfg, args):
    results = gradcheck.run_layer_suite(seed=cfg.seed, per_param=args.entries)
    for kind in gradcheck.BUILDERS:
        entries, worst = results[kind]
        print(f"{kind}: max rel err {worst:.3e} ({entries} entries)")


def _cmd_pipeline(cfg, args):
    report = pipeline.run_pipeline(cfg, log=print)
    print(f"report: {report}")


def _cmd_import(cfg, args):
    manifest = pipeline.import_paper_dataset(
        args.src, pipeline._out(cfg) / pipeline.RAW_KNOWN)
    print(f"manifest: {manifest}")


_COMMANDS = {
    "simulate": _cmd_simulate,
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "train-classifier": _cmd_train_classifier,
    "embed": _cmd_embed,
    "analyze": _cmd_analyze,
    "gradcheck": _cmd_gradcheck,
    "pipeline": _cmd_pipeline,
    "import-paper-dataset": _cmd_import,
}


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except SystemExit as e:             # --help
        return int(e.code or 0)
    try:
        cfg = _resolve_config(args)
        _COMMANDS[args.command](cfg, args)
    except (OSError, RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
