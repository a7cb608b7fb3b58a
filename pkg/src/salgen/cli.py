"""Command-line entry points for the evaluation pipeline.

Exit codes: 0 success, 1 configuration error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import pipeline
from .errors import SalgenError, StageFailed


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; overrides the built-in profile")
    p.add_argument("--profile", choices=("desk", "full"), default="desk")
    p.add_argument("--out", default="out", help="output directory (runs/<hash> inside)")
    p.add_argument("--data-dir", help="directory with IDX files (else SALGEN_DATA_DIR or synthetic data)")
    p.add_argument("--subset-train", type=int, help="training subset size")
    p.add_argument("--subset-test", type=int, help="test subset size")
    p.add_argument("--seed", type=int, help="master seed for data/model/explanations")


def _build_config(args) -> pipeline.RunConfig:
    if args.config:
        cfg = pipeline.RunConfig.from_json(args.config)
        if args.out != "out":
            cfg.out_dir = args.out
    else:
        maker = pipeline.desk_profile if args.profile == "desk" else pipeline.full_profile
        cfg = maker(args.out)
    if args.data_dir:
        cfg.data_dir = args.data_dir
    if args.subset_train:
        cfg.subset_train = args.subset_train
    if args.subset_test:
        cfg.subset_test = args.subset_test
    if args.seed is not None:
        cfg.data_seed = args.seed
        cfg.model_seed = args.seed
        cfg.explain_seed = args.seed
        cfg.vp_seed = args.seed
    return cfg


def _method_spec(args) -> pipeline.MethodSpec:
    params = {}
    if args.n_samples:
        params["n_samples"] = args.n_samples
    if args.steps:
        params["steps"] = args.steps
    if args.sigma:
        params["smoothgrad"] = {"n": args.smooth_n, "sigma_rel": args.sigma}
    method_id = args.method + ("_s" if args.sigma else "")
    if args.method in ("lime", "kernel_shap") and args.n_samples:
        method_id = "%s_%d" % (args.method, args.n_samples)
    return pipeline.MethodSpec(id=method_id, kind=args.method, params=params)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="salgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("train-classifier", "train-ae-ref", "compare-methods", "report"):
        _add_common(sub.add_parser(name))

    p = sub.add_parser("explain")
    _add_common(p)
    p.add_argument("--method", required=True, choices=pipeline.attribution.METHOD_KINDS)
    p.add_argument("--n-samples", type=int, help="perturbation budget (lime/kernel_shap)")
    p.add_argument("--steps", type=int, help="integration steps (integrated_gradients)")
    p.add_argument("--sigma", type=float, help="smoothgrad relative noise scale")
    p.add_argument("--smooth-n", type=int, default=25, help="smoothgrad sample count")

    p = sub.add_parser("train-ae-method")
    _add_common(p)
    p.add_argument("--method", required=True, choices=pipeline.attribution.METHOD_KINDS)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--smooth-n", type=int, default=25)

    p = sub.add_parser("score")
    _add_common(p)
    p.add_argument("--method", required=True, choices=pipeline.attribution.METHOD_KINDS)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--smooth-n", type=int, default=25)

    p = sub.add_parser("sweep-lime")
    _add_common(p)
    p.add_argument("--n-samples-list", default="10,30,50,100,500")

    p = sub.add_parser("smoothgrad-study")
    _add_common(p)
    p.add_argument("--bases", default="vanilla,input_x_gradients,integrated_gradients")

    args = parser.parse_args(argv)
    try:
        cfg = _build_config(args)
    except (ValueError, OSError, KeyError, TypeError) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 1

    try:
        return _dispatch(args, cfg)
    except StageFailed as exc:
        print("stage failure: %s" % exc, file=sys.stderr)
        return 2
    except SalgenError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except ValueError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 1


def _dispatch(args, cfg) -> int:
    if args.command == "train-classifier":
        model = pipeline.Runner(cfg).classifier()
        print("test accuracy: %.4f" % model.metadata["test_accuracy"])
        return 0
    if args.command == "train-ae-ref":
        runner = pipeline.Runner(cfg)
        runner.ae_ref()
        print("reference autoencoder ready under %s" % runner.run_dir)
        return 0
    if args.command in ("explain", "train-ae-method", "score"):
        spec = _method_spec(args)
        cfg.methods = [spec]
        runner = pipeline.Runner(cfg)
        if args.command == "explain":
            runner.explanations(spec)
            print("explanations for %s under %s" % (spec.id, runner.run_dir))
        elif args.command == "train-ae-method":
            runner.method_autoencoder(spec)
            print("autoencoder for %s under %s" % (spec.id, runner.run_dir))
        else:
            card, _ = runner.score_method(spec)
            print(json.dumps(card.__dict__, indent=1, sort_keys=True))
        return 0
    if args.command == "sweep-lime":
        ns = [int(v) for v in args.n_samples_list.split(",") if v]
        result = pipeline.run_lime_sweep(cfg, ns)
        _print_cards(result)
        return 0
    if args.command == "compare-methods":
        result = pipeline.run_method_comparison(cfg)
        _print_cards(result)
        return 0
    if args.command == "smoothgrad-study":
        bases = [b for b in args.bases.split(",") if b]
        result, deltas = pipeline.run_smoothgrad_study(cfg, bases)
        _print_cards(result)
        for base, d in deltas.items():
            print(
                "%s: dDL %+0.3f  dVP %+0.3f  dS_EM %+0.3f"
                % (base, d["d_dl"], d["d_vp"], d["d_s_em"])
            )
        return 0
    if args.command == "report":
        runner = pipeline.Runner(cfg)
        result = runner.run()
        _print_cards(result)
        return 0
    return 1


def _print_cards(result) -> None:
    print("run dir: %s" % result.run_dir)
    print("%-24s %6s %6s %6s %6s %6s" % ("method", "DL", "dSC", "dFID", "VP", "S_EM"))
    for c in result.cards:
        print(
            "%-24s %6.3f %6.3f %6.3f %6.3f %6.3f"
            % (c.method_id, c.dl, c.dsc, c.dfid, c.vp, c.s_em)
        )


if __name__ == "__main__":
    sys.exit(main())
