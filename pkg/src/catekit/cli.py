"""Command line interface.

Subcommands:
    generate    write a seeded synthetic dataset to a file
    train       fit one method on a dataset file, write a checkpoint
    evaluate    score a checkpoint against a dataset's hidden truth
    sweep       run the full experiment grid (resumable)
    gradcheck   finite-difference verification of every primitive
    appendix    the toy-network studies
"""

import argparse
import os
import sys

from . import datagen, harness, modelio
from .evaluate import mse_cate, relative_mse, scatter_export
from .gradients import MAX_REL_ERR, run_suite
from .seeding import subseed


def _add_set_option(p):
    p.add_argument(
        "--set",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        help="method hyperparameter override, e.g. causalnet.epochs=10",
    )


def _overrides(pairs):
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--set expects KEY=VALUE, got {pair!r}")
        key, val = pair.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _build_parser():
    parser = argparse.ArgumentParser(prog="catekit", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset file")
    p.add_argument("--generator", required=True, choices=datagen.GENERATOR_KINDS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-x", type=float, default=1.0, help="covariate scale (appendix kinds)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fit one method on a dataset file")
    p.add_argument("--method", required=True, choices=harness.METHODS)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_set_option(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="report CSV path (default: stdout only)")
    p.add_argument("--scatter", help="also write a (true, estimated) scatter CSV")

    p = sub.add_parser("sweep", help="run the experiment grid")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--generator", help="comma list of generator kinds")
    p.add_argument("--methods", help="comma list of methods")
    p.add_argument("--grid", help="comma list of training sizes")
    p.add_argument("--test-size", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--full-scale", action="store_true", help="paper-scale grid and test size")
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    _add_set_option(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--net-seeds", type=int, default=20)
    p.add_argument("--full-resolution-seeds", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("appendix", help="toy-network studies")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=6000)
    p.add_argument("--out", default="appendix-results")
    return parser


def _cmd_generate(args):
    spec = datagen.GeneratorSpec(kind=args.generator, seed=args.seed, sigma_x=args.sigma_x)
    ds = datagen.generate(spec, args.n)
    rows = datagen.save_dataset(ds, args.out)
    print(f"wrote {rows} records to {args.out}")
    return 0


def _cmd_train(args):
    ds = datagen.load_dataset(args.data)
    model = harness.fit_method(args.method, ds, subseed(args.seed, "cli-train"), _overrides(args.set))
    modelio.save_model(model, args.out)
    print(f"trained {args.method} on {ds.n} records; checkpoint at {args.out}")
    return 0


def _cmd_evaluate(args):
    ds = datagen.load_dataset(args.data)
    model = modelio.load_model(args.checkpoint)
    tau_hat = harness.estimate_cate(model, ds)
    mse = mse_cate(tau_hat, ds.truth.tau)
    try:
        rel = relative_mse(tau_hat, ds.truth.tau)
    except ValueError:  # constant true effect (e.g. the nine-covariate toys)
        rel = float("nan")
    line = f"{ds.generator},{ds.n},{mse:.17g},{rel:.17g}"
    print("generator,n,mse,relative_mse")
    print(line)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("generator,n,mse,relative_mse\n" + line + "\n")
    if args.scatter:
        scatter_export(tau_hat, ds.truth.tau, args.scatter)
    return 0


def _cmd_sweep(args):
    if args.config:
        config = harness.parse_config(args.config)
    else:
        config = harness.ExperimentConfig()
    updates = {}
    if args.generator:
        updates["generators"] = tuple(args.generator.split(","))
    if args.methods:
        updates["methods"] = tuple(args.methods.split(","))
    if args.grid:
        updates["grid"] = tuple(int(v) for v in args.grid.split(","))
    for name, key in (
        ("test_size", "test_size"),
        ("replicates", "replicates"),
        ("seed", "seed"),
        ("jobs", "jobs"),
    ):
        val = getattr(args, name)
        if val is not None:
            updates[key] = val
    if args.out:
        updates["out_dir"] = args.out
    overrides = dict(config.overrides)
    overrides.update(_overrides(args.set))
    updates["overrides"] = overrides
    from dataclasses import replace

    config = replace(config, **updates)
    if args.full_scale:
        config = harness.full_scale(config)
    path = harness.sweep(config)
    print(f"results at {path}")
    return 0


def _cmd_gradcheck(args):
    failed = []

    def report(name, err):
        status = "ok" if err <= MAX_REL_ERR else "FAIL"
        print(f"{name:18s} max relative error {err:.3e}  {status}")
        if err > MAX_REL_ERR:
            failed.append(name)

    run_suite(
        seeds=args.seeds,
        causalnet_seeds=args.net_seeds,
        full_resolution_seeds=args.full_resolution_seeds,
        base_seed=args.seed,
        report=report,
    )
    if failed:
        print(f"gradient check FAILED for: {', '.join(failed)}")
        return 1
    print("all gradient checks passed")
    return 0


def _cmd_appendix(args):
    from .appendix import run_all_studies
    from .harness import _atomic_write

    os.makedirs(args.out, exist_ok=True)
    results = run_all_studies(seed=args.seed, iterations=args.iterations)
    lines = ["study,net,generator,sigma_x,iteration,train_loss,test_loss"]
    for r in results:
        for it, tr, te in zip(r.eval_iterations, r.train_loss, r.test_loss):
            lines.append(
                f"{r.name},{r.net},{r.generator},{r.sigma_x:g},{it},{tr:.17g},{te:.17g}"
            )
        print(
            f"{r.name}: final train loss {r.final_train_loss:.4g}, "
            f"final test loss {r.final_test_loss:.4g}, "
            f"regression reference {r.baseline_test_loss:.4g}"
        )
    _atomic_write(os.path.join(args.out, "appendix_traces.csv"), "\n".join(lines) + "\n")
    print(f"traces at {os.path.join(args.out, 'appendix_traces.csv')}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "gradcheck": _cmd_gradcheck,
    "appendix": _cmd_appendix,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
