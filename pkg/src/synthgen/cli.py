"""``synthgen`` command line: simulate, fit-pretransform, train, propensity,
latent-map, generate, evaluate, plus ``run`` for the whole chain.

Exit codes: 0 success, 1 usage error, 2 data or numerical error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from synthgen import __version__
from synthgen.dataset import (
    Binary,
    ColumnSchema,
    Continuous,
    Excluded,
    ingest_csv,
    load_schema,
    save_schema,
    write_csv,
)
from synthgen.errors import SynthgenError

logger = logging.getLogger("synthgen")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _count(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def build_parser() -> Parser:
    p = Parser(prog="synthgen", description="Synthetic mixed-type tabular data with a pre-transformed VAE.")
    p.add_argument("--version", action="version", version=f"synthgen {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)

    s = sub.add_parser("simulate", help="generate a benchmark dataset")
    s.add_argument("--config", help="simulation config (JSON)")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--schema-out", required=True)
    s.add_argument("--confounder", action="store_true", help="add the near-redundant confounder column")

    s = sub.add_parser("fit-pretransform", help="fit per-column transforms and scaling")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="pretransform config (JSON)")
    s.add_argument("--skew-threshold", type=float, default=None)
    s.add_argument("--disable", action="store_true", help="scaling only, no transforms")
    s.add_argument("--seed", type=int, default=None, help="accepted for symmetry; fitting is deterministic")

    s = sub.add_parser("train", help="train the VAE")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--pipeline", required=True)
    s.add_argument("--config", help="VAE config (JSON)")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--plot", help="write the training curve PNG here")

    s = sub.add_parser("propensity", help="fit the group propensity model")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--group", default=None, help="group column (default: the schema's group label)")
    s.add_argument("--outcome", default=None)
    s.add_argument("--strategy", default="exposure-only", choices=["all", "exposure-only", "exposure-and-outcome"])
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--ridge", type=float, default=0.0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("latent-map", help="embed data, grid the latent space and weight the cells")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--schema", default=None)
    s.add_argument("--ps", required=True)
    s.add_argument("--cell-size", type=float, default=0.25)
    s.add_argument("--scheme", default="common", choices=["common", "group-specific"])
    s.add_argument("--delta", type=float, default=0.1)
    s.add_argument("--target-group", type=int, choices=[0, 1], default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--plot", help="write the heatmap PNG here")

    s = sub.add_parser("generate", help="sample synthetic rows")
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=_count, required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--weights", help="heatmap file from latent-map; enables weighted prior sampling")
    s.add_argument("--out", required=True)

    s = sub.add_parser("evaluate", help="pMSE utility report and marginal summaries")
    s.add_argument("--original", required=True)
    s.add_argument("--synthetic", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--n-perm", type=int, default=100)
    s.add_argument("--min-leaf", type=int, default=20)
    s.add_argument("--max-depth", type=int, default=25)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--bins", type=int, default=20)
    s.add_argument("--out", required=True)
    s.add_argument("--no-plots", action="store_true", help="skip the PNG next to the summary CSV")

    s = sub.add_parser("run", help="all stages from one config")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=None, help="override the config's master seed")
    return p


# -- helpers -------------------------------------------------------------------------


def _load_json_config(path, factory):
    from synthgen.pipeline import parse_stage, read_config

    if path is None:
        return factory({})
    return parse_stage(factory, read_config(path), str(path))


def _read_table(path, schema_path, model_features=()):
    """Ingest ``path`` with the declared schema, or infer one when none is given.

    Inference marks model features with their model kinds and every other
    column as excluded (binary when it only holds 0/1).
    """
    if schema_path is not None:
        return ingest_csv(path, load_schema(schema_path))
    import pandas as pd

    header = list(pd.read_csv(path, nrows=0).columns)
    known = {c.name: c for c in model_features}
    frame = pd.read_csv(path)
    cols = []
    for name in header:
        if name in known:
            cols.append(known[name])
        else:
            is_bin = frame[name].isin([0, 1]).all()
            cols.append(ColumnSchema(name, Binary if is_bin else Continuous, Excluded))
    return ingest_csv(path, cols)


class Outputs:
    """Collects written files and emits one manifest per output."""

    def __init__(self, args, argv):
        from synthgen.pipeline import RunManifest

        self.manifest = RunManifest(["synthgen"] + list(argv), getattr(args, "seed", None))
        self.paths = []
        self.started = time.perf_counter()

    def inputs(self, *paths):
        for p in paths:
            if p is not None:
                self.manifest.add_input(p)

    def config(self, label, obj):
        from synthgen.pipeline import json_hash

        self.manifest.configs[label] = json_hash(obj)

    def wrote(self, *paths):
        self.paths += [Path(p) for p in paths]

    def finish(self):
        from synthgen.pipeline import manifest_path

        for p in self.paths:
            self.manifest.add_output(p)
        self.manifest.duration_seconds = time.perf_counter() - self.started
        for p in self.paths:
            self.manifest.write(manifest_path(p))


# -- subcommands -----------------------------------------------------------------------


def cmd_simulate(args, out: Outputs):
    from synthgen.benchmark import SimConfig, confounder_scenario, simulate

    cfg = _load_json_config(args.config, SimConfig.from_json)
    if args.seed is not None:
        cfg = SimConfig.from_json(dict(cfg.to_json(), seed=args.seed))
    out.inputs(args.config)
    out.config("simulate", cfg.to_json())
    data = confounder_scenario(cfg) if args.confounder else simulate(cfg)
    write_csv(data, args.out)
    save_schema(data.schema, args.schema_out)
    out.wrote(args.out, args.schema_out)


def cmd_fit_pretransform(args, out: Outputs):
    from synthgen.pretransform import PipelineConfig, fit_pipeline

    raw = {} if args.config is None else _raw_config(args.config)
    if args.skew_threshold is not None:
        raw["skew_threshold"] = args.skew_threshold
    if args.disable:
        raw["enabled"] = False
    cfg = _parse(PipelineConfig.from_json, raw, "pretransform config")
    data = ingest_csv(args.data, load_schema(args.schema))
    out.inputs(args.data, args.schema, args.config)
    pipe = fit_pipeline(data, cfg)
    pipe.save(args.out)
    out.wrote(args.out)


def _raw_config(path):
    from synthgen.pipeline import read_config

    raw = dict(read_config(path))
    raw.pop("version")
    return raw


def _parse(factory, raw, where):
    from synthgen.pipeline import parse_stage

    return parse_stage(factory, raw, where)


def cmd_train(args, out: Outputs):
    from synthgen.pretransform import TransformPipeline
    from synthgen.vae import VaeConfig, train

    raw = {} if args.config is None else _raw_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = _parse(VaeConfig.from_json, raw, "VAE config")
    data = ingest_csv(args.data, load_schema(args.schema))
    pipe = TransformPipeline.load(args.pipeline)
    out.inputs(args.data, args.schema, args.pipeline, args.config)
    out.config("vae", cfg.to_json())
    model = train(data, pipe, cfg)
    model.save(args.out)
    out.wrote(args.out)
    if args.plot:
        from synthgen.plots import plot_training_curve

        plot_training_curve(model.training_curve, args.plot)
        out.wrote(args.plot)


def cmd_propensity(args, out: Outputs):
    from synthgen.propensity import fit_propensity

    data = ingest_csv(args.data, load_schema(args.schema))
    out.inputs(args.data, args.schema)
    model = fit_propensity(data, args.group, args.outcome, args.strategy, args.alpha, ridge=args.ridge)
    model.save(args.out)
    out.wrote(args.out)


def cmd_latent_map(args, out: Outputs):
    from synthgen.latent import build_grid, compute_weights, export_heatmap
    from synthgen.propensity import PropensityModel, predict_propensity
    from synthgen.vae import VaeModel, embed

    model = VaeModel.load(args.model)
    ps = PropensityModel.load(args.ps)
    data = _read_table(args.data, args.schema, model.features)
    out.inputs(args.model, args.ps, args.data, args.schema)
    if model.latent_dim != 2:
        raise SynthgenError(f"latent grids need a 2-D latent space, model has {model.latent_dim}")
    z = embed(model, data)
    grid = build_grid(z, predict_propensity(ps, data), args.cell_size)
    weights = compute_weights(grid, args.scheme, args.delta, args.target_group)
    labels = data.column(ps.target) if ps.target in data.names else None
    export_heatmap(args.out, grid, weights, z, labels)
    out.wrote(args.out)
    if args.plot:
        from synthgen.plots import plot_latent

        plot_latent(grid, weights, z, labels, args.plot)
        out.wrote(args.plot)


def cmd_generate(args, out: Outputs):
    from synthgen.vae import VaeModel, generate_from_latent, generate_prior

    model = VaeModel.load(args.model)
    out.inputs(args.model, args.weights)
    if model.pipeline is None:
        raise SynthgenError(f"{args.model} carries no transform pipeline")
    if args.weights:
        from synthgen.latent import read_heatmap, weighted_prior_sample
        from synthgen.pipeline import derive_seed

        grid, weights, _ = read_heatmap(args.weights)
        if weights is None:
            raise SynthgenError(f"{args.weights} holds no cell weights")
        base = 0 if args.seed is None else args.seed
        z = weighted_prior_sample(grid, weights, args.n, derive_seed(base, "latent"))
        synth = generate_from_latent(model, model.pipeline, z, derive_seed(base, "generate"))
    else:
        synth = generate_prior(model, model.pipeline, args.n, args.seed)
    write_csv(synth, args.out)
    out.wrote(args.out)
    if synth.provenance.get("clamped"):
        logger.warning("clamped values during inversion: %s", synth.provenance["clamped"])


def cmd_evaluate(args, out: Outputs):
    from synthgen.evaluation import CartParams, marginal_summary, pmse_ratio, write_summary
    from synthgen.pipeline import compare_marginals, dump_json

    import pandas as pd

    schema = load_schema(args.schema)
    original = ingest_csv(args.original, schema).features()
    synthetic = ingest_csv(args.synthetic, original.schema)
    out.inputs(args.original, args.synthetic, args.schema)
    report = pmse_ratio(original, synthetic, args.n_perm, args.seed, CartParams(args.min_leaf, args.max_depth))
    body = {"version": 1, "utility": report.to_json(), "marginals": compare_marginals(original, synthetic)}
    dump_json(body, args.out)
    stem = Path(args.out).with_suffix("")
    summary_path = Path(f"{stem}.marginals.csv")
    frame = pd.concat([marginal_summary(original, args.bins, "original"),
                       marginal_summary(synthetic, args.bins, "synthetic")], ignore_index=True)
    write_summary(frame, summary_path)
    out.wrote(args.out, summary_path)
    if not args.no_plots:
        from synthgen.plots import plot_marginals

        png = Path(f"{stem}.marginals.png")
        plot_marginals(original, {"synthetic": synthetic}, png)
        out.wrote(png)
    print(f"psi={report.psi:.6g} psi_bar={report.psi_bar:.6g} psi_ratio={report.psi_ratio:.6g}", file=sys.stderr)


def cmd_run(args, out: Outputs):
    from synthgen.pipeline import RunConfig, pipeline_run, read_config

    raw = read_config(args.config)
    if args.seed is not None:
        raw = dict(raw, seed=args.seed)
    cfg = RunConfig.from_json(raw, Path(args.config).parent)
    report = pipeline_run(cfg, args.out_dir, ["synthgen"] + out.manifest.command[1:])
    u = report["utility"]
    print(f"psi={u['psi']:.6g} psi_ratio={u['psi_ratio']:.6g} -> {args.out_dir}", file=sys.stderr)


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-pretransform": cmd_fit_pretransform,
    "train": cmd_train,
    "propensity": cmd_propensity,
    "latent-map": cmd_latent_map,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
}


def _unknown_flags(parser: Parser, argv) -> list:
    """Option-like tokens that neither the top level nor the chosen command defines."""
    known = set(parser._option_string_actions)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for tok in argv:
        if tok in sub_action.choices:
            known |= set(sub_action.choices[tok]._option_string_actions)
            break
    bad = []
    for tok in argv:
        if tok == "--":
            break
        if tok.startswith("-") and len(tok) > 1 and not tok[1].isdigit() and tok.split("=", 1)[0] not in known:
            bad.append(tok)
    return bad


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        bad = _unknown_flags(parser, argv)
        if bad:
            parser.error(f"unrecognized arguments: {' '.join(bad)}")
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("synthgen: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    out = Outputs(args, argv)
    try:
        COMMANDS[args.command](args, out)
        out.finish()
    except (SynthgenError, OSError, ValueError, KeyError) as exc:
        print(f"synthgen {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
