"""End-to-end orchestration, stage seeds and run manifests."""

from __future__ import annotations

import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from synthgen import __version__, plots
from synthgen.benchmark import SimConfig, simulate
from synthgen.dataset import Dataset, ingest_csv, load_schema, save_schema, write_csv
from synthgen.errors import SynthgenError
from synthgen.evaluation import CartParams, marginal_summary, pmse_ratio, write_summary
from synthgen.latent import build_grid, compute_weights, export_heatmap, weighted_prior_sample
from synthgen.pretransform import PipelineConfig, fit_pipeline
from synthgen.propensity import ExposureOnly, fit_propensity, predict_propensity
from synthgen import stats
from synthgen.vae import VaeConfig, embed, generate_from_latent, generate_prior, train

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1


class ConfigError(SynthgenError):
    pass


class StageError(SynthgenError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def derive_seed(master: int, stage: str) -> int:
    """Stage seed from the master seed and the stage name, independent of stage order."""
    digest = hashlib.sha256(f"{int(master)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def json_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class RunManifest:
    command: list
    seed: int | None = None
    inputs: dict = field(default_factory=dict)  # path -> sha256
    configs: dict = field(default_factory=dict)  # label -> sha256 of the parsed config
    outputs: dict = field(default_factory=dict)  # path -> sha256
    duration_seconds: float = 0.0
    tool_version: str = __version__

    def add_input(self, path) -> None:
        self.inputs[str(path)] = file_hash(path)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = file_hash(path)

    def to_json(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "command": list(self.command),
            "seed": self.seed,
            "configs": self.configs,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "duration_seconds": round(self.duration_seconds, 3),
        }

    def write(self, path) -> Path:
        path = Path(path)
        dump_json(self.to_json(), path)
        return path


def manifest_path(output) -> Path:
    return Path(f"{output}.manifest.json")


def read_config(path, required_version: int = CONFIG_VERSION) -> dict:
    """Load a JSON config; it must carry a supported ``version``."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if raw.get("version") != required_version:
        raise ConfigError(f"{path}: expected \"version\": {required_version}, got {raw.get('version')!r}")
    return raw


def _section(raw: dict, allowed: set, where: str) -> dict:
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return raw


def parse_stage(factory, raw: dict, where: str):
    try:
        return factory(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: dict = field(default_factory=lambda: {"simulate": {}})
    pretransform: PipelineConfig = field(default_factory=PipelineConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    propensity: dict = field(default_factory=dict)
    latent: dict = field(default_factory=dict)
    generate: dict = field(default_factory=dict)
    evaluate: dict = field(default_factory=dict)
    plots: bool = True

    PROPENSITY_KEYS = {"group", "outcome", "strategy", "alpha", "ridge"}
    LATENT_KEYS = {"cell_size", "scheme", "delta", "target_group"}
    GENERATE_KEYS = {"n", "weighted"}
    EVALUATE_KEYS = {"n_perm", "min_leaf", "max_depth", "bins"}

    @classmethod
    def from_json(cls, raw: dict, base: Path | None = None) -> "RunConfig":
        raw = dict(raw)
        raw.pop("version", None)
        _section(raw, set(cls.__dataclass_fields__), "run config")
        data = raw.get("data", {"simulate": {}})
        _section(data, {"simulate", "csv", "schema"}, "data")
        if ("simulate" in data) == ("csv" in data):
            raise ConfigError("data: give exactly one of 'simulate' or 'csv' (with 'schema')")
        if "csv" in data:
            if "schema" not in data:
                raise ConfigError("data: 'csv' needs a 'schema'")
            base = base or Path(".")
            data = {k: str((base / v).resolve()) for k, v in data.items()}
        else:
            parse_stage(SimConfig.from_json, data["simulate"], "data.simulate")
        return cls(
            seed=int(raw.get("seed", 0)),
            data=data,
            pretransform=parse_stage(PipelineConfig.from_json, raw.get("pretransform", {}), "pretransform"),
            vae=parse_stage(VaeConfig.from_json, raw.get("vae", {}), "vae"),
            propensity=_section(raw.get("propensity", {}), cls.PROPENSITY_KEYS, "propensity"),
            latent=_section(raw.get("latent", {}), cls.LATENT_KEYS, "latent"),
            generate=_section(raw.get("generate", {}), cls.GENERATE_KEYS, "generate"),
            evaluate=_section(raw.get("evaluate", {}), cls.EVALUATE_KEYS, "evaluate"),
            plots=bool(raw.get("plots", True)),
        )


def _column_stats(x) -> dict:
    return {
        "mean": float(np.mean(x)),
        "sd": float(np.std(x, ddof=1)) if len(x) > 1 else 0.0,
        "skewness": stats.skewness(x),
        "modes": stats.count_modes(x) if len(x) > 1 else 1,
    }


def compare_marginals(original: Dataset, synthetic: Dataset) -> dict:
    out = {}
    for col in synthetic.schema:
        a, b = original.column(col.name), synthetic.column(col.name)
        if col.kind == "binary":
            out[col.name] = {"original": {"mean": float(a.mean())}, "synthetic": {"mean": float(b.mean())}}
        else:
            out[col.name] = {"original": _column_stats(a), "synthetic": _column_stats(b)}
    return out


def pipeline_run(config: RunConfig, out_dir, command=None) -> dict:
    """Run every stage and write synth.csv, heatmap.csv, marginals.csv and report.json.

    ``report.json`` holds no timings, so equal configs give byte-identical reports.
    A failing stage raises :class:`StageError`; files already written stay.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    manifest = RunManifest(command or list(sys.argv), config.seed)
    seeds = {s: derive_seed(config.seed, s) for s in ("simulate", "train", "latent", "generate", "evaluate")}
    written = []

    def stage(name):
        class _Stage:
            def __enter__(self):
                logger.info("stage %s", name)

            def __exit__(self, kind, exc, tb):
                if exc is not None and not isinstance(exc, StageError):
                    raise StageError(name, exc) from exc
                return False
        return _Stage()

    with stage("data"):
        if "simulate" in config.data:
            sim = SimConfig.from_json(dict(config.data["simulate"], seed=seeds["simulate"]))
            data = simulate(sim)
            write_csv(data, out / "data.csv")
            save_schema(data.schema, out / "schema.json")
            written += [out / "data.csv", out / "schema.json"]
            manifest.configs["simulate"] = json_hash(sim.to_json())
        else:
            data = ingest_csv(config.data["csv"], load_schema(config.data["schema"]))
            manifest.add_input(config.data["csv"])
            manifest.add_input(config.data["schema"])
    features = data.features()

    with stage("fit-pretransform"):
        pipe = fit_pipeline(data, config.pretransform)
        pipe.save(out / "pipeline.json")
        written.append(out / "pipeline.json")

    with stage("train"):
        vae_cfg = VaeConfig.from_json(dict(config.vae.to_json(), seed=seeds["train"]))
        model = train(data, pipe, vae_cfg)
        model.save(out / "model.bin")
        written.append(out / "model.bin")
    manifest.configs["pretransform"] = json_hash(pipe.to_json())
    manifest.configs["vae"] = json_hash(vae_cfg.to_json())

    report = {"version": 1, "seed": config.seed, "stage_seeds": seeds, "tool_version": __version__}
    grid = weights = latent = ps_model = None
    group = config.propensity.get("group") or data.group_label
    with stage("propensity"):
        if group is not None:
            ps_model = fit_propensity(
                data, group, config.propensity.get("outcome"), config.propensity.get("strategy", ExposureOnly),
                float(config.propensity.get("alpha", 0.05)), ridge=float(config.propensity.get("ridge", 0.0)),
            )
            ps_model.save(out / "ps.json")
            written.append(out / "ps.json")
            report["propensity"] = {"group": group, "strategy": ps_model.selection,
                                    "selected": ps_model.names, "intercept": ps_model.intercept}

    with stage("latent-map"):
        if ps_model is not None and model.latent_dim == 2:
            latent = embed(model, data)
            grid = build_grid(latent, predict_propensity(ps_model, data), float(config.latent.get("cell_size", 0.25)))
            weights = compute_weights(grid, config.latent.get("scheme", "common"),
                                      float(config.latent.get("delta", 0.1)), config.latent.get("target_group"))
            export_heatmap(out / "heatmap.csv", grid, weights, latent, data.column(group))
            written.append(out / "heatmap.csv")
            report["latent"] = {
                "dims": list(grid.dims), "cell_size": grid.cell_size, "scheme": weights.scheme,
                "delta": weights.delta, "admissible_cells": int((weights.normalized > 0).sum()),
            }

    with stage("generate"):
        n = int(config.generate.get("n") or data.n)
        if config.generate.get("weighted", False):
            if weights is None:
                raise ConfigError("weighted generation needs a group label and a 2-D latent space")
            z, acc = weighted_prior_sample(grid, weights, n, seeds["latent"], return_stats=True)
            synth = generate_from_latent(model, pipe, z, seeds["generate"])
            report["latent"]["acceptance"] = acc
        else:
            synth = generate_prior(model, pipe, n, seeds["generate"])
        write_csv(synth, out / "synth.csv")
        written.append(out / "synth.csv")
        report["clamped"] = synth.provenance.get("clamped", {})

    with stage("evaluate"):
        ev = config.evaluate
        params = CartParams(int(ev.get("min_leaf", 20)), int(ev.get("max_depth", 25)))
        utility = pmse_ratio(features, synth, int(ev.get("n_perm", 100)), seeds["evaluate"], params)
        bins = int(ev.get("bins", 20))
        summary = pd.concat([marginal_summary(features, bins, "original"),
                             marginal_summary(synth, bins, "synthetic")], ignore_index=True)
        write_summary(summary, out / "marginals.csv")
        written.append(out / "marginals.csv")
        report["utility"] = utility.to_json()
        report["marginals"] = compare_marginals(features, synth)
        report["pipeline"] = {c.name: [type(s).__name__ for s in c.steps] for c in pipe.columns}
        report["training"] = {"epochs": len(model.training_curve),
                              "best_loss": min(b.total for b in model.training_curve)}
        dump_json(report, out / "report.json")
        written.append(out / "report.json")

    if config.plots:
        with stage("plots"):
            plots.plot_marginals(features, {"synthetic": synth}, out / "marginals.png")
            plots.plot_training_curve(model.training_curve, out / "training.png")
            written += [out / "marginals.png", out / "training.png"]
            if grid is not None:
                plots.plot_latent(grid, weights, latent, data.column(group), out / "latent.png")
                written.append(out / "latent.png")

    for path in written:
        manifest.add_output(path)
    manifest.duration_seconds = time.perf_counter() - started
    manifest.write(out / "run.manifest.json")
    return report
