"""Mixed-type variational autoencoder.

The encoder maps a pipeline-transformed row to a diagonal Gaussian
posterior. The decoder shares one trunk and ends in three heads: Gaussian
mean and standard deviation for continuous columns and Bernoulli
probabilities for binary columns.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from synthgen import nn
from synthgen.dataset import Binary, ColumnSchema, Continuous, Dataset, schema_from_json, schema_to_json
from synthgen.errors import FitError, SchemaError
from synthgen.pretransform import TransformPipeline, apply_pipeline, invert_pipeline

logger = logging.getLogger(__name__)

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class VaeConfig:
    latent_dim: int = 2
    encoder_hidden: tuple = (32, 16)
    decoder_hidden: tuple = (32, 16)
    fusion: str = "early"
    activation: str = "tanh"
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    sigma_floor: float = 1e-3
    mean_output: bool = False

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if any(int(h) < 1 for h in (*self.encoder_hidden, *self.decoder_hidden)):
            raise ValueError("layer sizes must be >= 1")
        if self.fusion not in ("early", "late"):
            raise ValueError(f"fusion must be 'early' or 'late', not {self.fusion!r}")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")
        object.__setattr__(self, "encoder_hidden", tuple(int(h) for h in self.encoder_hidden))
        object.__setattr__(self, "decoder_hidden", tuple(int(h) for h in self.decoder_hidden))

    @classmethod
    def from_json(cls, raw: dict) -> "VaeConfig":
        raw = {k: v for k, v in raw.items() if k != "version"}
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown VAE config keys {sorted(unknown)}")
        return cls(**raw)

    def to_json(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d


@dataclass(frozen=True)
class ElboBreakdown:
    reconstruction_continuous: float
    reconstruction_binary: float
    kl: float
    total: float


class VaeModel:
    """Encoder/decoder parameters plus the feature schema they were built for."""

    def __init__(self, features, config: VaeConfig = VaeConfig(), pipeline_ref: str | None = None):
        self.features = tuple(features)
        self.config = config
        self.pipeline_ref = pipeline_ref
        self.pipeline: TransformPipeline | None = None
        self.training_curve: list[ElboBreakdown] = []
        self.cont_idx = [i for i, c in enumerate(self.features) if c.kind == Continuous]
        self.bin_idx = [i for i, c in enumerate(self.features) if c.kind == Binary]
        if not self.features:
            raise SchemaError("VAE needs at least one feature column")
        rng = np.random.default_rng(config.seed)
        act = config.activation
        enc = list(config.encoder_hidden)
        dec = list(config.decoder_hidden)
        if config.fusion == "late" and self.cont_idx and self.bin_idx:
            self.trunks = [
                nn.Mlp([len(self.cont_idx)] + enc, act, rng=rng, name="enc_cont"),
                nn.Mlp([len(self.bin_idx)] + enc, act, rng=rng, name="enc_bin"),
            ]
            merged = 2 * enc[-1]
        else:
            self.trunks = [nn.Mlp([len(self.features)] + enc, act, rng=rng, name="enc")]
            merged = enc[-1]
        L = config.latent_dim
        self.mu_e = nn.DenseLayer(merged, L, "identity", rng, "mu_e")
        self.sigma_e = nn.DenseLayer(merged, L, "identity", rng, "sigma_e")
        self.decoder = nn.Mlp([L] + dec, act, rng=rng, name="dec")
        h = dec[-1]
        self.mu_d = nn.DenseLayer(h, len(self.cont_idx), "identity", rng, "mu_d") if self.cont_idx else None
        self.sigma_d = nn.DenseLayer(h, len(self.cont_idx), "identity", rng, "sigma_d") if self.cont_idx else None
        self.pi_d = nn.DenseLayer(h, len(self.bin_idx), "identity", rng, "pi_d") if self.bin_idx else None

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def feature_names(self):
        return [c.name for c in self.features]

    def parameters(self):
        params = [p for t in self.trunks for p in t.parameters()]
        params += self.mu_e.parameters() + self.sigma_e.parameters() + self.decoder.parameters()
        for head in (self.mu_d, self.sigma_d, self.pi_d):
            if head is not None:
                params += head.parameters()
        return params

    def state(self) -> dict:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state(self, state: dict) -> None:
        for p in self.parameters():
            if state[p.name].shape != p.value.shape:
                raise ValueError(f"shape mismatch for {p.name}")
            p.value = np.array(state[p.name], dtype=float)

    # graph pieces -------------------------------------------------------

    def _positive(self, t: nn.Tensor) -> nn.Tensor:
        return t.softplus() + self.config.sigma_floor

    def encoder_graph(self, x: np.ndarray):
        if len(self.trunks) == 2:
            h = nn.concat([self.trunks[0](x[:, self.cont_idx]), self.trunks[1](x[:, self.bin_idx])])
        else:
            h = self.trunks[0](x)
        return self.mu_e(h), self._positive(self.sigma_e(h))

    def decoder_graph(self, z):
        h = self.decoder(z)
        mu = self.mu_d(h) if self.mu_d is not None else None
        sigma = self._positive(self.sigma_d(h)) if self.sigma_d is not None else None
        logits = self.pi_d(h) if self.pi_d is not None else None
        return mu, sigma, logits

    def loss_graph(self, x: np.ndarray, noise: np.ndarray):
        """Batch-mean loss tensor and its three parts as tensors."""
        mu_e, sigma_e = self.encoder_graph(x)
        z = reparameterize(mu_e, sigma_e, noise)
        mu, sigma, logits = self.decoder_graph(z)
        n = x.shape[0]
        zero = nn.Tensor(0.0)
        rec_c = rec_b = zero
        if mu is not None:
            xc = x[:, self.cont_idx]
            nll = sigma.log() + (nn.Tensor(xc) - mu).square() / (sigma.square() * 2.0) + HALF_LOG_2PI
            rec_c = nll.sum() * (1.0 / n)
        if logits is not None:
            xb = x[:, self.bin_idx]
            nll = logits.softplus() - logits * xb
            rec_b = nll.sum() * (1.0 / n)
        kl_terms = (mu_e.square() + sigma_e.square()) * 0.5 - sigma_e.log() - 0.5
        kl = kl_terms.sum() * (1.0 / n)
        return rec_c + rec_b + kl, rec_c, rec_b, kl

    def save(self, path) -> None:
        header = {
            "format": "synthgen-vae",
            "version": 1,
            "config": self.config.to_json(),
            "features": schema_to_json(self.features)["columns"],
            "schema_hash": schema_hash(self.features),
            "pipeline_ref": self.pipeline_ref,
            "pipeline": self.pipeline.to_json() if self.pipeline is not None else None,
            "training_curve": [asdict(b) for b in self.training_curve],
        }
        nn.save_tensors(path, self.state(), header)

    @classmethod
    def load(cls, path) -> "VaeModel":
        header, tensors = nn.load_tensors(path)
        if header.get("format") != "synthgen-vae":
            raise ValueError(f"{path} is not a synthgen VAE model file")
        cfg = VaeConfig.from_json(header["config"])
        model = cls(schema_from_json(header["features"]), cfg, header.get("pipeline_ref"))
        model.load_state(tensors)
        if header.get("pipeline") is not None:
            model.pipeline = TransformPipeline.from_json(header["pipeline"])
        model.training_curve = [ElboBreakdown(**b) for b in header.get("training_curve", [])]
        return model


def schema_hash(schema) -> str:
    blob = json.dumps(schema_to_json(schema), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def reparameterize(mu, sigma, noise):
    """``z = mu + sigma * noise``; differentiable in ``mu`` and ``sigma``."""
    noise = np.asarray(noise, dtype=float)
    if isinstance(mu, nn.Tensor) or isinstance(sigma, nn.Tensor):
        return nn.as_tensor(mu) + nn.as_tensor(sigma) * noise
    mu = np.asarray(mu, dtype=float)
    if mu.shape != noise.shape:
        raise ValueError("mu and noise shapes differ")
    return mu + np.asarray(sigma, dtype=float) * noise


def _check_width(model: VaeModel, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != len(model.features):
        raise SchemaError(f"row width {x.shape[1]} != {len(model.features)} model features")
    return x


def encode(model: VaeModel, x):
    """Posterior mean and standard deviation for transformed rows ``x``."""
    x = _check_width(model, x)
    mu, sigma = model.encoder_graph(x)
    return mu.value, sigma.value


def decode(model: VaeModel, z):
    """Decoder outputs ``(mu_D, sigma_D, pi_D)`` as arrays (``None`` for absent types)."""
    mu, sigma, logits = model.decoder_graph(np.asarray(z, dtype=float))
    return (
        None if mu is None else mu.value,
        None if sigma is None else sigma.value,
        None if logits is None else expit(logits.value),
    )


def elbo_loss(model: VaeModel, batch, noise) -> ElboBreakdown:
    batch = _check_width(model, batch)
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    total, rc, rb, kl = model.loss_graph(batch, noise)
    parts = {
        "reconstruction_continuous": float(rc.value),
        "reconstruction_binary": float(rb.value),
        "kl": float(kl.value),
    }
    for name, v in parts.items():
        if not math.isfinite(v):
            raise FitError(f"non-finite loss term {name}")
    return ElboBreakdown(total=parts["reconstruction_continuous"] + parts["reconstruction_binary"] + parts["kl"], **parts)


def _feature_matrix(model: VaeModel, data: Dataset, pipeline: TransformPipeline | None):
    missing = [n for n in model.feature_names if n not in data.names]
    if missing:
        raise SchemaError(f"dataset lacks model features {missing}")
    feats = data.select(model.feature_names)
    for col, want in zip(feats.schema, model.features):
        if col.kind != want.kind:
            raise SchemaError(f"column {col.name!r} kind {col.kind} != model kind {want.kind}")
    if pipeline is not None:
        feats = apply_pipeline(feats, pipeline)
    return feats.values


def train(data: Dataset, pipeline: TransformPipeline, config: VaeConfig = VaeConfig()) -> VaeModel:
    """Fit a VAE on the feature columns of ``data`` after applying ``pipeline``.

    Mini-batch Adam on the batch-mean loss; the parameters of the best
    epoch (lowest mean loss) are kept.
    """
    features = data.features()
    model = VaeModel(features.schema, config, pipeline.digest)
    model.pipeline = pipeline
    x = _feature_matrix(model, features, pipeline)
    n = x.shape[0]
    rng = np.random.default_rng([config.seed, 1])
    opt = nn.Adam(model.parameters(), lr=config.learning_rate)
    best_loss, best_state = math.inf, model.state()
    bs = max(1, min(config.batch_size, n))
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        sums = np.zeros(4)
        seen = 0
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            noise = rng.standard_normal((len(idx), config.latent_dim))
            total, rc, rb, kl = model.loss_graph(x[idx], noise)
            if not math.isfinite(float(total.value)):
                continue
            opt.zero_grad()
            nn.backward(total)
            opt.step()
            sums += len(idx) * np.array([float(rc.value), float(rb.value), float(kl.value), float(total.value)])
            seen += len(idx)
        if seen == 0:
            raise FitError(f"VAE training diverged in epoch {epoch}")
        rc, rb, kl, tot = sums / seen
        model.training_curve.append(ElboBreakdown(rc, rb, kl, tot))
        if tot < best_loss:
            best_loss, best_state = tot, model.state()
    model.load_state(best_state)
    logger.info("trained VAE: best epoch loss %.4f", best_loss)
    return model


def decode_sample(model: VaeModel, z, rng) -> np.ndarray:
    """Sample transformed feature rows from the decoder at latent points ``z``."""
    z = np.asarray(z, dtype=float)
    out = np.zeros((z.shape[0], len(model.features)))
    if z.shape[0] == 0:
        return out
    mu, sigma, pi = decode(model, z)
    if mu is not None:
        if model.config.mean_output:
            out[:, model.cont_idx] = mu
        else:
            out[:, model.cont_idx] = mu + sigma * rng.standard_normal(mu.shape)
    if pi is not None:
        out[:, model.bin_idx] = (rng.random(pi.shape) < pi).astype(float)
    return out


def to_dataset(model: VaeModel, transformed: np.ndarray, pipeline: TransformPipeline | None) -> Dataset:
    data = Dataset(model.features, transformed)
    if pipeline is not None:
        data = invert_pipeline(data, pipeline)
    return data


def generate_prior(model: VaeModel, pipeline: TransformPipeline | None, n: int, seed=None) -> Dataset:
    """Draw ``n`` rows by decoding ``z ~ N(0, I)`` and undoing the pipeline."""
    pipeline = pipeline if pipeline is not None else model.pipeline
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, model.latent_dim))
    return to_dataset(model, decode_sample(model, z, rng), pipeline)


def generate_from_latent(model: VaeModel, pipeline, z, seed=None) -> Dataset:
    pipeline = pipeline if pipeline is not None else model.pipeline
    rng = np.random.default_rng(seed)
    return to_dataset(model, decode_sample(model, z, rng), pipeline)


def embed(model: VaeModel, data: Dataset, pipeline: TransformPipeline | None = None) -> np.ndarray:
    """Posterior means for every row, shape ``(n, latent_dim)``."""
    pipeline = pipeline if pipeline is not None else model.pipeline
    x = _feature_matrix(model, data, pipeline)
    return encode(model, x)[0]
