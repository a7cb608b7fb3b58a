"""Network roles: the classifier under explanation, the image-reconstructing
reference autoencoder, and the per-method autoencoders that map images to a
method's explanations.

All autoencoders share one architecture (latent dimension 128) and, within a
comparison run, one init seed, so reconstruction quality differences come
from the targets alone.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .errors import DegenerateDatasetWarning, DivergedTraining, ShapeMismatch
from .metrics import MetricVector, evaluate_pair_set
from .nn import AdamState, Network, adam_step, build_network, l1_loss, mse_loss, softmax_cross_entropy

CHECKPOINT_VERSION = 1

LATENT_DIM = 128


def classifier_config() -> list[dict]:
    """conv-conv-dense-dense ReLU classifier, ~100k parameters."""
    return [
        {"kind": "conv2d", "in_ch": 1, "out_ch": 16, "kernel": 3, "stride": 2, "pad": 1},
        {"kind": "relu"},
        {"kind": "conv2d", "in_ch": 16, "out_ch": 32, "kernel": 3, "stride": 2, "pad": 1},
        {"kind": "relu"},
        {"kind": "flatten"},
        {"kind": "dense", "in_dim": 32 * 7 * 7, "out_dim": 64},
        {"kind": "relu"},
        {"kind": "dense", "in_dim": 64, "out_dim": 10},
    ]


def autoencoder_config() -> tuple[list[dict], int]:
    """Strided-conv encoder to a 128-d latent, upsample+conv decoder with a
    sigmoid output; returns (layer configs, number of encoder layers)."""
    encoder = [
        {"kind": "conv2d", "in_ch": 1, "out_ch": 16, "kernel": 3, "stride": 2, "pad": 1},
        {"kind": "relu"},
        {"kind": "conv2d", "in_ch": 16, "out_ch": 32, "kernel": 3, "stride": 2, "pad": 1},
        {"kind": "relu"},
        {"kind": "flatten"},
        {"kind": "dense", "in_dim": 32 * 7 * 7, "out_dim": LATENT_DIM},
    ]
    decoder = [
        {"kind": "dense", "in_dim": LATENT_DIM, "out_dim": 32 * 7 * 7},
        {"kind": "relu"},
        {"kind": "reshape", "target": [7, 7, 32]},
        {"kind": "upsample2d", "factor": 2},
        {"kind": "conv2d", "in_ch": 32, "out_ch": 16, "kernel": 3, "stride": 1, "pad": 1},
        {"kind": "relu"},
        {"kind": "upsample2d", "factor": 2},
        {"kind": "conv2d", "in_ch": 16, "out_ch": 1, "kernel": 3, "stride": 1, "pad": 1},
        {"kind": "sigmoid"},
    ]
    return encoder + decoder, len(encoder)


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-5
    batch_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ClassifierModel:
    net: Network
    metadata: dict = field(default_factory=dict)

    def logits(self, images: np.ndarray, chunk: int = 512) -> np.ndarray:
        return _chunked_forward(self.net, _as_nhwc(images), chunk)

    def predict(self, images: np.ndarray) -> np.ndarray:
        return self.logits(images).argmax(axis=1)

    def accuracy(self, ds: LabeledDataset) -> float:
        return float((self.predict(ds.images) == ds.labels).mean())


@dataclass
class AutoencoderModel:
    net: Network
    n_encoder_layers: int
    role: str = "ae_ref"  # or "ae_method:<method id>"
    metadata: dict = field(default_factory=dict)

    def encode(self, images: np.ndarray, chunk: int = 512) -> np.ndarray:
        """Deterministic 128-d latents for a batch of grids."""
        encoder = Network(self.net.layers[: self.n_encoder_layers])
        return _chunked_forward(encoder, _as_nhwc(images), chunk)

    def reconstruct(self, images: np.ndarray, chunk: int = 512) -> np.ndarray:
        """Sigmoid-range reconstructions shaped like the input grids."""
        out = _chunked_forward(self.net, _as_nhwc(images), chunk)
        return out[..., 0] if np.asarray(images).ndim != 2 else out[0, ..., 0]


def _as_nhwc(images: np.ndarray) -> np.ndarray:
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    return images[..., None].astype(np.float32, copy=False)


def _chunked_forward(net: Network, x: np.ndarray, chunk: int) -> np.ndarray:
    outs = [net.forward(x[i : i + chunk])[0] for i in range(0, len(x), chunk)]
    return np.concatenate(outs, axis=0)


def train_classifier(
    train: LabeledDataset, test: LabeledDataset, cfg: TrainConfig
) -> ClassifierModel:
    """Train the classifier under explanation; test accuracy lands in metadata."""
    if len(train) == 0:
        raise ValueError("empty training set")
    if len(np.unique(train.labels)) == 1:
        warnings.warn("training set has a single class", DegenerateDatasetWarning)
    net = build_network(classifier_config(), seed=cfg.seed)
    state = AdamState(net.parameters())
    rng = np.random.default_rng(cfg.seed + 1)
    x_all = _as_nhwc(train.images)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits, tape = net.forward(x_all[idx], record=True)
            loss, gloss = softmax_cross_entropy(logits, train.labels[idx])
            if not np.isfinite(loss):
                raise DivergedTraining("classifier loss became non-finite")
            grads, _ = net.backward(tape, gloss.astype(logits.dtype))
            adam_step(net.parameters(), net.flatten_grads(grads), state,
                      cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    model = ClassifierModel(net=net)
    model.metadata = {
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "test_accuracy": model.accuracy(test),
    }
    return model


def train_autoencoder(
    train_inputs: np.ndarray,
    train_targets: np.ndarray,
    cfg: TrainConfig,
    test_inputs: np.ndarray | None = None,
    test_targets: np.ndarray | None = None,
    role: str = "ae_ref",
    loss: str = "l1",
    k_fraction: float = 0.25,
    monotonic_check: bool = False,
) -> tuple[AutoencoderModel, list[MetricVector]]:
    """Train an autoencoder on (image, target grid) pairs.

    Targets must already be normalized to [0, 1]. When a test split is given,
    the six reconstruction measurements are evaluated on it after every epoch
    and returned as the metric curve.

    With monotonic_check=True (the reference-autoencoder contract) a rise in
    the window-5 smoothed training loss fails the run.
    """
    loss_fn = {"l1": l1_loss, "mse": mse_loss}[loss]
    x_all = _as_nhwc(train_inputs)
    t_all = _as_nhwc(train_targets)
    if x_all.shape != t_all.shape:
        raise ShapeMismatch("inputs %s vs targets %s" % (x_all.shape, t_all.shape))
    configs, n_enc = autoencoder_config()
    net = build_network(configs, seed=cfg.seed)
    state = AdamState(net.parameters())
    rng = np.random.default_rng(cfg.seed + 1)
    model = AutoencoderModel(net=net, n_encoder_layers=n_enc, role=role)
    curve: list[MetricVector] = []
    epoch_losses: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x_all))
        running = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            y, tape = net.forward(x_all[idx], record=True)
            value, gloss = loss_fn(y, t_all[idx])
            if not np.isfinite(value):
                raise DivergedTraining("autoencoder loss became non-finite")
            running += value * len(idx)
            grads, _ = net.backward(tape, gloss.astype(y.dtype))
            adam_step(net.parameters(), net.flatten_grads(grads), state,
                      cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        epoch_losses.append(running / len(order))
        if test_inputs is not None:
            recon = model.reconstruct(test_inputs)
            curve.append(evaluate_pair_set(test_targets, recon, k_fraction))
    if monotonic_check:
        _check_smoothed_descent(epoch_losses)
    model.metadata = {
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "loss": loss,
        "train_loss": epoch_losses,
    }
    return model, curve


def _check_smoothed_descent(losses: list[float], window: int = 5, slack: float = 1e-4) -> None:
    if len(losses) < window + 1:
        return
    kernel = np.ones(window) / window
    smoothed = np.convolve(np.asarray(losses), kernel, mode="valid")
    rise = np.diff(smoothed).max(initial=0.0)
    if rise > slack:
        raise DivergedTraining(
            "smoothed training loss increased by %g over an epoch" % rise
        )


# -- checkpoints --------------------------------------------------------------


def save_model(path: str, model: ClassifierModel | AutoencoderModel) -> None:
    """Write a self-describing checkpoint (layer configs + parameters)."""
    if isinstance(model, AutoencoderModel):
        meta = {
            "version": CHECKPOINT_VERSION,
            "model": "autoencoder",
            "n_encoder_layers": model.n_encoder_layers,
            "role": model.role,
            "layers": model.net.config(),
            "metadata": model.metadata,
        }
    else:
        meta = {
            "version": CHECKPOINT_VERSION,
            "model": "classifier",
            "layers": model.net.config(),
            "metadata": model.metadata,
        }
    arrays = {"p%03d" % i: p for i, p in enumerate(model.net.parameters())}
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_model(path: str) -> ClassifierModel | AutoencoderModel:
    with np.load(path) as blob:
        meta = json.loads(blob["meta"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version %r" % meta.get("version"))
        arrays = [blob[k] for k in sorted(k for k in blob.files if k.startswith("p"))]
    net = build_network(meta["layers"])
    net.set_parameters(arrays)
    if meta["model"] == "autoencoder":
        return AutoencoderModel(
            net=net,
            n_encoder_layers=meta["n_encoder_layers"],
            role=meta["role"],
            metadata=meta["metadata"],
        )
    return ClassifierModel(net=net, metadata=meta["metadata"])
