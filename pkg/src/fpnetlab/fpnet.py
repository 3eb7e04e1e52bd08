"""Joint feedback-and-positioning network, its two-step training and the sequential baseline."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .channel import CsiBatch, SystemConfig
from .codec import extract_bfm
from .metrics import sgcs

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    codeword_len: int = 20
    quant_bits: int = 5
    conv_filters: int = 2
    kernel: int = 3
    n_subcarriers: int = 28
    n_tx: int = 3
    n_streams: int = 1

    def __post_init__(self):
        if self.codeword_len <= 0 or self.conv_filters <= 0:
            raise ValueError("codeword_len and conv_filters must be positive")
        if not 1 <= self.quant_bits <= 16:
            raise ValueError("quant_bits must lie in [1, 16]")

    @classmethod
    def for_system(cls, system: SystemConfig, **kw) -> "EncoderConfig":
        return cls(n_subcarriers=system.n_valid_subcarriers, n_tx=system.n_tx, n_streams=system.n_streams, **kw)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.n_subcarriers, self.n_tx * self.n_streams, 2)

    @property
    def flatten_len(self) -> int:
        return self.n_subcarriers * self.n_tx * self.n_streams * self.conv_filters

    @property
    def feedback_bits(self) -> int:
        return self.codeword_len * self.quant_bits


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 70.0
    lr_stage1: float = 5e-4
    lr_stage2: float = 1e-4
    epochs_stage1: int = 100
    epochs_stage2: int = 60
    batch: int = 64
    seed: int = 0
    quantize_stage1: bool = True
    early_stopping: bool = False
    patience: int = 20
    # "cosine" anneals the stage-2 rate towards zero so the last epoch is a settled model
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if min(self.lr_stage1, self.lr_stage2) <= 0 or self.batch <= 0:
            raise ValueError("learning rates and batch must be positive")
        if min(self.epochs_stage1, self.epochs_stage2) < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.lr_stage2 > self.lr_stage1:
            raise ValueError("lr_stage2 must not exceed lr_stage1")


# ---------------------------------------------------------------------------
# Data plumbing
# ---------------------------------------------------------------------------


def bfm_to_image(v: np.ndarray) -> np.ndarray:
    """``(P, K, n_tx, n_s)`` complex -> ``(P, K, n_tx*n_s, 2)`` float32 real/imag planes."""
    v = np.asarray(v)
    flat = v.reshape(v.shape[:-2] + (v.shape[-2] * v.shape[-1],))
    return np.stack([flat.real, flat.imag], axis=-1).astype(np.float32)


def image_to_bfm(img: np.ndarray, n_tx: int, n_streams: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    v = img[..., 0] + 1j * img[..., 1]
    return v.reshape(v.shape[:-1] + (n_tx, n_streams))


@dataclass
class BfmData:
    """Beamforming matrices of a CSI batch with their labels."""

    v: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_batch(cls, batch: CsiBatch, n_streams: int = 1) -> "BfmData":
        v = extract_bfm(batch.h.astype(np.complex128), n_streams)
        return cls(v, np.asarray(batch.labels, dtype=np.int64))

    @property
    def images(self) -> np.ndarray:
        if not hasattr(self, "_images"):
            self._images = bfm_to_image(self.v)
        return self._images

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "BfmData":
        return BfmData(self.v[idx], self.labels[idx])

    def labeled(self) -> "BfmData":
        """Samples with a zone label; out-of-region samples carry a negative label."""
        return self.subset(np.flatnonzero(self.labels >= 0))

    @classmethod
    def concat(cls, parts: list["BfmData"]) -> "BfmData":
        return cls(np.concatenate([p.v for p in parts]), np.concatenate([p.labels for p in parts]))


def _as_data(d, n_streams: int = 1) -> BfmData:
    return d if isinstance(d, BfmData) else BfmData.from_batch(d, n_streams)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class FpnetModel(nn.Module):
    """Encoder with quantized codeword, BFM decoder and a positioning head."""

    def __init__(self, enc: EncoderConfig, n_classes: int, *, seed: int = 0, decoder_blocks: int = 4):
        rng = np.random.default_rng(seed)
        h, w, c = enc.image_shape
        self.config = enc
        self.n_classes = n_classes
        self.encoder = nn.Sequential(
            nn.Conv2d(c, enc.conv_filters, enc.kernel, rng=rng),
            nn.BatchNorm(enc.conv_filters),
            nn.Flatten(),
            nn.Dense(enc.flatten_len, enc.codeword_len, rng=rng),
            nn.Tanh(),
        )
        self.quantizer = nn.UniformQuantizerSTE(enc.quant_bits)
        self.decoder = nn.Sequential(
            nn.Dense(enc.codeword_len, h * w * c, rng=rng),
            nn.Reshape((h, w, c)),
            *[nn.ResBlock(c, (8, 16, 32), enc.kernel, rng=rng) for _ in range(decoder_blocks)],
            nn.Conv2d(c, c, enc.kernel, rng=rng),
        )
        self.head = nn.Dense(enc.codeword_len, n_classes, rng=rng)

    def describe(self) -> dict:
        return {
            "type": "FpnetModel",
            "config": asdict(self.config),
            "n_classes": self.n_classes,
            "encoder": self.encoder.describe(),
            "quantizer": self.quantizer.describe(),
            "decoder": self.decoder.describe(),
            "head": self.head.describe(),
        }

    def encode(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        return self.quantizer.forward(self.encoder.forward(x, training), training)

    def forward(self, x, training=False):
        """Returns ``(reconstructed image, logits, codeword)``."""
        code = self.encode(x, training)
        return self.decoder.forward(code, training), self.head.forward(code, training), code

    def backward(self, g_img: np.ndarray | None, g_logits: np.ndarray | None) -> None:
        g = 0.0
        if g_img is not None:
            g = g + self.decoder.backward(g_img)
        if g_logits is not None:
            g = g + self.head.backward(g_logits)
        self.encoder.backward(self.quantizer.backward(g))

    def group(self, name: str) -> list[nn.Parameter]:
        return {"encoder": self.encoder, "decoder": self.decoder, "head": self.head}[name].parameters()

    def state(self) -> dict[str, np.ndarray]:
        out = {n: p.data.copy() for n, p in self.named_parameters()}
        out.update({n: b.copy() for n, b in self.named_buffers()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        for name, arr in state.items():
            if name in params:
                params[name].data = arr.copy()
            else:
                self.set_buffer(name, arr.copy())


def build_model(system: SystemConfig, enc: EncoderConfig | None, n_classes: int, seed: int = 0) -> FpnetModel:
    enc = enc or EncoderConfig.for_system(system)
    if enc.image_shape != (system.n_valid_subcarriers, system.n_tx * system.n_streams, 2):
        raise ValueError("encoder config does not match the system geometry")
    return FpnetModel(enc, n_classes, seed=seed)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class InferResult:
    v_hat: np.ndarray
    probs: np.ndarray
    codeword: np.ndarray

    @property
    def preds(self) -> np.ndarray:
        return np.argmax(self.probs, axis=-1)


def infer(model: FpnetModel, v: np.ndarray, batch: int = 512) -> InferResult:
    """Frozen-model pass over BFMs ``(P, K, n_tx, n_s)``; a single BFM is also accepted."""
    v = np.asarray(v)
    single = v.ndim == 3
    if single:
        v = v[None]
    enc = model.config
    if v.shape[1:] != (enc.n_subcarriers, enc.n_tx, enc.n_streams):
        raise nn.ShapeError(f"expected BFMs of shape {(enc.n_subcarriers, enc.n_tx, enc.n_streams)}, got {v.shape[1:]}")
    x = bfm_to_image(v)
    imgs, logits, codes = [], [], []
    for i in range(0, len(x), batch):
        img, lg, code = model.forward(x[i : i + batch], training=False)
        imgs.append(img)
        logits.append(lg)
        codes.append(code)
    if len(x):
        img, lg, code = np.concatenate(imgs), np.concatenate(logits), np.concatenate(codes)
    else:
        img = np.zeros((0,) + enc.image_shape, np.float32)
        lg = np.zeros((0, model.n_classes), np.float32)
        code = np.zeros((0, enc.codeword_len), np.float32)
    res = InferResult(image_to_bfm(img, enc.n_tx, enc.n_streams), nn.softmax(lg), code)
    if single:
        res = InferResult(res.v_hat[0], res.probs[0], res.codeword[0])
    return res


def evaluate(model: FpnetModel, data) -> dict:
    data = _as_data(data, model.config.n_streams)
    res = infer(model, data.v)
    return {"sgcs": _safe_sgcs(res.v_hat, data.v), "accuracy": float(np.mean(res.preds == data.labels))}


def _safe_sgcs(v_hat, v) -> float:
    # an untrained decoder can emit an all-zero column; count it as zero similarity
    norms = np.sum(np.abs(v_hat) ** 2, axis=-2, keepdims=True)
    v_hat = np.where(norms == 0, 1e-30, v_hat)
    return sgcs(v_hat, v)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainHistory:
    records: list[dict] = field(default_factory=list)

    def append(self, rec: dict) -> None:
        self.records.append(rec)

    def write_jsonl(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def column(self, key: str) -> list:
        return [r[key] for r in self.records]


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, size):
        yield order[i : i + size]


def _stage2_lr(cfg: TrainConfig, epoch: int, epochs: int) -> float:
    if cfg.lr_schedule == "cosine":
        return cfg.lr_stage2 * 0.5 * (1 + math.cos(math.pi * epoch / epochs))
    return cfg.lr_stage2


def _check_loss(loss: float, stage: str, epoch: int, step: int) -> None:
    if not np.isfinite(loss):
        raise DivergenceError(f"{stage}: loss became {loss} at epoch {epoch}, step {step}")


def train_stage1(model: FpnetModel, train, val, cfg: TrainConfig, history: TrainHistory | None = None) -> FpnetModel:
    """Positioning-only pre-training of encoder and head; keeps the best validation-accuracy state.

    Unlabeled samples in ``train`` are skipped.
    """
    train, val = _as_data(train).labeled(), _as_data(val).labeled()
    history = history if history is not None else TrainHistory()
    if cfg.epochs_stage1 == 0 or len(train) == 0:
        return model
    params = model.group("encoder") + model.group("head")
    opt = nn.Adam(params, lr=cfg.lr_stage1)
    rng = np.random.default_rng([cfg.seed, 1])
    x, y = train.images, train.labels
    model.quantizer.bypass = not cfg.quantize_stage1
    best, best_acc, stale = None, -1.0, 0
    try:
        for epoch in range(cfg.epochs_stage1):
            total, count = 0.0, 0
            for step, idx in enumerate(_batches(len(x), cfg.batch, rng)):
                code = model.encode(x[idx], training=True)
                logits = model.head.forward(code, True)
                loss, g = nn.softmax_xent(logits, y[idx])
                _check_loss(loss, "stage 1", epoch, step)
                opt.zero_grad()
                model.encoder.backward(model.quantizer.backward(model.head.backward(g)))
                opt.step()
                total += loss * len(idx)
                count += len(idx)
            model.quantizer.bypass = False
            acc = _accuracy(model, val) if len(val) else float("nan")
            model.quantizer.bypass = not cfg.quantize_stage1
            history.append({"stage": 1, "epoch": epoch, "loss_pos": total / count, "val_accuracy": acc})
            if len(val) == 0 or acc > best_acc:
                best, best_acc, stale = model.state(), acc, 0
            else:
                stale += 1
                if cfg.early_stopping and stale >= cfg.patience:
                    break
    finally:
        model.quantizer.bypass = False
    model.load_state(best)
    return model


def _accuracy(model: FpnetModel, data: BfmData, batch: int = 1024) -> float:
    hits = 0
    for i in range(0, len(data), batch):
        code = model.encode(data.images[i : i + batch])
        hits += int(np.sum(np.argmax(model.head.forward(code), axis=1) == data.labels[i : i + batch]))
    return hits / len(data)


def combined_step(model: FpnetModel, x: np.ndarray, y: np.ndarray, alpha: float, training: bool = True) -> dict:
    """Forward and backward of ``L_pos + alpha * L_bfm``; gradients left on the parameters.

    Samples labeled negative (out of region) contribute to the reconstruction
    term only.
    """
    img, logits, _ = model.forward(x, training)
    known = y >= 0
    if known.all():
        l_pos, g_pos = nn.softmax_xent(logits, y)
    else:
        g_pos = np.zeros_like(logits)
        l_pos = 0.0
        if known.any():
            l_pos, g_pos[known] = nn.softmax_xent(logits[known], y[known])
    l_bfm, g_bfm = nn.mse(img, x)
    model.backward(alpha * g_bfm, g_pos)
    return {"loss": l_pos + alpha * l_bfm, "loss_pos": l_pos, "loss_bfm": l_bfm}


def train_stage2(
    model: FpnetModel,
    train,
    val,
    cfg: TrainConfig,
    history: TrainHistory | None = None,
    *,
    epochs: int | None = None,
    eval_fn: Callable[[FpnetModel], dict] | None = None,
) -> FpnetModel:
    """End-to-end training of every parameter on the combined loss."""
    train, val = _as_data(train), _as_data(val)
    history = history if history is not None else TrainHistory()
    epochs = cfg.epochs_stage2 if epochs is None else epochs
    if epochs == 0 or len(train) == 0:
        return model
    opt = nn.Adam(model.parameters(), lr=cfg.lr_stage2)
    rng = np.random.default_rng([cfg.seed, 2])
    x, y = train.images, train.labels
    best, best_loss, stale = None, np.inf, 0
    for epoch in range(epochs):
        opt.lr = _stage2_lr(cfg, epoch, epochs)
        sums = {"loss": 0.0, "loss_pos": 0.0, "loss_bfm": 0.0}
        n = 0
        for step, idx in enumerate(_batches(len(x), cfg.batch, rng)):
            opt.zero_grad()
            out = combined_step(model, x[idx], y[idx], cfg.alpha)
            _check_loss(out["loss"], "stage 2", epoch, step)
            opt.step()
            for k in sums:
                sums[k] += out[k] * len(idx)
            n += len(idx)
        rec = {"stage": 2, "epoch": epoch, **{k: v / n for k, v in sums.items()}}
        if len(val):
            ev = evaluate(model, val)
            rec["val_sgcs"], rec["val_accuracy"] = ev["sgcs"], ev["accuracy"]
            rec["val_loss"] = _val_loss(model, val, cfg.alpha)
        if eval_fn is not None:
            rec.update(eval_fn(model))
        history.append(rec)
        if cfg.early_stopping and len(val):
            if rec["val_loss"] < best_loss:
                best, best_loss, stale = model.state(), rec["val_loss"], 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if best is not None:
        model.load_state(best)
    return model


def _val_loss(model: FpnetModel, data: BfmData, alpha: float) -> float:
    img, logits, _ = model.forward(data.images, False)
    return nn.softmax_xent(logits, data.labels)[0] + alpha * nn.mse(img, data.images)[0]


@dataclass
class FpnetRun:
    model: FpnetModel
    history: TrainHistory
    metrics: dict


def train_fpnet(
    system: SystemConfig, enc: EncoderConfig | None, train, val, test, n_classes: int, cfg: TrainConfig, unlabeled=None
) -> FpnetRun:
    """Both training steps followed by a test-set evaluation.

    ``unlabeled`` (e.g. out-of-region captures) joins the reconstruction
    objective of the second step so the decoder also covers that region.
    """
    ns = system.n_streams
    train, val, test = _as_data(train, ns), _as_data(val, ns), _as_data(test, ns)
    if unlabeled is not None:
        extra = _as_data(unlabeled, ns)
        train = BfmData.concat([train, BfmData(extra.v, np.full(len(extra), -1, dtype=np.int64))])
    model = build_model(system, enc, n_classes, seed=cfg.seed)
    hist = TrainHistory()
    train_stage1(model, train, val, cfg, hist)
    train_stage2(model, train, val, cfg, hist)
    return FpnetRun(model, hist, evaluate(model, test))


def fine_tune(model: FpnetModel, new_data, n_samples: int, epochs: int, cfg: TrainConfig, test=None, seed: int = 0):
    """Continue combined-loss training on ``n_samples`` drawn class-balanced from ``new_data``.

    Returns the model and per-epoch test curves.
    """
    data = _as_data(new_data, model.config.n_streams)
    if n_samples > len(data):
        raise ValueError(f"n_samples={n_samples} exceeds the {len(data)} available samples")
    idx = balanced_subset(data.labels, n_samples, seed)
    sub = data.subset(idx)
    hist = TrainHistory()
    test = _as_data(test, model.config.n_streams) if test is not None else None
    eval_fn = (lambda m: {f"test_{k}": v for k, v in evaluate(m, test).items()}) if test is not None else None
    train_stage2(model, sub, BfmData(sub.v[:0], sub.labels[:0]), replace(cfg, early_stopping=False), hist, epochs=epochs, eval_fn=eval_fn)
    return model, hist


def balanced_subset(labels: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    """Indices of ``n`` samples spread round-robin over classes, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    pools = [rng.permutation(np.flatnonzero(labels == c)).tolist() for c in np.unique(labels)]
    out: list[int] = []
    while len(out) < n:
        for pool in pools:
            if pool and len(out) < n:
                out.append(pool.pop())
    return np.sort(np.array(out, dtype=np.int64))


# ---------------------------------------------------------------------------
# Sequential baseline
# ---------------------------------------------------------------------------


class PositioningNet(nn.Module):
    """FPNet's encoder-to-head path without the quantizer, used on reconstructed BFMs."""

    def __init__(self, enc: EncoderConfig, n_classes: int, *, seed: int = 0):
        rng = np.random.default_rng(seed)
        c = enc.image_shape[2]
        self.net = nn.Sequential(
            nn.Conv2d(c, enc.conv_filters, enc.kernel, rng=rng),
            nn.BatchNorm(enc.conv_filters),
            nn.Flatten(),
            nn.Dense(enc.flatten_len, enc.codeword_len, rng=rng),
            nn.Tanh(),
            nn.Dense(enc.codeword_len, n_classes, rng=rng),
        )

    def describe(self) -> dict:
        return {"type": "PositioningNet", "net": self.net.describe()}

    def forward(self, x, training=False):
        return self.net.forward(x, training)

    def backward(self, grad):
        return self.net.backward(grad)


def train_classifier(
    x: np.ndarray,
    labels: np.ndarray,
    val_x: np.ndarray | None,
    val_labels: np.ndarray | None,
    enc: EncoderConfig,
    n_classes: int,
    cfg: TrainConfig,
    history: TrainHistory | None = None,
    rng: np.random.Generator | None = None,
) -> PositioningNet:
    """Fit a :class:`PositioningNet` on images with the stage-1 schedule, keeping the best validation epoch."""
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 5])
    clf = PositioningNet(enc, n_classes, seed=cfg.seed)
    opt = nn.Adam(clf.parameters(), lr=cfg.lr_stage1)
    best, best_acc = None, -1.0
    for epoch in range(cfg.epochs_stage1):
        total = 0.0
        for step, idx in enumerate(_batches(len(x), cfg.batch, rng)):
            loss, g = nn.softmax_xent(clf.forward(x[idx], True), labels[idx])
            _check_loss(loss, "classifier", epoch, step)
            opt.zero_grad()
            clf.backward(g)
            opt.step()
            total += loss * len(idx)
        rec = {"stage": "clf", "epoch": epoch, "loss_pos": total / len(x)}
        if val_x is not None and len(val_x):
            acc = float(np.mean(np.argmax(clf.forward(val_x), axis=1) == val_labels))
            rec["val_accuracy"] = acc
            if acc > best_acc:
                best_acc = acc
                best = [p.data.copy() for p in clf.parameters()], [b.copy() for _, b in clf.named_buffers()]
        if history is not None:
            history.append(rec)
    if best is not None:
        for p, d in zip(clf.parameters(), best[0]):
            p.data = d
        for (name, _), b in zip(clf.named_buffers(), best[1]):
            clf.set_buffer(name, b)
    return clf


def classifier_accuracy(clf: PositioningNet, x: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(clf.forward(x), axis=1) == labels))


@dataclass
class SequentialBaseline:
    autoencoder: FpnetModel
    classifier: PositioningNet
    history: TrainHistory

    def predict(self, v: np.ndarray) -> InferResult:
        res = infer(self.autoencoder, v)
        logits = self.classifier.forward(bfm_to_image(res.v_hat))
        return InferResult(res.v_hat, nn.softmax(logits), res.codeword)

    def evaluate(self, data) -> dict:
        data = _as_data(data, self.autoencoder.config.n_streams)
        res = self.predict(data.v)
        return {"sgcs": _safe_sgcs(res.v_hat, data.v), "accuracy": float(np.mean(res.preds == data.labels))}


def train_sequential_baseline(
    system: SystemConfig, enc: EncoderConfig | None, train, val, n_classes: int, cfg: TrainConfig, unlabeled=None
) -> SequentialBaseline:
    """Autoencoder on the reconstruction loss alone, then a classifier on its reconstructions.

    The autoencoder gets the joint model's decoder schedule (stage-2 epochs and
    learning rate) and the classifier gets the stage-1 schedule, so neither
    side of the comparison trains longer.
    """
    train, val = _as_data(train, system.n_streams).labeled(), _as_data(val, system.n_streams)
    enc = enc or EncoderConfig.for_system(system)
    ae = build_model(system, enc, n_classes, seed=cfg.seed)
    hist = TrainHistory()
    x = train.images
    if unlabeled is not None:
        x = np.concatenate([x, _as_data(unlabeled, system.n_streams).images])
    rng = np.random.default_rng([cfg.seed, 3])
    params = ae.group("encoder") + ae.group("decoder")
    opt = nn.Adam(params, lr=cfg.lr_stage2)
    for epoch in range(cfg.epochs_stage2):
        opt.lr = _stage2_lr(cfg, epoch, cfg.epochs_stage2)
        total = 0.0
        for step, idx in enumerate(_batches(len(x), cfg.batch, rng)):
            img, _, _ = ae.forward(x[idx], True)
            loss, g = nn.mse(img, x[idx])
            _check_loss(loss, "baseline autoencoder", epoch, step)
            opt.zero_grad()
            ae.backward(g, None)
            opt.step()
            total += loss * len(idx)
        rec = {"stage": "ae", "epoch": epoch, "loss_bfm": total / len(x)}
        if len(val):
            rec["val_sgcs"] = evaluate(ae, val)["sgcs"]
        hist.append(rec)

    recon = bfm_to_image(infer(ae, train.v).v_hat)
    val_recon = bfm_to_image(infer(ae, val.v).v_hat) if len(val) else None
    clf = train_classifier(recon, train.labels, val_recon, val.labels, enc, n_classes, cfg, hist, rng)
    return SequentialBaseline(ae, clf, hist)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_fpnet(path, model: FpnetModel, manifest: dict | None = None) -> str:
    meta = {"encoder_config": asdict(model.config), "n_classes": model.n_classes, **(manifest or {})}
    return nn.save_checkpoint(path, model, meta)


def load_fpnet(path) -> tuple[FpnetModel, dict]:
    header = nn.read_header(path)
    meta = header["metadata"]
    model = FpnetModel(EncoderConfig(**meta["encoder_config"]), meta["n_classes"])
    nn.load_checkpoint(path, model)
    return model, meta
