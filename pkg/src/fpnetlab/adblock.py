"""Access-point anomaly detector over reconstructed beamforming matrices."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .fpnet import BfmData, EncoderConfig, FpnetModel, TrainHistory, _batches, bfm_to_image, infer
from .metrics import ad_metrics


@dataclass(frozen=True)
class AdConfig:
    latent_len: int = 20
    kernel: int = 3
    epochs: int = 60
    lr: float = 1e-4
    batch: int = 64
    seed: int = 0
    grid: int = 400

    def __post_init__(self):
        if self.kernel not in (3, 5):
            raise ValueError("kernel must be 3 or 5")
        if self.epochs < 0 or self.lr <= 0 or self.batch <= 0 or self.latent_len <= 0:
            raise ValueError("invalid ADBlock training settings")


class AdblockModel(nn.Module):
    """Autoencoder with an unquantized latent and a two-block residual decoder."""

    def __init__(self, enc: EncoderConfig, cfg: AdConfig):
        rng = np.random.default_rng(cfg.seed)
        h, w, c = enc.image_shape
        self.image_shape = enc.image_shape
        self.cfg = cfg
        self.threshold: float | None = None
        self.encoder = nn.Sequential(
            nn.Conv2d(c, enc.conv_filters, cfg.kernel, rng=rng),
            nn.BatchNorm(enc.conv_filters),
            nn.Flatten(),
            nn.Dense(h * w * enc.conv_filters, cfg.latent_len, rng=rng),
            nn.Tanh(),
        )
        self.decoder = nn.Sequential(
            nn.Dense(cfg.latent_len, h * w * c, rng=rng),
            nn.Reshape((h, w, c)),
            *[nn.ResBlock(c, (8, 16, 32), cfg.kernel, rng=rng) for _ in range(2)],
            nn.Conv2d(c, c, cfg.kernel, rng=rng),
        )

    def describe(self) -> dict:
        return {"type": "AdblockModel", "encoder": self.encoder.describe(), "decoder": self.decoder.describe()}

    def forward(self, x, training=False):
        return self.decoder.forward(self.encoder.forward(x, training), training)

    def backward(self, grad):
        return self.encoder.backward(self.decoder.backward(grad))


def reconstruct_bfm(fpnet: FpnetModel, data) -> np.ndarray:
    """FPNet decoder outputs as images, the input the detector sees."""
    v = data.v if isinstance(data, BfmData) else np.asarray(data)
    return bfm_to_image(infer(fpnet, v).v_hat)


def train_adblock(fpnet: FpnetModel, normal, cfg: AdConfig, history: TrainHistory | None = None) -> AdblockModel:
    """Fit the autoencoder to FPNet reconstructions of in-region data. ``fpnet`` is only read."""
    data = normal if isinstance(normal, BfmData) else BfmData.from_batch(normal, fpnet.config.n_streams)
    if len(data) == 0:
        raise ValueError("empty normal training set")
    x = reconstruct_bfm(fpnet, data)
    return train_adblock_images(x, fpnet.config, cfg, history)


def train_adblock_images(x: np.ndarray, enc: EncoderConfig, cfg: AdConfig, history: TrainHistory | None = None) -> AdblockModel:
    if len(x) == 0:
        raise ValueError("empty normal training set")
    model = AdblockModel(enc, cfg)
    opt = nn.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 4])
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in _batches(len(x), cfg.batch, rng):
            loss, g = nn.mse(model.forward(x[idx], True), x[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"ADBlock loss became {loss} at epoch {epoch}")
            opt.zero_grad()
            model.backward(g)
            opt.step()
            total += loss * len(idx)
        if history is not None:
            history.append({"stage": "adblock", "epoch": epoch, "loss": total / len(x)})
    return model


def anomaly_scores(model: AdblockModel, x: np.ndarray, batch: int = 1024) -> np.ndarray:
    """Mean squared secondary-reconstruction error per sample."""
    x = np.asarray(x, dtype=np.float32)
    if x.shape[1:] != model.image_shape:
        raise nn.ShapeError(f"expected inputs of shape {model.image_shape}, got {x.shape[1:]}")
    out = np.empty(len(x))
    for i in range(0, len(x), batch):
        xb = x[i : i + batch]
        d = model.forward(xb).astype(np.float64) - xb
        out[i : i + batch] = np.mean(d.reshape(len(xb), -1) ** 2, axis=1)
    return out


def anomaly_score(model: AdblockModel, v_prime: np.ndarray) -> float:
    """Score of a single reconstructed image ``(K, n_tx*n_s, 2)``."""
    return float(anomaly_scores(model, np.asarray(v_prime)[None])[0])


@dataclass
class SweepCurve:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    precision: np.ndarray  # NaN where nothing is flagged
    f1: np.ndarray  # NaN where precision is undefined
    best: int = field(default=0)

    @property
    def threshold(self) -> float:
        return float(self.thresholds[self.best])

    def rows(self) -> list[dict]:
        return [
            {"threshold": float(t), "tpr": float(a), "fpr": float(b), "precision": float(p), "f1": float(f)}
            for t, a, b, p, f in zip(self.thresholds, self.tpr, self.fpr, self.precision, self.f1)
        ]

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["threshold", "tpr", "fpr", "precision", "f1"])
            w.writeheader()
            w.writerows(self.rows())


def sweep_threshold(normal_scores, anomaly_scores_, grid: int = 400) -> SweepCurve:
    """Evaluate detection rates on an even grid over the observed score range.

    The first grid point sits just below the smallest score so that every
    sample is flagged there. The chosen threshold maximizes F1, preferring
    lower FPR among ties.
    """
    normal = np.asarray(normal_scores, dtype=np.float64)
    anom = np.asarray(anomaly_scores_, dtype=np.float64)
    if normal.size == 0 or anom.size == 0:
        raise ValueError("both score sets must be non-empty")
    both = np.concatenate([normal, anom])
    lo, hi = float(both.min()), float(both.max())
    th = np.linspace(lo, hi, max(grid, 2))
    th[0] = np.nextafter(lo, -np.inf)
    tpr, fpr, prec, f1 = (np.empty(len(th)) for _ in range(4))
    truth = np.concatenate([np.zeros(normal.size, bool), np.ones(anom.size, bool)])
    for i, t in enumerate(th):
        m = ad_metrics(both > t, truth)
        tpr[i], fpr[i] = m.tpr, m.fpr
        prec[i] = np.nan if m.precision is None else m.precision
        f1[i] = np.nan if m.f1 is None else m.f1
    f1_key = np.where(np.isnan(f1), -1.0, f1)
    best = int(np.lexsort((fpr, -f1_key))[0])
    return SweepCurve(th, tpr, fpr, prec, f1, best)


def detect(model: AdblockModel, v_prime: np.ndarray, lam: float | np.ndarray | None = None, classes=None) -> np.ndarray:
    """True where the sample is anomalous (score strictly above the threshold).

    ``lam`` may be a per-class array, in which case ``classes`` picks each
    sample's threshold.
    """
    lam = model.threshold if lam is None else lam
    if lam is None:
        raise ValueError("detector has no calibrated threshold")
    x = np.asarray(v_prime)
    single = x.ndim == 3
    scores = anomaly_scores(model, x[None] if single else x)
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim == 1:
        if classes is None:
            raise ValueError("per-class thresholds need the predicted classes")
        lam = lam[np.asarray(classes)]
    flags = scores > lam
    return flags[0] if single else flags


def per_class_thresholds(normal_scores, normal_classes, anomaly_scores_, anomaly_classes, n_classes: int, grid: int = 400) -> np.ndarray:
    """Threshold per predicted class, falling back to the global one for sparse classes."""
    normal_scores, anomaly_scores_ = np.asarray(normal_scores), np.asarray(anomaly_scores_)
    normal_classes, anomaly_classes = np.asarray(normal_classes), np.asarray(anomaly_classes)
    glob = sweep_threshold(normal_scores, anomaly_scores_, grid).threshold
    out = np.full(n_classes, glob)
    for c in range(n_classes):
        n, a = normal_scores[normal_classes == c], anomaly_scores_[anomaly_classes == c]
        if n.size and a.size:
            out[c] = sweep_threshold(n, a, grid).threshold
    return out


def misrouting_report(fpnet: FpnetModel, ood) -> np.ndarray:
    """Fraction of out-of-region inputs the positioning head assigns to each class."""
    v = ood.v if isinstance(ood, BfmData) else np.asarray(ood)
    preds = infer(fpnet, v).preds
    if len(preds) == 0:
        return np.zeros(fpnet.n_classes)
    return np.bincount(preds, minlength=fpnet.n_classes) / len(preds)
