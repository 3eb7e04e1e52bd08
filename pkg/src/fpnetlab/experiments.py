"""Experiment pipelines behind the command line: data, training, sweeps and reports.

Each function takes a resolved :class:`ExperimentConfig` and returns plain
dictionaries and rows so callers can serialize them however they like.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import channel as ch
from . import codec
from .adblock import anomaly_scores, misrouting_report, reconstruct_bfm, sweep_threshold, train_adblock
from .config import ExperimentConfig
from .fpnet import (
    BfmData,
    FpnetModel,
    FpnetRun,
    SequentialBaseline,
    TrainHistory,
    bfm_to_image,
    build_model,
    classifier_accuracy,
    evaluate,
    fine_tune,
    infer,
    train_classifier,
    train_fpnet,
    train_sequential_baseline,
)
from .knn import knn_select
from .metrics import ad_metrics, gamma_from_evm, gross_throughput, net_throughput, sgcs, simulate_link_evm

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test", "ood_train", "ood_test")


@dataclass
class Splits:
    env: ch.EnvironmentModel
    train: ch.CsiBatch
    val: ch.CsiBatch
    test: ch.CsiBatch
    ood_train: ch.CsiBatch
    ood_test: ch.CsiBatch

    def bfm(self, name: str) -> BfmData:
        return BfmData.from_batch(getattr(self, name), self.env.system.n_streams)

    @property
    def n_classes(self) -> int:
        return self.env.n_zones


def make_environment(cfg: ExperimentConfig, n_zones: int | None = None) -> ch.EnvironmentModel:
    e = cfg.environment
    return ch.generate_environment(
        cfg.system,
        n_zones or e.n_zones,
        e.n_scatterers,
        e.seed,
        base_grid=tuple(e.base_grid),
        zone_size=e.zone_size,
        jitter_radius=e.jitter_radius,
        wall_loss_db=e.wall_loss_db,
        scatter_gain=e.scatter_gain,
        n_corridor_scatterers=e.n_corridor_scatterers,
        link_budget=e.link_budget,
    )


def make_splits(cfg: ExperimentConfig, env: ch.EnvironmentModel | None = None, n_per_zone: int | None = None, seed_offset: int = 0) -> Splits:
    env = env or make_environment(cfg)
    d = cfg.data
    snr = cfg.environment.snr_db
    batch = ch.sample_all_zones(env, n_per_zone or d.n_per_zone, snr, d.seed + seed_offset)
    train, val, test = ch.split_dataset(batch, d.splits, d.split_seed)
    ood = ch.sample_csi(env, ch.OOD_LABEL, d.n_ood, snr, d.ood_seed + seed_offset)
    half = len(ood) // 2
    return Splits(env, train, val, test, ood.subset(np.arange(half)), ood.subset(np.arange(half, len(ood))))


def write_splits(splits: Splits, directory) -> None:
    for name in SPLIT_NAMES:
        ch.write_dataset(getattr(splits, name), f"{directory}/{name}")


def read_splits(cfg: ExperimentConfig, directory) -> Splits:
    parts = {name: ch.read_dataset(f"{directory}/{name}") for name in SPLIT_NAMES}
    return Splits(make_environment(cfg), **parts)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def fit_fpnet(cfg: ExperimentConfig, splits: Splits, codeword_len: int | None = None, alpha: float | None = None) -> FpnetRun:
    train_cfg = cfg.train if alpha is None else replace(cfg.train, alpha=alpha)
    unlabeled = splits.ood_train if cfg.data.ood_in_training and len(splits.ood_train) else None
    return train_fpnet(
        cfg.system,
        cfg.encoder_config(codeword_len),
        splits.train,
        splits.val,
        splits.test,
        splits.n_classes,
        train_cfg,
        unlabeled=unlabeled,
    )


def fit_sequential(cfg: ExperimentConfig, splits: Splits, codeword_len: int | None = None) -> SequentialBaseline:
    unlabeled = splits.ood_train if cfg.data.ood_in_training and len(splits.ood_train) else None
    return train_sequential_baseline(
        cfg.system, cfg.encoder_config(codeword_len), splits.train, splits.val, splits.n_classes, cfg.train, unlabeled
    )


def copy_model(model: FpnetModel) -> FpnetModel:
    out = FpnetModel(model.config, model.n_classes)
    out.load_state(model.state())
    return out


# ---------------------------------------------------------------------------
# Link and method rows
# ---------------------------------------------------------------------------


def link_metrics(cfg: ExperimentConfig, h: np.ndarray, v_hat: np.ndarray, feedback_bits: int) -> dict:
    """EVM over every test subcarrier, then the MCS step and both throughputs."""
    k = h.shape[1]
    evm = simulate_link_evm(
        h.reshape(-1, *h.shape[2:]),
        v_hat.reshape(-1, *v_hat.shape[2:]),
        cfg.link.snr_db,
        cfg.link.n_symbols,
        cfg.link.seed,
    )
    gamma = gamma_from_evm(evm, cfg.link.table())
    out = {"evm_db": evm, "gamma": gamma, "feedback_bits": int(feedback_bits), "r_gross": None, "r_net": None}
    if gamma > 0:
        r_gross = gross_throughput(gamma, cfg.system)
        out["r_gross"] = r_gross
        out["r_net"] = net_throughput(r_gross, feedback_bits, cfg.timing)
    assert k == cfg.system.n_valid_subcarriers
    return out


def fpnet_row(cfg: ExperimentConfig, model: FpnetModel, test: BfmData, h: np.ndarray, method: str = "FPNet") -> dict:
    res = infer(model, test.v)
    row = {
        "method": method,
        "codeword_len": model.config.codeword_len,
        "sgcs": sgcs(res.v_hat, test.v),
        "accuracy": float(np.mean(res.preds == test.labels)),
    }
    row.update(link_metrics(cfg, h, res.v_hat, model.config.feedback_bits))
    return row


def sequential_row(cfg: ExperimentConfig, base: SequentialBaseline, test: BfmData, h: np.ndarray) -> dict:
    res = base.predict(test.v)
    row = {
        "method": "S-FPNet",
        "codeword_len": base.autoencoder.config.codeword_len,
        "sgcs": sgcs(res.v_hat, test.v),
        "accuracy": float(np.mean(res.preds == test.labels)),
    }
    row.update(link_metrics(cfg, h, res.v_hat, base.autoencoder.config.feedback_bits))
    return row


def codec_rows(cfg: ExperimentConfig, test: BfmData, h: np.ndarray) -> list[dict]:
    s = cfg.system
    rows = []
    for kind in (codec.FeedbackKind.TYPE0, codec.FeedbackKind.TYPE1):
        v_hat = codec.codec_roundtrip(test.v, kind)
        bits = codec.feedback_bits(kind, s.n_tx, s.n_streams, s.n_valid_subcarriers)
        row = {"method": f"Type{int(kind)}", "codeword_len": None, "sgcs": sgcs(v_hat, test.v), "accuracy": None}
        row.update(link_metrics(cfg, h, v_hat, bits))
        rows.append(row)
    return rows


def knn_rows(cfg: ExperimentConfig, splits: Splits) -> tuple[list[dict], dict]:
    """KNN against the positioning network, both on uncompressed canonical BFMs."""
    train, val, test = splits.bfm("train"), splits.bfm("val"), splits.bfm("test")
    res = knn_select(train, val, test, cfg.sweeps.knn_ks)
    hist = TrainHistory()
    clf = train_classifier(
        train.images, train.labels, val.images, val.labels, cfg.encoder_config(), splits.n_classes, cfg.train, hist
    )
    rows = [
        {"method": "KNN", "k": res.k, "accuracy": res.test_accuracy},
        {"method": "PositioningNet", "k": None, "accuracy": classifier_accuracy(clf, test.images, test.labels)},
    ]
    return rows, {"knn_val_accuracy": {str(k): v for k, v in res.val_accuracy.items()}, "history": hist}


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def sweep_alpha(cfg: ExperimentConfig, splits: Splits, alphas=None, on_run=None) -> list[dict]:
    rows = []
    for alpha in alphas or cfg.sweeps.alphas:
        run = fit_fpnet(cfg, splits, alpha=alpha)
        val = evaluate(run.model, splits.bfm("val"))
        rows.append(
            {"alpha": float(alpha), "sgcs": run.metrics["sgcs"], "accuracy": run.metrics["accuracy"],
             "val_sgcs": val["sgcs"], "val_accuracy": val["accuracy"]}
        )
        if on_run is not None:
            on_run(f"alpha_{alpha:g}", run)
    return rows


def sweep_bits(cfg: ExperimentConfig, splits: Splits, lens=None, on_run=None) -> list[dict]:
    test = splits.bfm("test")
    rows = []
    for n in lens or cfg.sweeps.codeword_lens:
        run = fit_fpnet(cfg, splits, codeword_len=n)
        val = evaluate(run.model, splits.bfm("val"))
        row = fpnet_row(cfg, run.model, test, splits.test.h)
        row.update({"val_sgcs": val["sgcs"], "val_accuracy": val["accuracy"]})
        rows.append(row)
        if on_run is not None:
            on_run(f"N_{n}", run)
    for row in codec_rows(cfg, test, splits.test.h):
        rows.append({**row, "val_sgcs": None, "val_accuracy": None})
    return rows


def sweep_zones(cfg: ExperimentConfig, counts=None, on_run=None) -> list[dict]:
    """Retrain per zone count on one fingerprint set, relabelled per partition.

    Packets are drawn once around the cell centres of the common refinement of
    every requested grid, so coarser grids merge whole cells and finer ones
    never cut through a cluster. Only the labels change between counts.
    """
    base = make_environment(cfg)
    counts = list(counts or cfg.sweeps.zone_counts)
    total = cfg.data.n_per_zone * base.n_zones
    grids = [ch.nested_zone_grid(base.base_grid, n, base.floor) for n in counts]
    fine_rows = math.lcm(*(g[0] for g in grids))
    fine_cols = math.lcm(*(g[1] for g in grids))
    fine = ch.with_grid(base, fine_rows, fine_cols)
    shared = make_splits(cfg, fine, n_per_zone=max(total // fine.n_zones, 10))
    rows = []
    for n in counts:
        env = ch.nested_zones(base, n)
        parts = {
            name: replace(b, labels=ch.relabel_zones(base, b.positions, n)) if name in ("train", "val", "test") else b
            for name, b in ((name, getattr(shared, name)) for name in SPLIT_NAMES)
        }
        run = fit_fpnet(cfg, Splits(env, **parts))
        rows.append({"n_zones": n, "sgcs": run.metrics["sgcs"], "accuracy": run.metrics["accuracy"]})
        if on_run is not None:
            on_run(f"zones_{n}", run)
    return rows


def drift(cfg: ExperimentConfig, splits: Splits, model: FpnetModel, intensity: float | None = None, sizes=None) -> dict:
    """Transfer gap after perturbing the room, then fine-tuning at each sample budget.

    The recovery target is an FPNet trained from scratch on the perturbed
    room's own split (``accuracy_env_b_trained``).
    """
    sw = cfg.sweeps
    intensity = sw.drift_intensity if intensity is None else intensity
    env_b = ch.perturb_environment(
        splits.env, intensity, sw.drift_seed, position_scale=sw.position_scale, reflectivity_scale=sw.reflectivity_scale
    )
    b = make_splits(cfg, env_b, seed_offset=100)
    test_a, train_b, test_b = splits.bfm("test"), b.bfm("train"), b.bfm("test")
    before_a = evaluate(model, test_a)
    before_b = evaluate(model, test_b)
    curves, final = [], []
    for n in sizes or sw.fine_tune_sizes:
        tuned, hist = fine_tune(copy_model(model), train_b, n, sw.fine_tune_epochs, cfg.train, test=test_b, seed=sw.drift_seed)
        for rec in hist.records:
            curves.append({"n_samples": n, "epoch": rec["epoch"], "accuracy": rec["test_accuracy"], "sgcs": rec["test_sgcs"]})
        after = evaluate(tuned, test_b)
        final.append({"n_samples": n, "accuracy": after["accuracy"], "sgcs": after["sgcs"]})
    native = fit_fpnet(cfg, b).metrics
    return {
        "intensity": intensity,
        "accuracy_env_a": before_a["accuracy"],
        "accuracy_env_b_before": before_b["accuracy"],
        "sgcs_env_a": before_a["sgcs"],
        "sgcs_env_b_before": before_b["sgcs"],
        "accuracy_env_b_trained": native["accuracy"],
        "sgcs_env_b_trained": native["sgcs"],
        "final": final,
        "curves": curves,
    }


def ad_eval(cfg: ExperimentConfig, splits: Splits, model: FpnetModel, history: TrainHistory | None = None) -> dict:
    """Train the detector on in-region reconstructions, pick the F1-best threshold on
    validation plus corridor calibration packets, then score the held-out sets."""
    if len(splits.ood_train) == 0 or len(splits.ood_test) == 0:
        raise ValueError("anomaly evaluation needs corridor packets in both ood_train and ood_test")
    ad = train_adblock(model, splits.bfm("train"), cfg.ad, history)
    s = {name: anomaly_scores(ad, reconstruct_bfm(model, splits.bfm(name))) for name in ("val", "ood_train", "test", "ood_test")}
    curve = sweep_threshold(s["val"], s["ood_train"], cfg.ad.grid)
    ad.threshold = curve.threshold
    flags = np.concatenate([s["test"], s["ood_test"]]) > ad.threshold
    truth = np.concatenate([np.zeros(len(s["test"]), bool), np.ones(len(s["ood_test"]), bool)])
    op = ad_metrics(flags, truth)
    spread = misrouting_report(model, splits.bfm("ood_test"))
    return {
        "threshold": ad.threshold,
        "calibration": curve,
        "test": op.to_dict(),
        "misrouting": spread.tolist(),
        "misrouting_classes": int(np.count_nonzero(spread)),
        "model": ad,
    }


def build_empty(cfg: ExperimentConfig, n_classes: int, codeword_len: int | None = None) -> FpnetModel:
    return build_model(cfg.system, cfg.encoder_config(codeword_len), n_classes, seed=cfg.train.seed)
