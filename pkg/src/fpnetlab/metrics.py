"""Evaluation quantities: beamforming similarity, link EVM, throughput and classifier scores."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .channel import SystemConfig

EVM_FLOOR_DB = -80.0


class SingularChannelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Similarity
# ---------------------------------------------------------------------------


def sgcs_values(v_hat: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Squared normalized Hermitian inner product per column, shape ``(..., n_streams)``.

    Inputs are ``(..., n_tx, n_streams)``.
    """
    v_hat, v = np.asarray(v_hat), np.asarray(v)
    if v_hat.shape != v.shape:
        raise ValueError(f"shape mismatch: {v_hat.shape} vs {v.shape}")
    n1 = np.sum(np.abs(v_hat) ** 2, axis=-2)
    n2 = np.sum(np.abs(v) ** 2, axis=-2)
    if np.any(n1 == 0) or np.any(n2 == 0):
        raise ValueError("zero-norm beamforming column")
    inner = np.sum(np.conj(v_hat) * v, axis=-2)
    return np.abs(inner) ** 2 / (n1 * n2)


def sgcs(v_hat: np.ndarray, v: np.ndarray) -> float:
    """Mean squared generalized cosine similarity over samples, subcarriers and streams."""
    return float(np.mean(sgcs_values(v_hat, v)))


def sgcs_per_sample(v_hat: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-sample SGCS for batched ``(P, K, n_tx, n_streams)`` inputs."""
    vals = sgcs_values(v_hat, v)
    return vals.reshape(vals.shape[0], -1).mean(axis=1)


# ---------------------------------------------------------------------------
# Link simulation
# ---------------------------------------------------------------------------


def qpsk(n: int, rng: np.random.Generator) -> np.ndarray:
    bits = rng.integers(0, 2, size=(2, n))
    return ((1 - 2 * bits[0]) + 1j * (1 - 2 * bits[1])) / np.sqrt(2)


def simulate_link_evm(
    h: np.ndarray,
    v_hat: np.ndarray,
    snr_db: float = 25.0,
    n_symbols: int = 64,
    seed: int = 0,
) -> float:
    """EVM in dB of a precoded QPSK link with genie least-squares equalization.

    ``h`` is ``(K, n_rx, n_tx)`` and ``v_hat`` is ``(K, n_tx, n_streams)``. The
    receiver inverts the known effective channel ``h @ v_hat``, so a poor
    precoder shows up as noise enhancement.
    """
    h, v_hat = np.asarray(h), np.asarray(v_hat)
    if h.ndim != 3 or v_hat.ndim != 3 or h.shape[0] != v_hat.shape[0] or h.shape[2] != v_hat.shape[1]:
        raise ValueError(f"incompatible shapes h={h.shape} v_hat={v_hat.shape}")
    k, n_rx, _ = h.shape
    ns = v_hat.shape[2]
    rng = np.random.default_rng(seed)
    # unit total transmit power regardless of the precoder's column norms
    v = v_hat / np.linalg.norm(v_hat, axis=1, keepdims=True)
    heff = h @ v
    sv = np.linalg.svd(heff, compute_uv=False)
    if np.any(sv[:, -1] <= 1e-12 * np.maximum(sv[:, 0], np.finfo(float).tiny)):
        raise SingularChannelError("effective channel is numerically singular")
    s = qpsk(k * ns * n_symbols, rng).reshape(k, ns, n_symbols)
    y = heff @ s
    if np.isfinite(snr_db):
        sigma2 = 10.0 ** (-snr_db / 10.0)
        y = y + np.sqrt(sigma2 / 2) * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    s_hat = np.linalg.pinv(heff) @ y
    ratio = np.mean(np.abs(s_hat - s) ** 2) / np.mean(np.abs(s) ** 2)
    if ratio <= 0:
        return EVM_FLOOR_DB
    return float(max(10.0 * np.log10(ratio), EVM_FLOOR_DB))


# ---------------------------------------------------------------------------
# Throughput
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McsTable:
    """Step function from EVM (dB) to average bits per subcarrier."""

    entries: tuple[tuple[float, float], ...]

    def __post_init__(self):
        th = [e[0] for e in self.entries]
        gm = [e[1] for e in self.entries]
        if not self.entries:
            raise ValueError("empty MCS table")
        if any(b >= a for a, b in zip(th, th[1:])):
            raise ValueError("thresholds must be strictly decreasing")
        if any(b <= a for a, b in zip(gm, gm[1:])):
            raise ValueError("gamma must be strictly increasing as thresholds decrease")

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> "McsTable":
        return cls(tuple((float(a), float(b)) for a, b in pairs))

    def to_list(self) -> list[list[float]]:
        return [list(e) for e in self.entries]


# modulation bits x code rate ladder
LADDER_TABLE = McsTable.from_pairs(
    [(-10, 1.0), (-13, 1.5), (-16, 2.0), (-19, 2.25), (-22, 2.667), (-25, 3.0), (-27, 3.333), (-30, 4.0)]
)
# override placing the two rates observed in the reference measurements at their EVMs
ANCHORED_TABLE = McsTable.from_pairs([(-10, 1.0), (-13, 1.5), (-16, 2.0), (-20, 3.0), (-25, 4.0)])


def gamma_from_evm(evm_db: float, table: McsTable = LADDER_TABLE) -> float:
    """Largest gamma whose threshold is at or above ``evm_db``; 0 if none."""
    gamma = 0.0
    for threshold, g in table.entries:
        if evm_db <= threshold:
            gamma = g
    return gamma


def gross_throughput(gamma: float, system: SystemConfig | None = None) -> float:
    """Achievable PHY rate in bits/s for ``gamma`` bits per valid subcarrier."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    s = system or SystemConfig()
    return s.n_valid_subcarriers / (s.n_fft + s.n_cp) * s.bandwidth_hz * gamma


@dataclass(frozen=True)
class TimingModel:
    """Sounding overhead: a fixed exchange time plus the feedback payload at a control rate."""

    t_fixed_overhead: float = 131.9e-6
    r_ctrl: float = 7.0e6
    payload_bytes: int = 300

    def __post_init__(self):
        if self.t_fixed_overhead <= 0 or self.r_ctrl <= 0 or self.payload_bytes <= 0:
            raise ValueError("timing constants must be positive")

    def overhead(self, feedback_bits: int) -> float:
        return self.t_fixed_overhead + feedback_bits / self.r_ctrl


def net_throughput(r_gross: float, feedback_bits: int, timing: TimingModel | None = None) -> float:
    if r_gross <= 0:
        raise ValueError("r_gross must be positive")
    timing = timing or TimingModel()
    t = timing.payload_bytes * 8 / r_gross
    return r_gross * t / (t + timing.overhead(feedback_bits))


def fit_timing_model(points: Sequence[tuple[float, int, float]], payload_bytes: int = 300) -> TimingModel:
    """Least-squares fit of the overhead line to ``(r_gross, feedback_bits, r_net)`` triples."""
    rows, rhs = [], []
    for r_gross, bits, r_net in points:
        t = payload_bytes * 8 / r_gross
        rows.append([1.0, float(bits)])
        rhs.append(t * (r_gross / r_net - 1.0))
    (a, b), *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    if a <= 0 or b <= 0:
        raise ValueError("fit produced non-positive timing constants")
    return TimingModel(float(a), float(1.0 / b), payload_bytes)


# ---------------------------------------------------------------------------
# Classification and detection scores
# ---------------------------------------------------------------------------


def classification_metrics(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise ValueError("no predictions")
    return float(np.mean(preds == labels))


@dataclass(frozen=True)
class AdMetrics:
    tp: int
    fp: int
    tn: int
    fn: int
    tpr: float | None
    fpr: float | None
    precision: float | None
    f1: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(a: int, b: int) -> float | None:
    return a / b if b else None


def ad_metrics(flags, truth) -> AdMetrics:
    """Confusion counts and rates; ``truth`` marks actual anomalies. Undefined rates are ``None``."""
    flags = np.asarray(flags, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if flags.shape != truth.shape:
        raise ValueError(f"length mismatch: {flags.shape} vs {truth.shape}")
    tp = int(np.sum(flags & truth))
    fp = int(np.sum(flags & ~truth))
    tn = int(np.sum(~flags & ~truth))
    fn = int(np.sum(~flags & truth))
    tpr = _ratio(tp, tp + fn)
    precision = _ratio(tp, tp + fp)
    f1 = None
    if tpr is not None and precision is not None:
        f1 = 0.0 if tpr + precision == 0 else 2 * tpr * precision / (tpr + precision)
    return AdMetrics(tp, fp, tn, fn, tpr, _ratio(fp, fp + tn), precision, f1)


def ad_metrics_from_counts(tp: int, fp: int, tn: int, fn: int) -> AdMetrics:
    flags = np.array([True] * tp + [True] * fp + [False] * tn + [False] * fn)
    truth = np.array([True] * tp + [False] * fp + [False] * tn + [True] * fn)
    return ad_metrics(flags, truth)


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def pca_project(
    codewords, dims: int = 2, *, seed: int = 0, n_iter: int = 1000, tol: float = 1e-12
) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the top ``dims`` principal directions found by power iteration with deflation.

    Returns the projected points and each direction's share of total variance.
    """
    x = np.asarray(codewords, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two codewords as rows of a 2-D array")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (x.shape[0] - 1)
    total = float(np.trace(cov))
    dims = min(dims, x.shape[1])
    points = np.zeros((x.shape[0], dims))
    explained = np.zeros(dims)
    if total <= 0:
        return points, explained
    rng = np.random.default_rng(seed)
    c = cov.copy()
    for d in range(dims):
        u = rng.standard_normal(c.shape[0])
        u /= np.linalg.norm(u)
        lam = 0.0
        for _ in range(n_iter):
            w = c @ u
            nw = np.linalg.norm(w)
            if nw <= tol * total:
                u, lam = u, 0.0
                break
            w /= nw
            done = np.linalg.norm(w - u) < 1e-12 or np.linalg.norm(w + u) < 1e-12
            u = w
            lam = float(u @ c @ u)
            if done:
                break
        # fix the sign so the output is deterministic
        if u[np.argmax(np.abs(u))] < 0:
            u = -u
        points[:, d] = xc @ u if lam > 0 else 0.0
        explained[d] = max(lam, 0.0) / total
        c = c - lam * np.outer(u, u)
    return points, explained
