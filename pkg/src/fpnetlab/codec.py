"""Standards-style compressed beamforming feedback.

Covers the path from CSI to the angle report and back: SVD-based
beamforming-matrix extraction, Givens-rotation decomposition into phase
angles ``phi`` and rotation angles ``psi``, Type 0 / Type 1 angle
quantization, and bit packing.

All array functions accept arbitrary leading batch dimensions. A beamforming
matrix array has shape ``(..., K, n_tx, n_streams)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

TWO_PI = 2 * np.pi


class DegenerateChannelError(ValueError):
    """The channel has no usable subspace for the requested stream count."""


class FramingError(ValueError):
    """A feedback frame's payload disagrees with its declared geometry."""


class FeedbackKind(enum.IntEnum):
    TYPE0 = 0
    TYPE1 = 1

    @property
    def bits(self) -> tuple[int, int]:
        """``(b_phi, b_psi)``."""
        return (7, 5) if self is FeedbackKind.TYPE0 else (9, 7)


# ---------------------------------------------------------------------------
# geometry bookkeeping
# ---------------------------------------------------------------------------


def angle_order(n_tx: int, n_streams: int) -> list[tuple[str, int, int]]:
    """Angles in report order as ``(kind, l, i)`` with 1-based indices.

    For each column ``i`` the phases ``phi_{l,i}`` (l = i..n_tx-1) come first,
    then the rotations ``psi_{l,i}`` (l = i+1..n_tx).
    """
    order = []
    for i in range(1, min(n_streams, n_tx - 1) + 1):
        order += [("phi", l, i) for l in range(i, n_tx)]
        order += [("psi", l, i) for l in range(i + 1, n_tx + 1)]
    return order


def angle_count(n_tx: int, n_streams: int) -> tuple[int, int, int, int]:
    """``(n_phi, n_psi, type0_bits, type1_bits)`` per subcarrier."""
    if not 1 <= n_streams <= n_tx <= 8:
        raise ValueError(f"unsupported geometry {n_tx}x{n_streams}; need 1 <= n_streams <= n_tx <= 8")
    order = angle_order(n_tx, n_streams)
    n_phi = sum(1 for a in order if a[0] == "phi")
    n_psi = len(order) - n_phi
    b0 = FeedbackKind.TYPE0.bits
    b1 = FeedbackKind.TYPE1.bits
    return n_phi, n_psi, n_phi * b0[0] + n_psi * b0[1], n_phi * b1[0] + n_psi * b1[1]


# ---------------------------------------------------------------------------
# beamforming matrix extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    sigma: np.ndarray
    v_full: np.ndarray


def svd(h: np.ndarray) -> SvdResult:
    """``h = u @ diag(sigma) @ v_full^H`` with ``sigma`` descending."""
    u, s, vh = np.linalg.svd(np.asarray(h, dtype=np.complex128))
    return SvdResult(u=u, sigma=s, v_full=np.conj(np.swapaxes(vh, -1, -2)))


def canonicalize(v: np.ndarray) -> np.ndarray:
    """Rotate each column's phase so its last entry is real and nonnegative."""
    v = np.asarray(v, dtype=np.complex128)
    last = v[..., -1:, :]
    mag = np.abs(last)
    phase = np.where(mag > 0, np.conj(last) / np.where(mag > 0, mag, 1), 1.0)
    out = v * phase
    out[..., -1, :] = np.abs(last[..., 0, :])
    return out


def _lex_key(col: np.ndarray) -> tuple:
    return tuple(x for c in col for x in (round(c.real, 12), round(c.imag, 12)))


def _order_tied_columns(v, sigma, ties, tol):
    # within each run of near-equal singular values, lexicographically largest column first
    n_tx = v.shape[-1]
    n = sigma.shape[-1]
    flat_v = v.reshape(-1, n_tx, n_tx).copy()
    flat_t = ties.reshape(-1, n - 1)
    for m in np.flatnonzero(flat_t.any(axis=1)):
        perm, start = [], 0
        for j in range(1, n + 1):
            if j == n or not flat_t[m, j - 1]:
                run = list(range(start, j))
                perm += sorted(run, key=lambda c: _lex_key(flat_v[m, :, c]), reverse=True)
                start = j
        perm += list(range(n, n_tx))
        flat_v[m] = flat_v[m][:, perm]
    return flat_v.reshape(v.shape)


def extract_bfm(h: np.ndarray, n_streams: int, *, degenerate_tol: float = 1e-9) -> np.ndarray:
    """Canonical beamforming matrix ``(..., K, n_tx, n_streams)`` from CSI ``(..., K, n_rx, n_tx)``."""
    h = np.asarray(h)
    n_rx, n_tx = h.shape[-2:]
    if n_streams > min(n_rx, n_tx):
        raise ValueError(f"n_streams={n_streams} exceeds min(n_rx, n_tx)={min(n_rx, n_tx)}")
    res = svd(h)
    sigma = res.sigma
    scale = np.maximum(sigma[..., :1], np.finfo(float).tiny)
    weak = sigma[..., n_streams - 1] <= 1e-12 * scale[..., 0]
    if np.any(weak):
        where = np.argwhere(weak)[0]
        raise DegenerateChannelError(
            f"channel is rank deficient on subcarrier {int(where[-1])} "
            f"(sample index {tuple(int(i) for i in where[:-1])})"
        )
    v = canonicalize(res.v_full)
    n = sigma.shape[-1]
    if n > 1:
        ties = np.abs(np.diff(sigma, axis=-1)) <= degenerate_tol * scale
        if np.any(ties):
            v = _order_tied_columns(v, sigma, ties, degenerate_tol)
    return v[..., :n_streams]


# ---------------------------------------------------------------------------
# Givens decomposition
# ---------------------------------------------------------------------------


@dataclass
class AngleSet:
    """Per-subcarrier angles in report order.

    ``phi`` has shape ``(..., n_phi)`` with values in [0, 2*pi); ``psi`` has
    shape ``(..., n_psi)`` in [0, pi/2].
    """

    phi: np.ndarray
    psi: np.ndarray
    n_tx: int
    n_streams: int

    @property
    def order(self) -> list[tuple[str, int, int]]:
        return angle_order(self.n_tx, self.n_streams)

    def interleaved(self) -> np.ndarray:
        """All angles in report order, shape ``(..., n_phi + n_psi)``."""
        out = np.empty(self.phi.shape[:-1] + (self.phi.shape[-1] + self.psi.shape[-1],))
        ip = iq = 0
        for j, (kind, _, _) in enumerate(self.order):
            if kind == "phi":
                out[..., j] = self.phi[..., ip]
                ip += 1
            else:
                out[..., j] = self.psi[..., iq]
                iq += 1
        return out


def givens_decompose(v: np.ndarray, *, tol: float = 1e-8) -> AngleSet:
    """Angles ``(phi, psi)`` of canonical beamforming matrices."""
    v = np.array(v, dtype=np.complex128)
    n_tx, n_s = v.shape[-2:]
    if np.any(np.abs(v[..., -1, :].imag) > tol) or np.any(v[..., -1, :].real < -tol):
        raise ValueError("input is not canonical: last row must be real and nonnegative")
    phis, psis = [], []
    for i in range(min(n_s, n_tx - 1)):
        # phases of rows i..n_tx-2 of column i (0-based), arg(0) := 0
        col = v[..., i : n_tx - 1, i]
        ph = np.where(np.abs(col) > 0, np.angle(col), 0.0) % TWO_PI
        phis.append(ph)
        v[..., i : n_tx - 1, :] *= np.exp(-1j * ph)[..., :, None]
        for l in range(i + 1, n_tx):
            a = v[..., i, i].real
            b = v[..., l, i].real
            psi = np.arctan2(np.maximum(b, 0.0), np.maximum(a, 0.0))
            psis.append(psi[..., None])
            c, s = np.cos(psi)[..., None], np.sin(psi)[..., None]
            ri, rl = v[..., i, :].copy(), v[..., l, :].copy()
            v[..., i, :] = c * ri + s * rl
            v[..., l, :] = -s * ri + c * rl
    lead = v.shape[:-2]
    phi = np.concatenate(phis, axis=-1) if phis else np.zeros(lead + (0,))
    psi = np.concatenate(psis, axis=-1) if psis else np.zeros(lead + (0,))
    return AngleSet(phi=phi, psi=psi, n_tx=n_tx, n_streams=n_s)


def givens_reconstruct(angles: AngleSet, n_tx: int | None = None, n_streams: int | None = None) -> np.ndarray:
    """Forward product of phase and Givens matrices on the rectangular identity."""
    n_tx = angles.n_tx if n_tx is None else n_tx
    n_s = angles.n_streams if n_streams is None else n_streams
    n_phi, n_psi, _, _ = angle_count(n_tx, n_s)
    phi, psi = np.asarray(angles.phi, float), np.asarray(angles.psi, float)
    if phi.shape[-1] != n_phi or psi.shape[-1] != n_psi:
        raise ValueError(f"{n_tx}x{n_s} needs {n_phi} phi and {n_psi} psi, got {phi.shape[-1]} and {psi.shape[-1]}")
    if np.any(phi < 0) or np.any(phi >= TWO_PI + 1e-12) or np.any(psi < 0) or np.any(psi > np.pi / 2 + 1e-12):
        raise ValueError("angle out of range: phi must lie in [0, 2pi), psi in [0, pi/2]")
    lead = phi.shape[:-1]
    # apply the factors right-to-left to I[:, :n_s]
    v = np.zeros(lead + (n_tx, n_s), dtype=np.complex128)
    for j in range(n_s):
        v[..., j, j] = 1.0
    steps = []
    ip = iq = 0
    for i in range(min(n_s, n_tx - 1)):
        n = n_tx - 1 - i
        steps.append(("D", i, phi[..., ip : ip + n]))
        ip += n
        for l in range(i + 1, n_tx):
            steps.append(("G", (i, l), psi[..., iq]))
            iq += 1
    for kind, idx, ang in reversed(steps):
        if kind == "D":
            v[..., idx : n_tx - 1, :] *= np.exp(1j * ang)[..., :, None]
        else:
            i, l = idx
            c, s = np.cos(ang)[..., None], np.sin(ang)[..., None]
            ri, rl = v[..., i, :].copy(), v[..., l, :].copy()
            # G^T rows: [c, -s; s, c]
            v[..., i, :] = c * ri - s * rl
            v[..., l, :] = s * ri + c * rl
    return v


# ---------------------------------------------------------------------------
# quantization and packing
# ---------------------------------------------------------------------------


def phi_index(phi: np.ndarray, bits: int) -> np.ndarray:
    x = (np.asarray(phi) - np.pi / 2**bits) * 2 ** (bits - 1) / np.pi
    return np.floor(x + 0.5).astype(np.int64) % 2**bits


def phi_level(k: np.ndarray, bits: int) -> np.ndarray:
    return np.asarray(k) * np.pi / 2 ** (bits - 1) + np.pi / 2**bits


def psi_index(psi: np.ndarray, bits: int) -> np.ndarray:
    x = (np.asarray(psi) - np.pi / 2 ** (bits + 2)) * 2 ** (bits + 1) / np.pi
    return np.clip(np.floor(x + 0.5), 0, 2**bits - 1).astype(np.int64)


def psi_level(k: np.ndarray, bits: int) -> np.ndarray:
    return np.asarray(k) * np.pi / 2 ** (bits + 1) + np.pi / 2 ** (bits + 2)


@dataclass(frozen=True)
class FeedbackFrame:
    kind: FeedbackKind
    payload: np.ndarray  # uint8 bits, one per element
    n_subcarriers: int
    n_tx: int
    n_streams: int

    @property
    def b_phi(self) -> int:
        return self.kind.bits[0]

    @property
    def b_psi(self) -> int:
        return self.kind.bits[1]

    @property
    def bits_per_subcarrier(self) -> int:
        n_phi, n_psi, _, _ = angle_count(self.n_tx, self.n_streams)
        return n_phi * self.b_phi + n_psi * self.b_psi

    def to_bytes(self) -> bytes:
        """1 byte kind, 2 bytes subcarrier count (LE), LSB-first packed payload."""
        head = bytes([int(self.kind)]) + int(self.n_subcarriers).to_bytes(2, "little")
        return head + np.packbits(self.payload.astype(np.uint8), bitorder="little").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, n_tx: int, n_streams: int) -> "FeedbackFrame":
        if len(data) < 3:
            raise FramingError("frame shorter than its 3-byte header")
        try:
            kind = FeedbackKind(data[0])
        except ValueError:
            raise FramingError(f"unknown feedback kind {data[0]}") from None
        n_sc = int.from_bytes(data[1:3], "little")
        n_phi, n_psi, _, _ = angle_count(n_tx, n_streams)
        n_bits = n_sc * (n_phi * kind.bits[0] + n_psi * kind.bits[1])
        n_bytes = -(-n_bits // 8)
        if len(data) - 3 != n_bytes:
            raise FramingError(f"payload has {len(data) - 3} bytes, expected {n_bytes} for {n_sc} subcarriers")
        bits = np.unpackbits(np.frombuffer(data[3:], np.uint8), bitorder="little")[:n_bits]
        return cls(kind=kind, payload=bits, n_subcarriers=n_sc, n_tx=n_tx, n_streams=n_streams)


def quantize_angles(angles: AngleSet, kind: FeedbackKind | str) -> FeedbackFrame:
    """Quantize one matrix's angles ``(K, n)`` and pack them in report order."""
    kind = FeedbackKind[kind.upper()] if isinstance(kind, str) else FeedbackKind(kind)
    b_phi, b_psi = kind.bits
    phi = np.asarray(angles.phi, float)
    psi = np.asarray(angles.psi, float)
    if phi.ndim != 2:
        raise ValueError("quantize_angles expects angles of shape (K, n)")
    kp = phi_index(phi, b_phi)
    kq = psi_index(psi, b_psi)
    fields, widths = [], []
    ip = iq = 0
    for kname, _, _ in angles.order:
        if kname == "phi":
            fields.append(kp[:, ip])
            widths.append(b_phi)
            ip += 1
        else:
            fields.append(kq[:, iq])
            widths.append(b_psi)
            iq += 1
    k = phi.shape[0]
    chunks = [
        ((fields[j][:, None] >> np.arange(widths[j])) & 1).astype(np.uint8) for j in range(len(fields))
    ]
    payload = np.concatenate(chunks, axis=1).reshape(-1) if chunks else np.zeros(0, np.uint8)
    return FeedbackFrame(kind=kind, payload=payload, n_subcarriers=k, n_tx=angles.n_tx, n_streams=angles.n_streams)


def dequantize_angles(frame: FeedbackFrame) -> AngleSet:
    b_phi, b_psi = frame.kind.bits
    n_phi, n_psi, _, _ = angle_count(frame.n_tx, frame.n_streams)
    per = frame.bits_per_subcarrier
    if frame.payload.size != frame.n_subcarriers * per:
        raise FramingError(
            f"payload has {frame.payload.size} bits, expected {frame.n_subcarriers} x {per}"
        )
    bits = frame.payload.reshape(frame.n_subcarriers, per).astype(np.int64)
    phi = np.zeros((frame.n_subcarriers, n_phi))
    psi = np.zeros((frame.n_subcarriers, n_psi))
    pos = ip = iq = 0
    for kname, _, _ in angle_order(frame.n_tx, frame.n_streams):
        w = b_phi if kname == "phi" else b_psi
        idx = (bits[:, pos : pos + w] << np.arange(w)).sum(axis=1)
        pos += w
        if kname == "phi":
            phi[:, ip] = phi_level(idx, b_phi)
            ip += 1
        else:
            psi[:, iq] = psi_level(idx, b_psi)
            iq += 1
    return AngleSet(phi=phi, psi=psi, n_tx=frame.n_tx, n_streams=frame.n_streams)


def quantize_dequantize(angles: AngleSet, kind: FeedbackKind | str) -> AngleSet:
    """Vectorized equivalent of ``dequantize_angles(quantize_angles(...))``."""
    kind = FeedbackKind[kind.upper()] if isinstance(kind, str) else FeedbackKind(kind)
    b_phi, b_psi = kind.bits
    return AngleSet(
        phi=phi_level(phi_index(angles.phi, b_phi), b_phi),
        psi=psi_level(psi_index(angles.psi, b_psi), b_psi),
        n_tx=angles.n_tx,
        n_streams=angles.n_streams,
    )


def codec_roundtrip(v: np.ndarray, kind: FeedbackKind | str | None) -> np.ndarray:
    """Decompose, optionally quantize, and reconstruct canonical BFMs."""
    angles = givens_decompose(v)
    if kind is not None:
        angles = quantize_dequantize(angles, kind)
    return givens_reconstruct(angles)


def feedback_bits(kind: FeedbackKind | str, n_tx: int, n_streams: int, n_subcarriers: int, group: int = 1) -> int:
    kind = FeedbackKind[kind.upper()] if isinstance(kind, str) else FeedbackKind(kind)
    _, _, b0, b1 = angle_count(n_tx, n_streams)
    per = b0 if kind is FeedbackKind.TYPE0 else b1
    return per * len(range(0, n_subcarriers, group))


# ---------------------------------------------------------------------------
# subcarrier grouping
# ---------------------------------------------------------------------------


def group_subcarriers(v: np.ndarray, group: int) -> np.ndarray:
    """Keep every ``group``-th subcarrier (axis -3)."""
    if group not in (1, 2, 4):
        raise ValueError(f"grouping must be 1, 2 or 4 subcarriers, got {group}")
    return v[..., ::group, :, :]


def expand_groups(v: np.ndarray, group: int, n_subcarriers: int) -> np.ndarray:
    """Repeat each group's matrix across its ``group`` subcarriers."""
    return np.repeat(v, group, axis=-3)[..., :n_subcarriers, :, :]
