"""Synthetic indoor MIMO-OFDM CSI fingerprints.

A geometric multipath model stands in for a physical capture campaign: the
user side carries an ``n_tx``-element ULA, the access point an ``n_rx``-element
ULA, and each packet's channel is the sum of a direct path and single-bounce
scatterer paths with per-subcarrier delay phase and far-field array response.

The floor is a ``rows x cols`` grid of equal rectangular zones. An extra
corridor region behind the wall at ``y < 0`` provides out-of-distribution
samples.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
OOD_LABEL = -1
ENV_TAGS = ("static", "dynamic")


@dataclass(frozen=True)
class SystemConfig:
    n_tx: int = 3
    n_rx: int = 2
    n_streams: int = 1
    n_valid_subcarriers: int = 28
    bandwidth_hz: float = 40e6
    n_fft: int = 64
    n_cp: int = 16
    carrier_hz: float = 2.4e9
    antenna_spacing: float = 0.5  # in wavelengths

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "n_streams", "n_valid_subcarriers", "n_fft", "n_cp"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_streams > min(self.n_tx, self.n_rx):
            raise ValueError(
                f"n_streams={self.n_streams} exceeds min(n_tx, n_rx)={min(self.n_tx, self.n_rx)}"
            )
        if self.n_valid_subcarriers > self.n_fft:
            raise ValueError("n_valid_subcarriers cannot exceed n_fft")
        if self.bandwidth_hz <= 0 or self.carrier_hz <= 0:
            raise ValueError("bandwidth_hz and carrier_hz must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    def subcarrier_offsets_hz(self) -> np.ndarray:
        """Baseband frequency of each valid subcarrier, spread across the band."""
        edge = self.n_fft // 2 - 4
        idx = np.round(np.linspace(-edge, edge, self.n_valid_subcarriers))
        return idx * self.bandwidth_hz / self.n_fft

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Zone:
    center: tuple[float, float]
    extent: tuple[float, float]

    def contains(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        dx = np.abs(xy[:, 0] - self.center[0]) <= self.extent[0] / 2
        dy = np.abs(xy[:, 1] - self.center[1]) <= self.extent[1] / 2
        return dx & dy

    def overlaps(self, other: "Zone") -> bool:
        ox = abs(self.center[0] - other.center[0]) < (self.extent[0] + other.extent[0]) / 2 - 1e-12
        oy = abs(self.center[1] - other.center[1]) < (self.extent[1] + other.extent[1]) / 2 - 1e-12
        return ox and oy


@dataclass(frozen=True)
class EnvironmentModel:
    system: SystemConfig
    grid: tuple[int, int]  # (rows, cols)
    zone_size: float
    zones: tuple[Zone, ...]
    scatterers: np.ndarray  # (S, 2) metres
    reflectivity: np.ndarray  # (S,) complex
    corridor_scatterers: np.ndarray  # (Sc, 2)
    corridor_reflectivity: np.ndarray  # (Sc,)
    ap_position: tuple[float, float]
    ood_region: Zone
    seed: int
    jitter_radius: float = 0.05
    wall_loss_db: float = 10.0
    scatter_gain: float = 1.0
    tag: str = "static"
    # when set, each packet's SNR follows its received power relative to the room mean
    link_budget: bool = False

    @property
    def n_zones(self) -> int:
        return len(self.zones)

    @property
    def base_grid(self) -> tuple[int, int]:
        width, depth = self.floor
        return round(depth / self.zone_size), round(width / self.zone_size)

    @property
    def floor(self) -> tuple[float, float]:
        # zones tile the floor from the origin, so the far corner bounds it
        width = max(z.center[0] + z.extent[0] / 2 for z in self.zones)
        depth = max(z.center[1] + z.extent[1] / 2 for z in self.zones)
        return round(width, 9), round(depth, 9)

    def to_dict(self) -> dict:
        return {
            "system": self.system.to_dict(),
            "grid": list(self.grid),
            "zone_size": self.zone_size,
            "zones": [[list(z.center), list(z.extent)] for z in self.zones],
            "scatterers": self.scatterers.tolist(),
            "reflectivity": [[c.real, c.imag] for c in self.reflectivity.tolist()],
            "corridor_scatterers": self.corridor_scatterers.tolist(),
            "corridor_reflectivity": [[c.real, c.imag] for c in self.corridor_reflectivity.tolist()],
            "ap_position": list(self.ap_position),
            "ood_region": [list(self.ood_region.center), list(self.ood_region.extent)],
            "seed": self.seed,
            "jitter_radius": self.jitter_radius,
            "wall_loss_db": self.wall_loss_db,
            "scatter_gain": self.scatter_gain,
            "tag": self.tag,
            "link_budget": self.link_budget,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, EnvironmentModel):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


@dataclass(frozen=True)
class CsiSample:
    h: np.ndarray  # (K, n_rx, n_tx)
    zone_label: int
    environment_tag: str
    snr_db: float


@dataclass
class CsiBatch:
    """Packets sharing one :class:`SystemConfig`, stored as stacked arrays."""

    system: SystemConfig
    h: np.ndarray  # (P, K, n_rx, n_tx) complex64
    labels: np.ndarray  # (P,) int64; OOD_LABEL marks corridor packets
    env_tags: np.ndarray  # (P,) uint8 index into ENV_TAGS
    snr_db: np.ndarray  # (P,) float64
    positions: np.ndarray  # (P, 2) float64
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.h.shape[0]
        expect = (self.system.n_valid_subcarriers, self.system.n_rx, self.system.n_tx)
        if self.h.ndim != 4 or self.h.shape[1:] != expect:
            raise ValueError(f"h has shape {self.h.shape}, expected (P, {expect[0]}, {expect[1]}, {expect[2]})")
        for name in ("labels", "env_tags", "snr_db"):
            if getattr(self, name).shape != (p,):
                raise ValueError(f"{name} must have shape ({p},)")
        if self.positions.shape != (p, 2):
            raise ValueError(f"positions must have shape ({p}, 2)")

    def __len__(self) -> int:
        return self.h.shape[0]

    def __getitem__(self, i: int) -> CsiSample:
        return CsiSample(
            h=self.h[i],
            zone_label=int(self.labels[i]),
            environment_tag=ENV_TAGS[int(self.env_tags[i])],
            snr_db=float(self.snr_db[i]),
        )

    def __iter__(self) -> Iterator[CsiSample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def samples(self) -> list[CsiSample]:
        return list(self)

    def subset(self, idx) -> "CsiBatch":
        idx = np.asarray(idx)
        return CsiBatch(
            system=self.system,
            h=self.h[idx],
            labels=self.labels[idx],
            env_tags=self.env_tags[idx],
            snr_db=self.snr_db[idx],
            positions=self.positions[idx],
            manifest=dict(self.manifest),
        )

    def relabel(self, labels: np.ndarray) -> "CsiBatch":
        out = self.subset(np.arange(len(self)))
        out.labels = np.asarray(labels, dtype=np.int64)
        return out

    @classmethod
    def empty(cls, system: SystemConfig) -> "CsiBatch":
        k, nr, nt = system.n_valid_subcarriers, system.n_rx, system.n_tx
        return cls(
            system=system,
            h=np.zeros((0, k, nr, nt), np.complex64),
            labels=np.zeros(0, np.int64),
            env_tags=np.zeros(0, np.uint8),
            snr_db=np.zeros(0),
            positions=np.zeros((0, 2)),
        )

    @classmethod
    def concat(cls, batches: Sequence["CsiBatch"]) -> "CsiBatch":
        if not batches:
            raise ValueError("need at least one batch")
        system = batches[0].system
        if any(b.system != system for b in batches):
            raise ValueError("all batches must share one SystemConfig")
        manifest = dict(batches[0].manifest)
        manifest["parts"] = [b.manifest for b in batches]
        return cls(
            system=system,
            h=np.concatenate([b.h for b in batches]),
            labels=np.concatenate([b.labels for b in batches]),
            env_tags=np.concatenate([b.env_tags for b in batches]),
            snr_db=np.concatenate([b.snr_db for b in batches]),
            positions=np.concatenate([b.positions for b in batches]),
            manifest=manifest,
        )

    def __eq__(self, other):
        if not isinstance(other, CsiBatch):
            return NotImplemented
        return (
            self.system == other.system
            and np.array_equal(self.h, other.h)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.env_tags, other.env_tags)
            and np.array_equal(self.snr_db, other.snr_db)
            and np.array_equal(self.positions, other.positions)
        )

    __hash__ = None


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# environment construction
# ---------------------------------------------------------------------------

MAX_ZONE_ASPECT = 4.0
ROOM_MARGIN = 1.0


def zone_grid(n_zones: int, floor: tuple[float, float]) -> tuple[int, int]:
    """Pick ``(rows, cols)`` tiling ``floor`` into near-square equal cells.

    Raises ``ValueError`` when every factorization gives cells more elongated
    than ``MAX_ZONE_ASPECT``.
    """
    width, depth = floor
    best = None
    for rows in range(1, n_zones + 1):
        if n_zones % rows:
            continue
        cols = n_zones // rows
        w, d = width / cols, depth / rows
        aspect = max(w, d) / min(w, d)
        if best is None or aspect < best[0] - 1e-12:
            best = (aspect, rows, cols)
    if best is None or best[0] > MAX_ZONE_ASPECT + 1e-9:
        raise ValueError(
            f"{n_zones} zones cannot tile a {width:.2f}x{depth:.2f} m floor into equal rectangles"
        )
    return best[1], best[2]


def _grid_zones(rows: int, cols: int, floor: tuple[float, float]) -> tuple[Zone, ...]:
    width, depth = floor
    w, d = width / cols, depth / rows
    return tuple(
        Zone(center=((c + 0.5) * w, (r + 0.5) * d), extent=(w, d))
        for r in range(rows)
        for c in range(cols)
    )


def generate_environment(
    sys: SystemConfig,
    n_zones: int = 20,
    n_scatterers: int = 30,
    seed: int = 0,
    *,
    base_grid: tuple[int, int] = (4, 5),
    zone_size: float = 1.3,
    jitter_radius: float = 0.05,
    wall_loss_db: float = 10.0,
    scatter_gain: float = 1.0,
    n_corridor_scatterers: int = 8,
    link_budget: bool = False,
) -> EnvironmentModel:
    """Build a room whose floor is ``base_grid`` cells of ``zone_size`` metres,
    partitioned into ``n_zones`` equal zones, plus scatterers and a corridor."""
    if n_zones < 2:
        raise ValueError("n_zones must be at least 2")
    if n_scatterers < 1:
        raise ValueError("n_scatterers must be at least 1")
    base_rows, base_cols = base_grid
    floor = (base_cols * zone_size, base_rows * zone_size)
    rows, cols = zone_grid(n_zones, floor)
    zones = _grid_zones(rows, cols, floor)

    rng = np.random.default_rng(seed)
    width, depth = floor
    lo = np.array([-ROOM_MARGIN, -ROOM_MARGIN])
    hi = np.array([width + ROOM_MARGIN, depth + ROOM_MARGIN])
    scat = lo + (hi - lo) * rng.random((n_scatterers, 2))
    refl = (rng.standard_normal(n_scatterers) + 1j * rng.standard_normal(n_scatterers)) / math.sqrt(2)

    corridor = Zone(
        center=(width / 2, -ROOM_MARGIN - 1.25),
        extent=(width + 2 * ROOM_MARGIN, 1.5),
    )
    c_lo = np.array([corridor.center[0] - corridor.extent[0] / 2, -ROOM_MARGIN - 2.5])
    c_hi = np.array([corridor.center[0] + corridor.extent[0] / 2, -ROOM_MARGIN - 0.0])
    c_scat = c_lo + (c_hi - c_lo) * rng.random((n_corridor_scatterers, 2))
    c_refl = (
        rng.standard_normal(n_corridor_scatterers) + 1j * rng.standard_normal(n_corridor_scatterers)
    ) / math.sqrt(2)

    ap = (width + ROOM_MARGIN - 0.3, depth + ROOM_MARGIN - 0.3)
    if any(corridor.overlaps(z) for z in zones):
        raise AssertionError("corridor overlaps a zone")
    return EnvironmentModel(
        system=sys,
        grid=(rows, cols),
        zone_size=zone_size,
        zones=zones,
        scatterers=scat,
        reflectivity=refl,
        corridor_scatterers=c_scat,
        corridor_reflectivity=c_refl,
        ap_position=ap,
        ood_region=corridor,
        seed=seed,
        jitter_radius=jitter_radius,
        wall_loss_db=wall_loss_db,
        scatter_gain=scatter_gain,
        link_budget=link_budget,
    )


def with_zone_count(env: EnvironmentModel, n_zones: int) -> EnvironmentModel:
    """Same room and scatterers, re-partitioned into ``n_zones`` zones."""
    rows, cols = zone_grid(n_zones, env.floor)
    return dataclasses.replace(env, grid=(rows, cols), zones=_grid_zones(rows, cols, env.floor))


def nested_zone_grid(base: tuple[int, int], n_zones: int, floor: tuple[float, float]) -> tuple[int, int]:
    """Grid for ``n_zones`` obtained by merging or splitting cells of ``base``."""
    br, bc = base
    width, depth = floor
    best = None
    for rows in range(1, n_zones + 1):
        if n_zones % rows:
            continue
        cols = n_zones // rows
        if not ((rows % br == 0 or br % rows == 0) and (cols % bc == 0 or bc % cols == 0)):
            continue
        w, d = width / cols, depth / rows
        aspect = max(w, d) / min(w, d)
        if best is None or aspect < best[0] - 1e-12:
            best = (aspect, rows, cols)
    if best is None:
        raise ValueError(f"{n_zones} zones do not nest with base grid {base}")
    return best[1], best[2]


def nested_zones(env: EnvironmentModel, n_zones: int) -> EnvironmentModel:
    """Same room with each default cell split, or neighbouring cells merged, into ``n_zones`` zones."""
    return with_grid(env, *nested_zone_grid(env.base_grid, n_zones, env.floor))


def with_grid(env: EnvironmentModel, rows: int, cols: int) -> EnvironmentModel:
    """Same room tiled by a ``rows`` x ``cols`` zone grid."""
    return dataclasses.replace(env, grid=(rows, cols), zones=_grid_zones(rows, cols, env.floor))


def relabel_zones(env: EnvironmentModel, positions: np.ndarray, n_zones: int) -> np.ndarray:
    """Zone index of each position under a merged/split partition of ``env``'s grid.

    Positions outside the floor (corridor packets) keep ``OOD_LABEL``.
    """
    rows, cols = nested_zone_grid(env.base_grid, n_zones, env.floor)
    width, depth = env.floor
    positions = np.asarray(positions, dtype=float)
    c = np.floor(positions[:, 0] / (width / cols)).astype(np.int64)
    r = np.floor(positions[:, 1] / (depth / rows)).astype(np.int64)
    inside = (c >= 0) & (c < cols) & (r >= 0) & (r < rows)
    return np.where(inside, r * cols + c, OOD_LABEL)


def perturb_environment(
    env: EnvironmentModel,
    intensity: float,
    seed: int,
    *,
    position_scale: float = 0.03,
    reflectivity_scale: float = 0.3,
) -> EnvironmentModel:
    """Jitter scatterers to mimic furniture moves and people walking around.

    Positions move by Gaussian offsets of std ``intensity * position_scale``
    metres; reflectivities are mixed with a fresh draw with weight
    ``intensity * reflectivity_scale``. Zones and the AP stay put.
    """
    if not 0.0 <= intensity <= 1.0:
        raise ValueError(f"intensity must lie in [0, 1], got {intensity}")
    if intensity == 0.0:
        return env
    rng = np.random.default_rng(seed)
    s = env.scatterers.shape[0]
    scat = env.scatterers + intensity * position_scale * rng.standard_normal((s, 2))
    fresh = (rng.standard_normal(s) + 1j * rng.standard_normal(s)) / math.sqrt(2)
    w = min(intensity * reflectivity_scale, 1.0)
    refl = math.sqrt(1 - w**2) * env.reflectivity + w * fresh
    return dataclasses.replace(env, scatterers=scat, reflectivity=refl, tag="dynamic")


# ---------------------------------------------------------------------------
# channel synthesis
# ---------------------------------------------------------------------------


def _ula(n: int, spacing: float, cos_theta: np.ndarray) -> np.ndarray:
    # (..., n) steering vectors for arrays laid along the x axis
    return np.exp(1j * 2 * np.pi * spacing * np.arange(n) * cos_theta[..., None])


def _paths(env: EnvironmentModel, positions: np.ndarray, outdoor: bool):
    """Unnormalized path amplitudes, lengths and departure/arrival cosines, each ``(P, L)``."""
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    ap = np.asarray(env.ap_position)
    lam = env.system.wavelength

    # bounce points: direct path uses the AP itself as the "bounce"
    points = [env.scatterers]
    gains = [env.scatter_gain * env.reflectivity]
    if outdoor:
        points.append(env.corridor_scatterers)
        gains.append(env.scatter_gain * env.corridor_reflectivity)
    bounce = np.concatenate(points)  # (S, 2)
    refl = np.concatenate(gains)

    # user -> bounce -> AP
    r1 = np.linalg.norm(bounce[None] - pos[:, None], axis=-1)
    r2 = np.linalg.norm(ap[None] - bounce, axis=-1)[None, :]
    dist_s = r1 + r2
    cos_dep = (bounce[None, :, 0] - pos[:, None, 0]) / np.maximum(r1, 1e-9)
    cos_arr = (bounce[None, :, 0] - ap[0]) / np.maximum(r2, 1e-9)
    amp_s = refl[None, :] * lam / (4 * np.pi * np.maximum(r1 * r2, 1e-2))

    r0 = np.linalg.norm(ap[None] - pos, axis=-1)  # (P,)
    cos_dep0 = (ap[0] - pos[:, 0]) / r0
    cos_arr0 = (pos[:, 0] - ap[0]) / r0
    amp0 = lam / (4 * np.pi * r0)

    amp = np.concatenate([amp0[:, None].astype(complex), amp_s], axis=1)  # (P, 1+S)
    dist = np.concatenate([r0[:, None], dist_s], axis=1)
    cdep = np.concatenate([cos_dep0[:, None], cos_dep], axis=1)
    carr = np.concatenate([cos_arr0[:, None], np.broadcast_to(cos_arr, dist_s.shape)], axis=1)

    if outdoor:
        # direct and room-scatterer paths cross the wall; corridor bounces are
        # taken to reach the AP through the doorway
        n_in = 1 + env.scatterers.shape[0]
        amp[:, :n_in] *= 10 ** (-env.wall_loss_db / 20)
    return amp, dist, cdep, carr


def received_power(env: EnvironmentModel, positions: np.ndarray, outdoor: bool = False) -> np.ndarray:
    """Sum of path powers at each position before normalization."""
    return np.sum(np.abs(_paths(env, positions, outdoor)[0]) ** 2, axis=1)


def reference_power(env: EnvironmentModel) -> float:
    """Mean received power over the zone centres; the nominal SNR refers to this level."""
    return float(np.mean(received_power(env, np.array([z.center for z in env.zones]))))


def channel_at(env: EnvironmentModel, positions: np.ndarray, outdoor: bool = False) -> np.ndarray:
    """Noiseless channel ``(P, K, n_rx, n_tx)`` for users at ``positions``.

    Path amplitudes follow free-space spreading over the total path length;
    the per-packet channel is scaled so path powers sum to one.
    """
    sys = env.system
    freqs = sys.carrier_hz + sys.subcarrier_offsets_hz()  # (K,)
    amp, dist, cdep, carr = _paths(env, positions, outdoor)
    amp = amp / np.sqrt(np.sum(np.abs(amp) ** 2, axis=1, keepdims=True))
    tau = dist / SPEED_OF_LIGHT  # (P, L)
    phase = np.exp(-1j * 2 * np.pi * freqs[None, :, None] * tau[:, None, :])  # (P, K, L)
    a_tx = _ula(sys.n_tx, sys.antenna_spacing, cdep)  # (P, L, n_tx)
    a_rx = _ula(sys.n_rx, sys.antenna_spacing, carr)  # (P, L, n_rx)
    coeff = amp[:, None, :] * phase  # (P, K, L)
    return np.einsum("pkl,plr,plt->pkrt", coeff, a_rx, a_tx)


def _jitter_positions(rng: np.random.Generator, zone: Zone, radius: float, n: int) -> np.ndarray:
    if radius <= 0:
        return np.tile(np.asarray(zone.center, float), (n, 1))
    if math.isinf(radius):
        # fill the whole cell
        half = np.asarray(zone.extent) / 2
        return np.asarray(zone.center) - half + 2 * half * rng.random((n, 2))
    # uniform over the disc, clipped to the zone extent
    r = radius * np.sqrt(rng.random(n))
    t = 2 * np.pi * rng.random(n)
    xy = np.asarray(zone.center) + np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    half = np.asarray(zone.extent) / 2
    return np.clip(xy, np.asarray(zone.center) - half, np.asarray(zone.center) + half)


def sample_csi(
    env: EnvironmentModel,
    zone: int,
    n_packets: int,
    snr_db: float = 25.0,
    seed: int = 0,
) -> CsiBatch:
    """Draw ``n_packets`` noisy CSI packets from ``zone`` (or ``OOD_LABEL``).

    ``snr_db`` is the nominal SNR. With ``env.link_budget`` it applies at the
    room's mean received power and each packet is offset by its own power.
    """
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ValueError(f"snr_db must be finite or +inf, got {snr_db}")
    if zone != OOD_LABEL and not 0 <= zone < env.n_zones:
        raise ValueError(f"zone {zone} does not exist (environment has {env.n_zones})")
    sys = env.system
    rng = np.random.default_rng([seed, zone + 1])
    if n_packets == 0:
        batch = CsiBatch.empty(sys)
    else:
        if zone == OOD_LABEL:
            region = env.ood_region
            half = np.asarray(region.extent) / 2
            pos = np.asarray(region.center) - half + 2 * half * rng.random((n_packets, 2))
        else:
            pos = _jitter_positions(rng, env.zones[zone], env.jitter_radius, n_packets)
        outdoor = zone == OOD_LABEL
        h = channel_at(env, pos, outdoor=outdoor)
        snr = np.full(n_packets, float(snr_db))
        if env.link_budget and snr_db != math.inf:
            snr = snr + 10 * np.log10(received_power(env, pos, outdoor) / reference_power(env))
        if snr_db != math.inf:
            sigma = np.sqrt(10 ** (-snr / 10) / 2)[:, None, None, None]
            h = h + sigma * (rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape))
        batch = CsiBatch(
            system=sys,
            h=h.astype(np.complex64),
            labels=np.full(n_packets, zone, np.int64),
            env_tags=np.full(n_packets, ENV_TAGS.index(env.tag), np.uint8),
            snr_db=snr,
            positions=pos,
        )
    batch.manifest = {
        "environment": env.digest(),
        "zone": zone,
        "n_packets": n_packets,
        "snr_db": snr_db,
        "seed": seed,
    }
    return batch


def sample_all_zones(env: EnvironmentModel, n_per_zone: int, snr_db: float = 25.0, seed: int = 0) -> CsiBatch:
    return CsiBatch.concat([sample_csi(env, z, n_per_zone, snr_db, seed) for z in range(env.n_zones)])


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def split_dataset(batch: CsiBatch, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[CsiBatch, ...]:
    """Stratified per-zone partition into ``len(ratios)`` parts."""
    ratios = np.asarray(ratios, dtype=float)
    if np.any(ratios < 0) or abs(ratios.sum() - 1) > 1e-9:
        raise ValueError(f"ratios must be nonnegative and sum to 1, got {ratios.tolist()}")
    n_parts_used = int(np.count_nonzero(ratios))
    rng = np.random.default_rng(seed)
    parts = [[] for _ in ratios]
    for zone in np.unique(batch.labels):
        idx = np.flatnonzero(batch.labels == zone)
        if len(idx) < n_parts_used:
            raise ValueError(f"zone {zone} has {len(idx)} samples, fewer than {n_parts_used} split parts")
        idx = idx[rng.permutation(len(idx))]
        counts = np.floor(ratios * len(idx)).astype(int)
        # hand leftovers to the largest fractional remainders, ties to earlier parts
        rem = ratios * len(idx) - counts
        for j in np.argsort(-rem, kind="stable")[: len(idx) - counts.sum()]:
            counts[j] += 1
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for j in range(len(ratios)):
            parts[j].append(idx[bounds[j] : bounds[j + 1]])
    return tuple(
        batch.subset(np.sort(np.concatenate(p)) if p else np.zeros(0, np.int64)) for p in parts
    )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

DATASET_SCHEMA = 1
_MAGIC = b"CSIB"


class DatasetFormatError(ValueError):
    """Raised when a dataset file pair is inconsistent or damaged."""


def write_dataset(batch: CsiBatch, path) -> None:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (complex64 blob)."""
    from pathlib import Path

    stem = Path(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    n = len(batch)
    payload = np.ascontiguousarray(batch.h, dtype="<c8").tobytes()
    header = _MAGIC + DATASET_SCHEMA.to_bytes(2, "little") + n.to_bytes(4, "little")
    blob = header + payload
    manifest = {
        "schema_version": DATASET_SCHEMA,
        "system": batch.system.to_dict(),
        "environment": batch.manifest.get("environment"),
        "record_count": n,
        "blob_bytes": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "layout": "interleaved little-endian float32 (re, im), [packet][subcarrier][rx][tx]",
        "records": {
            "zone": batch.labels.tolist(),
            "environment_tag": [ENV_TAGS[t] for t in batch.env_tags.tolist()],
            "snr_db": [None if not math.isfinite(s) else s for s in batch.snr_db.tolist()],
            "position": batch.positions.tolist(),
        },
        "manifest": batch.manifest,
    }
    stem.with_suffix(".bin").write_bytes(blob)
    stem.with_suffix(".json").write_text(json.dumps(manifest, default=str))


def read_dataset(path) -> CsiBatch:
    from pathlib import Path

    stem = Path(path)
    try:
        manifest = json.loads(stem.with_suffix(".json").read_text())
        blob = stem.with_suffix(".bin").read_bytes()
    except FileNotFoundError as exc:
        raise DatasetFormatError(f"missing dataset file: {exc.filename}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("schema_version") != DATASET_SCHEMA:
        raise DatasetFormatError(
            f"schema version {manifest.get('schema_version')!r} != supported {DATASET_SCHEMA}"
        )
    if len(blob) < 10 or blob[:4] != _MAGIC:
        raise DatasetFormatError("blob header missing or truncated")
    version = int.from_bytes(blob[4:6], "little")
    if version != DATASET_SCHEMA:
        raise DatasetFormatError(f"blob schema version {version} != supported {DATASET_SCHEMA}")
    n = int.from_bytes(blob[6:10], "little")
    sys = SystemConfig(**manifest["system"])
    per_record = sys.n_valid_subcarriers * sys.n_rx * sys.n_tx * 8
    if n != manifest.get("record_count"):
        raise DatasetFormatError(
            f"blob record count {n} disagrees with manifest record_count {manifest.get('record_count')}"
        )
    if len(blob) - 10 != n * per_record:
        raise DatasetFormatError(
            f"blob holds {len(blob) - 10} payload bytes, expected {n * per_record} for {n} records"
        )
    rec = manifest["records"]
    if any(len(rec[k]) != n for k in ("zone", "environment_tag", "snr_db", "position")):
        raise DatasetFormatError("label table length disagrees with record_count")
    h = np.frombuffer(blob, dtype="<c8", offset=10).reshape(
        n, sys.n_valid_subcarriers, sys.n_rx, sys.n_tx
    ).astype(np.complex64)
    return CsiBatch(
        system=sys,
        h=h,
        labels=np.asarray(rec["zone"], dtype=np.int64),
        env_tags=np.asarray([ENV_TAGS.index(t) for t in rec["environment_tag"]], dtype=np.uint8),
        snr_db=np.asarray([math.inf if s is None else s for s in rec["snr_db"]], dtype=float),
        positions=np.asarray(rec["position"], dtype=float).reshape(n, 2),
        manifest=manifest.get("manifest", {}),
    )
