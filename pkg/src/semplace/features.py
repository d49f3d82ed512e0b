"""Placement-semantics features.

A placement in a furnished scene, given the other party's placement, is
described by a 45-dimensional vector laid out as

    [interpersonal (3) | visual attention (12) | pose accommodation (17) |
     sit/stand (1) | spatial (12)]

All components are kept on comparable O(1) scales: distances are divided by
fixed normalization constants, angles by pi, heights by a height scale.
Everything here is a pure function of immutable inputs; the batched forms
(N positions x M headings) are the single code path, and scalar calls wrap
them with N = M = 1 so table lookups reproduce fresh extractions exactly.
"""

from __future__ import annotations

import functools
import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import geometry as geo
from . import scene as sc
from .errors import DegenerateGeometry, InvariantError

IP_DIM = 3
VA_DIM = sc.NUM_CATEGORIES
PA_DIM = 17
SS_DIM = 1
SP_DIM = sc.NUM_CATEGORIES
TOTAL_DIM = IP_DIM + VA_DIM + PA_DIM + SS_DIM + SP_DIM  # 45

IP_SLICE = slice(0, 3)
VA_SLICE = slice(3, 15)
PA_SLICE = slice(15, 32)
SS_SLICE = slice(32, 33)
SP_SLICE = slice(33, 45)


@dataclass(frozen=True)
class FeatureConfig:
    """Constants of the feature model (distances in meters, angles degrees)."""

    va_max_distance: float = 4.0
    va_max_angle_deg: float = 40.0
    sp_max_distance: float = 3.0
    pose_inner_radius: float = 0.25
    pose_outer_radius: float = 0.5
    pose_sectors: int = 16
    pose_sample_step: float = 0.05
    norm_distance_scale: float = 5.0
    norm_height_scale: float = 2.0

    def __post_init__(self):
        positive = (
            self.va_max_distance,
            self.va_max_angle_deg,
            self.sp_max_distance,
            self.pose_inner_radius,
            self.pose_outer_radius,
            self.pose_sample_step,
            self.norm_distance_scale,
            self.norm_height_scale,
        )
        if any(v <= 0 for v in positive) or self.pose_sectors < 1:
            raise InvariantError("feature config values must be strictly positive")
        if self.pose_inner_radius >= self.pose_outer_radius:
            raise InvariantError("pose_inner_radius must be < pose_outer_radius")

    def fingerprint(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@functools.lru_cache(maxsize=8)
def _pose_lattice(inner: float, outer: float, step: float, sectors: int):
    """Cell-centered sample lattice for the pose height probe, local frame.

    Local +x is the heading direction.  Returns (center offsets (Lc, 2),
    annulus offsets (La, 2), annulus sector index (La,)).  Sector 0 is
    centered on the heading and sectors proceed counter-clockwise.
    """
    n = int(np.ceil(outer / step))
    coords = (np.arange(-n, n) + 0.5) * step
    ox, oy = np.meshgrid(coords, coords, indexing="ij")
    offsets = np.column_stack([ox.ravel(), oy.ravel()])
    r = np.hypot(offsets[:, 0], offsets[:, 1])
    center = offsets[r <= inner]
    ann_mask = (r > inner) & (r <= outer)
    annulus = offsets[ann_mask]
    alpha = np.arctan2(annulus[:, 1], annulus[:, 0])
    width = 2.0 * np.pi / sectors
    sector = np.floor(geo.wrap_angle(alpha + width / 2.0) / width).astype(np.intp) % sectors
    for arr in (center, annulus, sector):
        arr.flags.writeable = False
    return center, annulus, sector


def interpersonal_batch(
    positions: np.ndarray, headings: np.ndarray, other: sc.Placement, cfg: FeatureConfig
) -> np.ndarray:
    """(N, M, 3): clamped normalized distance + the two facing angles / pi."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    headings = np.atleast_1d(np.asarray(headings, dtype=np.float64))
    delta = other.position[None, :] - positions
    dist = np.hypot(delta[:, 0], delta[:, 1])
    if np.any(dist < 1e-12):
        raise DegenerateGeometry("self and other positions coincide")
    n, m = positions.shape[0], headings.shape[0]
    out = np.empty((n, m, IP_DIM))
    out[:, :, 0] = np.minimum(1.0, dist / cfg.norm_distance_scale)[:, None]
    bearing_to_other = np.arctan2(delta[:, 1], delta[:, 0])
    out[:, :, 1] = geo.angle_difference(headings[None, :], bearing_to_other[:, None]) / np.pi
    bearing_to_self = np.arctan2(-delta[:, 1], -delta[:, 0])
    out[:, :, 2] = (geo.angle_difference(other.heading, bearing_to_self) / np.pi)[:, None]
    return out


def visual_attention_batch(
    scn: sc.Scene, positions: np.ndarray, headings: np.ndarray, cfg: FeatureConfig
) -> np.ndarray:
    """(N, M, 12): per category, sum of (d_max-d)(a_max-a)/(d_max*a_max)
    over objects within both the distance and angular-deviation bounds."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    headings = np.atleast_1d(np.asarray(headings, dtype=np.float64))
    n, m = positions.shape[0], headings.shape[0]
    out = np.zeros((n, m, VA_DIM))
    d_max = cfg.va_max_distance
    a_max = cfg.va_max_angle_deg
    norm = d_max * a_max
    for cat_idx, group in enumerate(scn._by_category):
        for obj in group:
            delta = obj.attention_point[None, :] - positions
            dist = np.hypot(delta[:, 0], delta[:, 1])
            bearing = np.arctan2(delta[:, 1], delta[:, 0])
            dev_deg = np.degrees(
                geo.angle_difference(bearing[:, None], headings[None, :])
            )
            contrib = (d_max - dist)[:, None] * (a_max - dev_deg) / norm
            contrib *= (dist[:, None] < d_max) & (dev_deg < a_max)
            out[:, :, cat_idx] += contrib
    return out


def spatial_batch(scn: sc.Scene, positions: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """(N, 12): per category, sum of (d_max-d)/d_max over objects within range."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    out = np.zeros((positions.shape[0], SP_DIM))
    d_max = cfg.sp_max_distance
    for cat_idx, group in enumerate(scn._by_category):
        for obj in group:
            delta = obj.attention_point[None, :] - positions
            dist = np.hypot(delta[:, 0], delta[:, 1])
            out[:, cat_idx] += np.where(dist < d_max, (d_max - dist) / d_max, 0.0)
    return out


def pose_accommodation_batch(
    scn: sc.Scene, positions: np.ndarray, headings: np.ndarray, cfg: FeatureConfig
) -> np.ndarray:
    """(N, M, 1 + sectors): normalized mean height of the center disk and of
    each annulus sector; the probe lattice rotates with the heading so the
    feature is rigid-motion equivariant."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    headings = np.atleast_1d(np.asarray(headings, dtype=np.float64))
    center_off, annulus_off, sector_idx = _pose_lattice(
        cfg.pose_inner_radius, cfg.pose_outer_radius, cfg.pose_sample_step, cfg.pose_sectors
    )
    n, m = positions.shape[0], headings.shape[0]
    out = np.empty((n, m, 1 + cfg.pose_sectors))
    sector_cols = [np.flatnonzero(sector_idx == s) for s in range(cfg.pose_sectors)]
    for j, heading in enumerate(headings):
        c, s = np.cos(heading), np.sin(heading)
        # world offset = R(heading) @ local offset, written out to stay BLAS-free
        cw = np.column_stack(
            [center_off[:, 0] * c - center_off[:, 1] * s,
             center_off[:, 0] * s + center_off[:, 1] * c]
        )
        aw = np.column_stack(
            [annulus_off[:, 0] * c - annulus_off[:, 1] * s,
             annulus_off[:, 0] * s + annulus_off[:, 1] * c]
        )
        pts_c = (positions[:, None, :] + cw[None, :, :]).reshape(-1, 2)
        pts_a = (positions[:, None, :] + aw[None, :, :]).reshape(-1, 2)
        hc = sc.height_at_batch(scn, pts_c).reshape(n, -1)
        ha = sc.height_at_batch(scn, pts_a).reshape(n, -1)
        hc = np.clip(hc / cfg.norm_height_scale, 0.0, 1.0)
        ha = np.clip(ha / cfg.norm_height_scale, 0.0, 1.0)
        out[:, j, 0] = hc.mean(axis=1)
        for sidx, cols in enumerate(sector_cols):
            out[:, j, 1 + sidx] = ha[:, cols].mean(axis=1)
    return out


class PrecomputedPlacementFeatures:
    """Scene-dependent feature blocks for a set of positions x headings.

    Holds everything that does not depend on the other party's placement
    (visual attention, pose, spatial, stance); `assemble` fills in the
    interpersonal block for a concrete counterpart.
    """

    def __init__(self, scn, positions, headings, cfg, va, pa, sp, sitting):
        self.scene = scn
        self.positions = positions
        self.headings = headings
        self.cfg = cfg
        self.va = va
        self.pa = pa
        self.sp = sp
        self.sitting = sitting

    def assemble(self, other: sc.Placement) -> np.ndarray:
        """Full (N, M, 45) feature array given the other party's placement."""
        n, m = self.positions.shape[0], self.headings.shape[0]
        out = np.empty((n, m, TOTAL_DIM))
        out[:, :, IP_SLICE] = interpersonal_batch(self.positions, self.headings, other, self.cfg)
        out[:, :, VA_SLICE] = self.va
        out[:, :, PA_SLICE] = self.pa
        out[:, :, SS_SLICE] = self.sitting.astype(np.float64)[:, None, None]
        out[:, :, SP_SLICE] = self.sp[:, None, :]
        return out


def precompute_placement_features(
    scn: sc.Scene, positions: np.ndarray, headings: np.ndarray, cfg: FeatureConfig
) -> PrecomputedPlacementFeatures:
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    headings = np.atleast_1d(np.asarray(headings, dtype=np.float64))
    return PrecomputedPlacementFeatures(
        scn,
        positions,
        headings,
        cfg,
        va=visual_attention_batch(scn, positions, headings, cfg),
        pa=pose_accommodation_batch(scn, positions, headings, cfg),
        sp=spatial_batch(scn, positions, cfg),
        sitting=sc.stance_batch(scn, positions),
    )


def interpersonal_pairs(
    positions: np.ndarray, headings: np.ndarray, other: sc.Placement, cfg: FeatureConfig
) -> np.ndarray:
    """(K, 3) for aligned (position, heading) pairs."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    headings = np.atleast_1d(np.asarray(headings, dtype=np.float64))
    delta = other.position[None, :] - positions
    dist = np.hypot(delta[:, 0], delta[:, 1])
    if np.any(dist < 1e-12):
        raise DegenerateGeometry("self and other positions coincide")
    out = np.empty((positions.shape[0], IP_DIM))
    out[:, 0] = np.minimum(1.0, dist / cfg.norm_distance_scale)
    bearing_to_other = np.arctan2(delta[:, 1], delta[:, 0])
    out[:, 1] = geo.angle_difference(headings, bearing_to_other) / np.pi
    bearing_to_self = np.arctan2(-delta[:, 1], -delta[:, 0])
    out[:, 2] = geo.angle_difference(other.heading, bearing_to_self) / np.pi
    return out


def visual_attention_pairs(
    scn: sc.Scene, positions: np.ndarray, headings: np.ndarray, cfg: FeatureConfig
) -> np.ndarray:
    """(K, 12) for aligned (position, heading) pairs."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    headings = np.atleast_1d(np.asarray(headings, dtype=np.float64))
    out = np.zeros((positions.shape[0], VA_DIM))
    d_max = cfg.va_max_distance
    a_max = cfg.va_max_angle_deg
    norm = d_max * a_max
    for cat_idx, group in enumerate(scn._by_category):
        for obj in group:
            delta = obj.attention_point[None, :] - positions
            dist = np.hypot(delta[:, 0], delta[:, 1])
            bearing = np.arctan2(delta[:, 1], delta[:, 0])
            dev_deg = np.degrees(geo.angle_difference(bearing, headings))
            contrib = (d_max - dist) * (a_max - dev_deg) / norm
            contrib *= (dist < d_max) & (dev_deg < a_max)
            out[:, cat_idx] += contrib
    return out


def pose_accommodation_pairs(
    scn: sc.Scene, positions: np.ndarray, headings: np.ndarray, cfg: FeatureConfig
) -> np.ndarray:
    """(K, 1 + sectors) for aligned (position, heading) pairs.

    One bulk height query covers every particle's probe lattice, which is
    what makes per-epoch swarm evaluation cheap.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    headings = np.atleast_1d(np.asarray(headings, dtype=np.float64))
    center_off, annulus_off, sector_idx = _pose_lattice(
        cfg.pose_inner_radius, cfg.pose_outer_radius, cfg.pose_sample_step, cfg.pose_sectors
    )
    k = positions.shape[0]
    c = np.cos(headings)[:, None]
    s = np.sin(headings)[:, None]
    cw = np.stack(
        [center_off[None, :, 0] * c - center_off[None, :, 1] * s,
         center_off[None, :, 0] * s + center_off[None, :, 1] * c], axis=2
    )
    aw = np.stack(
        [annulus_off[None, :, 0] * c - annulus_off[None, :, 1] * s,
         annulus_off[None, :, 0] * s + annulus_off[None, :, 1] * c], axis=2
    )
    pts_c = (positions[:, None, :] + cw).reshape(-1, 2)
    pts_a = (positions[:, None, :] + aw).reshape(-1, 2)
    hc = np.clip(sc.height_at_batch(scn, pts_c).reshape(k, -1) / cfg.norm_height_scale, 0.0, 1.0)
    ha = np.clip(sc.height_at_batch(scn, pts_a).reshape(k, -1) / cfg.norm_height_scale, 0.0, 1.0)
    out = np.empty((k, 1 + cfg.pose_sectors))
    out[:, 0] = hc.mean(axis=1)
    for sidx in range(cfg.pose_sectors):
        out[:, 1 + sidx] = ha[:, sector_idx == sidx].mean(axis=1)
    return out


def extract_pairs(
    scn: sc.Scene,
    positions: np.ndarray,
    headings: np.ndarray,
    other: sc.Placement,
    cfg: FeatureConfig,
) -> np.ndarray:
    """(K, 45) feature rows for aligned (position, heading) pairs."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    headings = np.atleast_1d(np.asarray(headings, dtype=np.float64))
    out = np.empty((positions.shape[0], TOTAL_DIM))
    out[:, IP_SLICE] = interpersonal_pairs(positions, headings, other, cfg)
    out[:, VA_SLICE] = visual_attention_pairs(scn, positions, headings, cfg)
    out[:, PA_SLICE] = pose_accommodation_pairs(scn, positions, headings, cfg)
    out[:, SS_SLICE] = sc.stance_batch(scn, positions).astype(np.float64)[:, None]
    out[:, SP_SLICE] = spatial_batch(scn, positions, cfg)
    return out


# ---------------------------------------------------------------------------
# Scalar wrappers
# ---------------------------------------------------------------------------

def interpersonal(self_p: sc.Placement, other_p: sc.Placement, cfg: FeatureConfig) -> np.ndarray:
    return interpersonal_batch(self_p.position[None, :], [self_p.heading], other_p, cfg)[0, 0]


def visual_attention(p: sc.Placement, scn: sc.Scene, cfg: FeatureConfig) -> np.ndarray:
    return visual_attention_batch(scn, p.position[None, :], [p.heading], cfg)[0, 0]


def pose_accommodation(p: sc.Placement, scn: sc.Scene, cfg: FeatureConfig) -> np.ndarray:
    return pose_accommodation_batch(scn, p.position[None, :], [p.heading], cfg)[0, 0]


def spatial(p: sc.Placement, scn: sc.Scene, cfg: FeatureConfig) -> np.ndarray:
    return spatial_batch(scn, p.position[None, :], cfg)[0]


def extract(
    self_p: sc.Placement, other_p: sc.Placement, scn: sc.Scene, cfg: FeatureConfig
) -> np.ndarray:
    """The full 45-dim feature vector of self_p given other_p in scn."""
    table = precompute_placement_features(scn, self_p.position[None, :], [self_p.heading], cfg)
    return table.assemble(other_p)[0, 0]
