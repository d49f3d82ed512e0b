"""Placement search: exhaustive grid scan plus particle-swarm refinement.

The grid stage evaluates the learned dissimilarity at every free cell center
and orientation sample and takes the argmin with a fixed lexicographic
tie-break (row, col, orientation).  Work is split into fixed-size chunks so
the reduction is identical no matter how many worker threads run it.  The
swarm stage then refines (x, y, heading) continuously, never returning a
value worse than its grid seed.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import features as ft
from . import scene as sc
from . import simnet
from .errors import NoFreeSpace
from .geometry import angle_difference, wrap_angle

GRID_CHUNK_CELLS = 64  # fixed chunk size => thread-count-invariant reduction


@dataclass(frozen=True)
class GridSpec:
    cell_size: float = 0.25
    orientations: int = 24
    clearance: float = 0.30

    def __post_init__(self):
        if self.cell_size <= 0 or self.orientations < 1 or self.clearance < 0:
            raise ValueError("bad grid spec")

    @property
    def headings(self) -> np.ndarray:
        return np.arange(self.orientations) * (2.0 * np.pi / self.orientations)


@dataclass(frozen=True)
class PSOConfig:
    inertia: float = 0.73
    c1: float = 1.49
    c2: float = 1.49
    particles: int = 10
    max_epochs: int = 10
    init_position_jitter: float = 0.5
    init_heading_jitter_deg: float = 30.0
    velocity_clamp_position: float = 0.5
    velocity_clamp_heading_deg: float = 45.0
    seed: int = 0

    def __post_init__(self):
        if self.particles < 1 or self.max_epochs < 0:
            raise ValueError("bad PSO config")


@dataclass(eq=False)
class PlacementQuery:
    scene_a: sc.Scene
    scene_b: sc.Scene
    p_x: sc.Placement
    p_y_prime: sc.Placement
    p_y: sc.Placement
    model: simnet.SimilarityModel


@dataclass(eq=False)
class PlacementResult:
    placement: sc.Placement
    dissimilarity: float
    grid_best: sc.Placement
    grid_dissimilarity: float
    stance: str
    timings_ms: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "placement": {
                "pos": [float(self.placement.position[0]), float(self.placement.position[1])],
                "heading": float(self.placement.heading),
                "stance": self.stance,
            },
            "dissimilarity": self.dissimilarity,
            "grid_best": {
                "pos": [float(self.grid_best.position[0]), float(self.grid_best.position[1])],
                "heading": float(self.grid_best.heading),
            },
            "grid_dissimilarity": self.grid_dissimilarity,
            "timings_ms": self.timings_ms,
        }


class FeatureTable:
    """Precomputed per-(cell, orientation) feature blocks for one scene.

    Holds everything independent of the counterpart placement; the
    interpersonal block is assembled at lookup time.  Cells are ordered
    row-major, matching the solver's tie-break.
    """

    def __init__(self, scn, grid, cfg, centers, rows, cols, places):
        self.scene = scn
        self.grid = grid
        self.cfg = cfg
        self.centers = centers
        self.rows = rows
        self.cols = cols
        self.places = places  # PrecomputedPlacementFeatures

    @property
    def n_cells(self) -> int:
        return self.centers.shape[0]

    def lookup(self, cell_index: int, orientation_index: int, other: sc.Placement) -> np.ndarray:
        """Full 45-dim vector for one (cell, orientation); equals a fresh
        extraction at the cell center exactly."""
        sub = self.slice_features(np.array([cell_index]), other)
        return sub[0, orientation_index]

    def slice_features(self, cell_indices: np.ndarray, other: sc.Placement) -> np.ndarray:
        """(len(cells), orientations, 45) feature array for selected cells."""
        sel = ft.PrecomputedPlacementFeatures(
            self.places.scene,
            self.places.positions[cell_indices],
            self.places.headings,
            self.cfg,
            va=self.places.va[cell_indices],
            pa=self.places.pa[cell_indices],
            sp=self.places.sp[cell_indices],
            sitting=self.places.sitting[cell_indices],
        )
        return sel.assemble(other)


def precompute_scene_features(
    scn: sc.Scene, grid: GridSpec, cfg: ft.FeatureConfig
) -> FeatureTable:
    """Feature table over all free grid cells and orientation samples."""
    centers, rows, cols, _, _ = sc.free_grid_cells(scn, grid.cell_size, grid.clearance)
    places = ft.precompute_placement_features(scn, centers, grid.headings, cfg)
    return FeatureTable(scn, grid, cfg, centers, rows, cols, places)


def _chunk_ranges(n_cells: int):
    return [(s, min(s + GRID_CHUNK_CELLS, n_cells)) for s in range(0, n_cells, GRID_CHUNK_CELLS)]


def grid_search(
    query: PlacementQuery,
    table: FeatureTable,
    grid: GridSpec,
    threads: int = 1,
    anchor: np.ndarray | None = None,
) -> tuple[sc.Placement, float]:
    """Argmin of the learned dissimilarity over all grid samples.

    Ties break toward the lowest (row, col, orientation).  The chunk layout
    is fixed, so results do not depend on the number of worker threads.
    """
    if table.n_cells == 0:
        raise NoFreeSpace(f"scene {query.scene_b.id!r} has no free grid cells")
    if anchor is None:
        anchor = ft.extract(query.p_x, query.p_y_prime, query.scene_a, table.cfg)

    def eval_chunk(bounds):
        start, stop = bounds
        feats = table.slice_features(np.arange(start, stop), query.p_y)
        flat = feats.reshape(-1, ft.TOTAL_DIM)
        anchors = np.broadcast_to(anchor, flat.shape)
        d = simnet.dissimilarity_batch(query.model, anchors, flat)
        d = d.reshape(stop - start, -1)
        # local argmin in (row, col, orientation) order: cells are row-major
        # and orientations enumerate fastest, so C-order argmin is the rule
        local = int(np.argmin(d))
        ci, oi = divmod(local, d.shape[1])
        return float(d[ci, oi]), start + ci, oi

    chunks = _chunk_ranges(table.n_cells)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(eval_chunk, chunks))
    else:
        results = [eval_chunk(c) for c in chunks]

    best_value = np.inf
    best_cell = -1
    best_orient = -1
    for value, cell, orient in results:
        if value < best_value:
            best_value, best_cell, best_orient = value, cell, orient
    placement = sc.Placement(table.centers[best_cell], grid.headings[best_orient])
    return placement, best_value


def _swarm_minimize(objective_batch, start, start_value, cfg: PSOConfig):
    """Synchronous swarm over (x, y, theta) with wrapped heading arithmetic.

    objective_batch maps a (K, 3) state array to (K,) scores; infeasible
    states must already score 1.0 there, which no feasible dissimilarity can
    reach.  Particle 0 starts exactly at the seed so the result is never
    worse than it.  Velocities update against the bests of the previous
    epoch, then the whole swarm is scored in one batch.
    """
    if cfg.max_epochs == 0 or cfg.particles == 0:
        return start, start_value
    rng = np.random.default_rng(cfg.seed)
    dim = 3
    pos = np.empty((cfg.particles, dim))
    pos[0] = start
    direction = rng.uniform(0.0, 2.0 * np.pi, size=cfg.particles - 1)
    radius = rng.uniform(0.0, cfg.init_position_jitter, size=cfg.particles - 1)
    pos[1:, 0] = start[0] + radius * np.cos(direction)
    pos[1:, 1] = start[1] + radius * np.sin(direction)
    pos[1:, 2] = wrap_angle(
        start[2]
        + rng.uniform(-1.0, 1.0, size=cfg.particles - 1)
        * np.radians(cfg.init_heading_jitter_deg)
    )
    vel = np.zeros((cfg.particles, dim))

    pbest = pos.copy()
    pbest_val = objective_batch(pos)
    pbest_val[0] = start_value
    g = int(np.argmin(pbest_val))
    gbest = pbest[g].copy()
    gbest_val = float(pbest_val[g])

    v_clamp = np.array(
        [cfg.velocity_clamp_position, cfg.velocity_clamp_position,
         np.radians(cfg.velocity_clamp_heading_deg)]
    )
    for _ in range(cfg.max_epochs):
        r1 = rng.uniform(size=(cfg.particles, dim))
        r2 = rng.uniform(size=(cfg.particles, dim))
        delta_p = pbest - pos
        delta_g = gbest[None, :] - pos
        delta_p[:, 2] = _signed_angle(pbest[:, 2], pos[:, 2])
        delta_g[:, 2] = _signed_angle(gbest[2], pos[:, 2])
        vel = cfg.inertia * vel + cfg.c1 * r1 * delta_p + cfg.c2 * r2 * delta_g
        vel = np.clip(vel, -v_clamp, v_clamp)
        pos = pos + vel
        pos[:, 2] = wrap_angle(pos[:, 2])
        values = objective_batch(pos)
        improved = values < pbest_val
        pbest[improved] = pos[improved]
        pbest_val[improved] = values[improved]
        g = int(np.argmin(pbest_val))
        if pbest_val[g] < gbest_val:
            gbest = pbest[g].copy()
            gbest_val = float(pbest_val[g])
    return gbest, gbest_val


def _signed_angle(a, b):
    """Signed wrapped difference a - b in [-pi, pi)."""
    return np.mod(np.asarray(a) - b + np.pi, 2.0 * np.pi) - np.pi


def pso_refine(
    query: PlacementQuery,
    start: tuple[sc.Placement, float],
    pso: PSOConfig,
    anchor: np.ndarray | None = None,
    clearance: float = 0.30,
) -> tuple[sc.Placement, float]:
    """Refine a grid seed continuously; never returns a worse value."""
    if anchor is None:
        anchor = ft.extract(query.p_x, query.p_y_prime, query.scene_a, query.model.feature_config)
    cfg = query.model.feature_config

    def objective_batch(states):
        free = sc.is_free_batch(query.scene_b, states[:, :2], clearance)
        values = np.ones(states.shape[0])
        if free.any():
            idx = np.flatnonzero(free)
            vecs = ft.extract_pairs(
                query.scene_b, states[idx, :2], states[idx, 2], query.p_y, cfg
            )
            anchors = np.broadcast_to(anchor, vecs.shape)
            values[idx] = simnet.dissimilarity_batch(query.model, anchors, vecs)
        return values

    start_placement, start_value = start
    x0 = np.array([start_placement.position[0], start_placement.position[1],
                   start_placement.heading])
    best, best_value = _swarm_minimize(objective_batch, x0, start_value, pso)
    return sc.Placement(best[:2], best[2]), float(best_value)


def place_avatar(
    query: PlacementQuery,
    grid: GridSpec | None = None,
    pso: PSOConfig | None = None,
    table: FeatureTable | None = None,
    threads: int = 1,
) -> PlacementResult:
    """Grid scan then swarm refinement; the table may be precomputed offline."""
    grid = grid or GridSpec()
    pso = pso or PSOConfig()
    simnet.require_fingerprint(query.model, query.model.feature_config)
    if table is None:
        table = precompute_scene_features(query.scene_b, grid, query.model.feature_config)
    anchor = ft.extract(query.p_x, query.p_y_prime, query.scene_a, query.model.feature_config)

    t0 = time.perf_counter()
    grid_best, grid_value = grid_search(query, table, grid, threads=threads, anchor=anchor)
    t1 = time.perf_counter()
    refined, refined_value = pso_refine(
        query, (grid_best, grid_value), pso, anchor=anchor, clearance=grid.clearance
    )
    t2 = time.perf_counter()

    return PlacementResult(
        placement=refined,
        dissimilarity=refined_value,
        grid_best=grid_best,
        grid_dissimilarity=grid_value,
        stance=sc.derive_stance(query.scene_b, refined.position),
        timings_ms={"grid_ms": (t1 - t0) * 1e3, "pso_ms": (t2 - t1) * 1e3},
    )
