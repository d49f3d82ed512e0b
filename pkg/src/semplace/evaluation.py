"""Rank-based evaluation: percentile ranks, CMC curves, heatmaps.

Each user-preferred placement is ranked against every feasible grid sample
of its scene; the cumulative matching characteristic curve aggregates the
percentile ranks over a question set.  Heatmaps export the best-orientation
dissimilarity per cell as a portable pixmap plus a CSV with the same values.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import features as ft
from . import scene as sc
from . import simnet
from . import solver
from .dataset import SurveyQuestion
from .errors import EmptyInput, NoFreeSpace, RangeError


@dataclass(frozen=True)
class RankRecord:
    question_id: str
    positive_index: int
    rank: int
    total: int

    @property
    def percentile(self) -> int:
        return percentile_rank(self.rank, self.total)


def percentile_rank(rank: int, total: int) -> int:
    """ceil(100 * rank / total), an integer in 1..100."""
    if total < 1 or rank < 1 or rank > total:
        raise RangeError(f"rank must be in 1..{total}, got {rank}")
    return -((-100 * rank) // total)


def cmc_curve(records) -> np.ndarray:
    """Element k-1 = fraction of records with percentile <= k, k = 1..100."""
    records = list(records)
    if not records:
        raise EmptyInput("cmc_curve needs at least one rank record")
    percentiles = np.array([r.percentile for r in records])
    ks = np.arange(1, 101)
    return (percentiles[None, :] <= ks[:, None]).sum(axis=1) / len(records)


def rank_positives(
    model: simnet.SimilarityModel,
    question: SurveyQuestion,
    grid: solver.GridSpec | None = None,
    table: solver.FeatureTable | None = None,
) -> list[RankRecord]:
    """Rank each positive among all feasible grid samples plus the positives.

    Candidates are sorted by ascending dissimilarity to the anchor; at equal
    value grid samples come first (in row/col/orientation order) and
    positives last, so reported ranks never flatter the model.
    """
    grid = grid or solver.GridSpec()
    cfg = model.feature_config
    if table is None:
        table = solver.precompute_scene_features(question.scene_b, grid, cfg)
    if table.n_cells == 0:
        raise NoFreeSpace(f"scene {question.scene_b.id!r} has no free grid cells")
    anchor = ft.extract(question.p_x, question.p_y_prime, question.scene_a, cfg)

    grid_feats = table.slice_features(np.arange(table.n_cells), question.p_y)
    flat = grid_feats.reshape(-1, ft.TOTAL_DIM)
    d_grid = simnet.dissimilarity_batch(
        model, np.broadcast_to(anchor, flat.shape), flat
    )
    pos_vectors = np.stack(
        [ft.extract(p, question.p_y, question.scene_b, cfg) for p in question.positives]
    )
    d_pos = simnet.dissimilarity_batch(
        model, np.broadcast_to(anchor, pos_vectors.shape), pos_vectors
    )

    total = d_grid.size + d_pos.size
    records = []
    for i, dp in enumerate(d_pos):
        # pessimistic rank: grid samples at equal value sort ahead, and so do
        # positives with a lower index
        worse_grid = int(np.count_nonzero(d_grid <= dp))
        ahead_pos = int(np.count_nonzero(d_pos < dp) + np.count_nonzero(d_pos[:i] == dp))
        records.append(
            RankRecord(
                question_id=question.id,
                positive_index=i,
                rank=worse_grid + ahead_pos + 1,
                total=total,
            )
        )
    return records


def ablation_table(variant_models: dict[str, list], test_set) -> list[tuple[str, float, float]]:
    """(variant, mean accuracy, std over seeds) rows, best mean first."""
    from .trainer import triplet_accuracy

    rows = []
    for name, models in variant_models.items():
        accs = np.array([triplet_accuracy(m, test_set) for m in models])
        rows.append((name, float(accs.mean()), float(accs.std())))
    rows.sort(key=lambda r: -r[1])
    return rows


# ---------------------------------------------------------------------------
# Heatmaps
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class HeatmapGrid:
    scene_id: str
    cell_size: float
    n_rows: int
    n_cols: int
    rows: np.ndarray       # (F,) grid row of each feasible cell
    cols: np.ndarray       # (F,) grid col of each feasible cell
    best_d: np.ndarray     # (F,) best dissimilarity over orientations
    best_orientation: np.ndarray  # (F,) orientation index of the best


def _heat_color(d: np.ndarray, dmin: float, dmax: float) -> np.ndarray:
    """Fixed linear colormap: low dissimilarity red, high blue."""
    if dmax > dmin:
        t = (d - dmin) / (dmax - dmin)
    else:
        t = np.full_like(d, 0.5)
    rgb = np.empty((d.size, 3), dtype=np.uint8)
    rgb[:, 0] = np.round(255.0 * (1.0 - t)).astype(np.uint8)
    rgb[:, 1] = 0
    rgb[:, 2] = np.round(255.0 * t).astype(np.uint8)
    return rgb


def write_ppm(pixels: np.ndarray) -> bytes:
    """P6 binary pixmap from an (H, W, 3) uint8 array."""
    h, w, _ = pixels.shape
    return b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def read_ppm(data: bytes) -> np.ndarray:
    buf = io.BytesIO(data)
    if buf.readline().strip() != b"P6":
        raise ValueError("not a P6 pixmap")
    w, h = map(int, buf.readline().split())
    maxval = int(buf.readline())
    if maxval != 255:
        raise ValueError("expected 8-bit pixmap")
    return np.frombuffer(buf.read(w * h * 3), dtype=np.uint8).reshape(h, w, 3)


def export_heatmap(
    model: simnet.SimilarityModel,
    question: SurveyQuestion,
    grid: solver.GridSpec | None = None,
    table: solver.FeatureTable | None = None,
) -> tuple[HeatmapGrid, bytes, str]:
    """Best-orientation dissimilarity per feasible cell.

    Returns (grid data, P6 image bytes, CSV text).  Image rows run north to
    south (row 0 of the scene grid is the bottom); infeasible cells are
    black.  The CSV carries exactly the values the image encodes.
    """
    grid = grid or solver.GridSpec()
    cfg = model.feature_config
    if table is None:
        table = solver.precompute_scene_features(question.scene_b, grid, cfg)
    if table.n_cells == 0:
        raise NoFreeSpace(f"scene {question.scene_b.id!r} has no free grid cells")
    anchor = ft.extract(question.p_x, question.p_y_prime, question.scene_a, cfg)

    feats = table.slice_features(np.arange(table.n_cells), question.p_y)
    flat = feats.reshape(-1, ft.TOTAL_DIM)
    d = simnet.dissimilarity_batch(model, np.broadcast_to(anchor, flat.shape), flat)
    d = d.reshape(table.n_cells, -1)
    best_orientation = d.argmin(axis=1)
    best_d = d[np.arange(table.n_cells), best_orientation]

    xmin, ymin, xmax, ymax = question.scene_b.bounds()
    n_cols = max(1, int(np.ceil((xmax - xmin) / grid.cell_size - 1e-9)))
    n_rows = max(1, int(np.ceil((ymax - ymin) / grid.cell_size - 1e-9)))
    hm = HeatmapGrid(
        scene_id=question.scene_b.id,
        cell_size=grid.cell_size,
        n_rows=n_rows,
        n_cols=n_cols,
        rows=table.rows,
        cols=table.cols,
        best_d=best_d,
        best_orientation=best_orientation.astype(np.intp),
    )

    pixels = np.zeros((n_rows, n_cols, 3), dtype=np.uint8)
    colors = _heat_color(best_d, float(best_d.min()), float(best_d.max()))
    # flip vertically: image row 0 is the northernmost scene row
    pixels[n_rows - 1 - table.rows, table.cols] = colors
    image = write_ppm(pixels)

    step_deg = 360.0 / grid.orientations
    lines = ["row,col,best_d,best_orientation_deg"]
    for r, c, dv, oi in zip(table.rows, table.cols, best_d, best_orientation):
        lines.append(f"{r},{c},{float(dv)!r},{oi * step_deg:g}")
    return hm, image, "\n".join(lines) + "\n"
