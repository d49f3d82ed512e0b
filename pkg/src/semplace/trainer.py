"""Training loops for the similarity network and the bilinear baseline.

Mini-batch gradient descent on the composite loss (log-likelihood push +
hinge ranking).  Everything is seeded and single-writer: given the same
(seed, config, dataset) the final weights are bit-identical run to run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import simnet
from .errors import InsufficientPairs, NonFiniteLoss
from .features import TOTAL_DIM

OPTIMIZERS = ("adaptive_moment", "sgd_momentum")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    optimizer: str = "adaptive_moment"
    momentum: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    seed: int = 0
    early_stop_patience: int = 20

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass
class SplitSpec:
    train_pairs: list[str]
    test_pairs: list[str]


def total_loss(pairs) -> tuple[float, float, float]:
    """(phi, psi, total) over a batch of (d_plus, d_minus) pairs."""
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("batch must be non-empty")
    arr = np.atleast_2d(arr)
    return simnet.loss_terms(arr[:, 0], arr[:, 1])


def _stack_triplets(dataset):
    anchors = np.stack([t.anchor for t in dataset])
    positives = np.stack([t.positive for t in dataset])
    negatives = np.stack([t.negative for t in dataset])
    return anchors, positives, negatives


def triplet_accuracy(model: simnet.SimilarityModel, dataset) -> float:
    """Fraction of triplets ranked correctly; ties count as failures."""
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    anchors, positives, negatives = _stack_triplets(dataset)
    correct = 0
    for start in range(0, len(dataset), 4096):
        sl = slice(start, start + 4096)
        dp, dm = simnet.triplet_forward(model, anchors[sl], positives[sl], negatives[sl])
        correct += int(np.count_nonzero(dp < dm))
    return correct / len(dataset)


class _Optimizer:
    """SGD with momentum or Adam over the flat parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        if cfg.optimizer == "adaptive_moment":
            self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        cfg = self.cfg
        self.step += 1
        if cfg.optimizer == "sgd_momentum":
            for k in params:
                g = grads[k] + cfg.weight_decay * params[k]
                self.m[k] = cfg.momentum * self.m[k] + g
                params[k] -= cfg.learning_rate * self.m[k]
            return
        b1, b2 = cfg.momentum, cfg.beta2
        corr1 = 1.0 - b1 ** self.step
        corr2 = 1.0 - b2 ** self.step
        for k in params:
            g = grads[k] + cfg.weight_decay * params[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g ** 2
            m_hat = self.m[k] / corr1
            v_hat = self.v[k] / corr2
            params[k] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + 1e-8)


def train(model: simnet.SimilarityModel, dataset, cfg: TrainConfig, val=None):
    """Optimize the model in place on triplet samples.

    Returns (model, history); history rows carry per-epoch loss terms and
    triplet accuracies (test_acc is NaN when no validation set is given).
    Early stopping watches held-out accuracy with the configured patience
    and restores the best weights seen.  On a non-finite loss the last
    epoch-end weights are restored and NonFiniteLoss is raised with that
    checkpoint attached.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    anchors, positives, negatives = _stack_triplets(dataset)
    n = len(dataset)
    optimizer = _Optimizer(model.params, cfg)
    history: list[dict] = []
    best_val = -1.0
    best_params = None
    stale = 0
    checkpoint = model.copy()

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        phi_sum = psi_sum = 0.0
        seen = 0
        try:
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                phi, psi, _, grads = simnet.loss_and_gradients(
                    model, anchors[idx], positives[idx], negatives[idx]
                )
                optimizer.update(model.params, grads)
                phi_sum += phi * len(idx)
                psi_sum += psi * len(idx)
                seen += len(idx)
        except NonFiniteLoss as exc:
            model.params = checkpoint.params
            raise NonFiniteLoss(str(exc), checkpoint=checkpoint) from exc
        checkpoint = model.copy()
        row = {
            "epoch": epoch,
            "phi": phi_sum / seen,
            "psi": psi_sum / seen,
            "total": (phi_sum + psi_sum) / seen,
            "train_acc": triplet_accuracy(model, dataset),
            "test_acc": float("nan"),
        }
        if val:
            row["test_acc"] = triplet_accuracy(model, val)
            if row["test_acc"] > best_val:
                best_val = row["test_acc"]
                best_params = {k: v.copy() for k, v in model.params.items()}
                stale = 0
            else:
                stale += 1
        history.append(row)
        if val and stale >= cfg.early_stop_patience:
            break
    if best_params is not None:
        model.params = best_params
    return model, history


def split_by_pairs(questions, seed: int) -> SplitSpec:
    """Random half/half partition of scene-pair ids; a pair never straddles."""
    pair_ids = sorted({q.pair_id for q in questions})
    if len(pair_ids) < 2:
        raise InsufficientPairs(f"need >= 2 distinct scene pairs, got {len(pair_ids)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pair_ids))
    half = len(pair_ids) // 2
    train_pairs = sorted(pair_ids[i] for i in order[:half])
    test_pairs = sorted(pair_ids[i] for i in order[half:])
    return SplitSpec(train_pairs=train_pairs, test_pairs=test_pairs)


def subsample_triplets(dataset, count: int, seed: int):
    """Uniform triplet subsample without replacement (for equal-count runs)."""
    if count >= len(dataset):
        return list(dataset)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(dataset), size=count, replace=False)
    return [dataset[i] for i in sorted(idx)]


def subsample_questions(questions, count: int, seed: int):
    """Uniform question subsample without replacement."""
    if count >= len(questions):
        return list(questions)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(questions), size=count, replace=False)
    return [questions[i] for i in sorted(idx)]


# ---------------------------------------------------------------------------
# Bilinear baseline
# ---------------------------------------------------------------------------

@dataclass
class BilinearMetric:
    """Squared Mahalanobis-style distance (x-y)^T W (x-y) with W PSD.

    Inputs are divided by a scale fixed from the training data, which makes
    accuracy exactly invariant to any uniform rescaling of the features.
    """

    weights: np.ndarray
    scale: float = 1.0

    def distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        diff = (np.atleast_2d(a) - np.atleast_2d(b)) / self.scale
        return np.einsum("ni,ij,nj->n", diff, self.weights, diff)

    def accuracy(self, dataset) -> float:
        anchors, positives, negatives = _stack_triplets(dataset)
        dp = self.distance(anchors, positives)
        dm = self.distance(anchors, negatives)
        return float(np.count_nonzero(dp < dm) / len(dataset))


@dataclass
class BilinearConfig:
    learning_rate: float = 0.05
    epochs: int = 100
    margin: float = 0.1
    batch_size: int = 256
    seed: int = 0


def _project_psd(w: np.ndarray) -> np.ndarray:
    w = 0.5 * (w + w.T)
    vals, vecs = np.linalg.eigh(w)
    vals = np.clip(vals, 0.0, None)
    return (vecs * vals) @ vecs.T


def train_bilinear_baseline(dataset, cfg: BilinearConfig | None = None) -> BilinearMetric:
    """Projected gradient descent on the triplet hinge with margin.

    W starts at the identity (plain squared Euclidean distance) and is
    projected back onto the PSD cone after every epoch.
    """
    cfg = cfg or BilinearConfig()
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    anchors, positives, negatives = _stack_triplets(dataset)
    dim = anchors.shape[1]
    if dim != TOTAL_DIM:
        raise ValueError(f"expected {TOTAL_DIM}-dim features, got {dim}")
    dpos = anchors - positives
    dneg = anchors - negatives
    scale = float(np.mean(np.linalg.norm(np.vstack([dpos, dneg]), axis=1)))
    if scale <= 0 or not np.isfinite(scale):
        scale = 1.0
    dpos = dpos / scale
    dneg = dneg / scale

    rng = np.random.default_rng(cfg.seed)
    w = np.eye(dim)
    n = len(dataset)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            dp = np.einsum("ni,ij,nj->n", dpos[idx], w, dpos[idx])
            dm = np.einsum("ni,ij,nj->n", dneg[idx], w, dneg[idx])
            active = cfg.margin + dp - dm > 0
            if not active.any():
                continue
            ap = dpos[idx][active]
            an = dneg[idx][active]
            grad = (ap.T @ ap - an.T @ an) / len(idx)
            if not np.all(np.isfinite(grad)):
                raise NonFiniteLoss("bilinear baseline gradient is not finite")
            w -= cfg.learning_rate * grad
        w = _project_psd(w)
    return BilinearMetric(weights=w, scale=scale)
