"""Similarity network over placement feature pairs.

The network maps two 45-dim placement features to a dissimilarity in (0, 1).
Building blocks:

  * MLP block: two leaky-rectifier hidden layers + linear output.
  * Feature encoder (45 -> 22): either a single MLP block ("mono", tag bbm)
    or a subfeature-split encoder ("split", tag sfpm) that routes the pose,
    spatial, and attention subvectors through dedicated blocks and passes
    the interpersonal and sit/stand slots through untouched.
  * Optional difference branch (tag dfn): a second encoder applied to the
    element-wise absolute difference of the two inputs.
  * Metric head: MLP block on the concatenated encodings, squashed through
    a logistic so the output lies in the open interval (0, 1).

All forward passes are pure and deterministic; gradients are hand-derived
for this fixed architecture (no autodiff).  Weights live in a flat
name -> array dict so sharing across branches is accumulation into the
same entries.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import FingerprintMismatch, NonFiniteLoss, ParseError, ShapeMismatch, VariantMismatch
from .features import (
    FeatureConfig,
    IP_SLICE,
    PA_SLICE,
    SP_SLICE,
    SS_SLICE,
    TOTAL_DIM,
    VA_SLICE,
)

LEAKY_SLOPE = 0.01
ENCODER_OUT = 22

MODEL_FORMAT = "semplace-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    h1_dim: int
    h2_dim: int
    out_dim: int

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.in_dim, self.h1_dim, self.h2_dim, self.out_dim)


PA_SPEC = MlpSpec(17, 14, 10, 6)
SP_SPEC = MlpSpec(12, 10, 8, 6)
VA_SPEC = MlpSpec(12, 10, 8, 6)
MONO_SPEC = MlpSpec(45, 38, 30, 22)


def metric_spec(n_blocks: int) -> MlpSpec:
    return MlpSpec(ENCODER_OUT * n_blocks, 44, 44, 1)


@dataclass(frozen=True)
class VariantSpec:
    split_encoder: bool
    difference_branch: bool

    @property
    def metric_blocks(self) -> int:
        return 3 if self.difference_branch else 2


VARIANTS: dict[str, VariantSpec] = {
    "proposed_sfpm_dfn": VariantSpec(split_encoder=True, difference_branch=True),
    "bbm_dfn": VariantSpec(split_encoder=False, difference_branch=True),
    "sfpm_nodfn": VariantSpec(split_encoder=True, difference_branch=False),
    "bbm_nodfn": VariantSpec(split_encoder=False, difference_branch=False),
    # Classic triplet baseline: one mono encoder shared across both inputs.
    "plain_triplet": VariantSpec(split_encoder=False, difference_branch=False),
}

VARIANT_ALIASES = {"proposed": "proposed_sfpm_dfn"}


def resolve_variant(name: str) -> str:
    name = VARIANT_ALIASES.get(name, name)
    if name not in VARIANTS:
        raise VariantMismatch(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}")
    return name


def _mlp_param_specs(prefix: str, spec: MlpSpec) -> list[tuple[str, tuple[int, ...]]]:
    return [
        (f"{prefix}.W0", (spec.h1_dim, spec.in_dim)),
        (f"{prefix}.b0", (spec.h1_dim,)),
        (f"{prefix}.W1", (spec.h2_dim, spec.h1_dim)),
        (f"{prefix}.b1", (spec.h2_dim,)),
        (f"{prefix}.W2", (spec.out_dim, spec.h2_dim)),
        (f"{prefix}.b2", (spec.out_dim,)),
    ]


def _encoder_param_specs(role: str, split: bool) -> list[tuple[str, tuple[int, ...]]]:
    if split:
        return (
            _mlp_param_specs(f"{role}.pa", PA_SPEC)
            + _mlp_param_specs(f"{role}.sp", SP_SPEC)
            + _mlp_param_specs(f"{role}.va", VA_SPEC)
        )
    return _mlp_param_specs(role, MONO_SPEC)


def param_specs(variant: str) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in canonical declaration order."""
    vs = VARIANTS[resolve_variant(variant)]
    specs = _encoder_param_specs("feat", vs.split_encoder)
    if vs.difference_branch:
        specs += _encoder_param_specs("diff", vs.split_encoder)
    specs += _mlp_param_specs("metric", metric_spec(vs.metric_blocks))
    return specs


@dataclass(eq=False)
class SimilarityModel:
    """Weights plus the metadata needed to use them safely."""

    variant: str
    seed: int
    feature_config: FeatureConfig
    params: dict[str, np.ndarray]

    @property
    def spec(self) -> VariantSpec:
        return VARIANTS[self.variant]

    @property
    def fingerprint(self) -> str:
        return self.feature_config.fingerprint()

    def copy(self) -> "SimilarityModel":
        return SimilarityModel(
            self.variant,
            self.seed,
            self.feature_config,
            {k: v.copy() for k, v in self.params.items()},
        )

    def __eq__(self, other):
        if not isinstance(other, SimilarityModel):
            return NotImplemented
        return (
            self.variant == other.variant
            and self.seed == other.seed
            and self.feature_config == other.feature_config
            and self.params.keys() == other.params.keys()
            and all(np.array_equal(self.params[k], other.params[k]) for k in self.params)
        )


def init_model(variant: str, seed: int, feature_config: FeatureConfig | None = None) -> SimilarityModel:
    """Glorot-uniform weights, zero biases, drawn in declaration order."""
    variant = resolve_variant(variant)
    feature_config = feature_config or FeatureConfig()
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_specs(variant):
        if len(shape) == 2:
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    return SimilarityModel(variant, seed, feature_config, params)


def zero_gradients(model: SimilarityModel) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape) for name, shape in param_specs(model.variant)}


# ---------------------------------------------------------------------------
# Forward / backward primitives
# ---------------------------------------------------------------------------

def _leaky(z):
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def _leaky_grad(z):
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


def _check_width(x: np.ndarray, expected: int, what: str):
    if x.shape[-1] != expected:
        raise ShapeMismatch(f"{what}: expected width {expected}, got {x.shape[-1]}")


def mlp_forward(params: dict, prefix: str, x: np.ndarray):
    """Two leaky-rectifier layers + linear output. Returns (y, cache)."""
    _check_width(x, params[f"{prefix}.W0"].shape[1], prefix)
    z0 = x @ params[f"{prefix}.W0"].T + params[f"{prefix}.b0"]
    a0 = _leaky(z0)
    z1 = a0 @ params[f"{prefix}.W1"].T + params[f"{prefix}.b1"]
    a1 = _leaky(z1)
    y = a1 @ params[f"{prefix}.W2"].T + params[f"{prefix}.b2"]
    return y, (x, z0, a0, z1, a1)


def mlp_backward(params: dict, prefix: str, grad_y: np.ndarray, cache, grads: dict,
                 want_dx: bool = False):
    x, z0, a0, z1, a1 = cache
    grads[f"{prefix}.W2"] += grad_y.T @ a1
    grads[f"{prefix}.b2"] += grad_y.sum(axis=0)
    dz1 = (grad_y @ params[f"{prefix}.W2"]) * _leaky_grad(z1)
    grads[f"{prefix}.W1"] += dz1.T @ a0
    grads[f"{prefix}.b1"] += dz1.sum(axis=0)
    dz0 = (dz1 @ params[f"{prefix}.W1"]) * _leaky_grad(z0)
    grads[f"{prefix}.W0"] += dz0.T @ x
    grads[f"{prefix}.b0"] += dz0.sum(axis=0)
    if want_dx:
        return dz0 @ params[f"{prefix}.W0"]
    return None


def bbm_forward(spec: MlpSpec, params: dict, x, prefix: str = "",
                logistic_out: bool = False) -> np.ndarray:
    """Standalone block evaluation used by tests and the metric head."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check_width(x, spec.in_dim, prefix or "block")
    y, _ = mlp_forward(params, prefix, x)
    if logistic_out:
        y = _sigmoid(y)
    return y


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def encoder_forward(model: SimilarityModel, role: str, x: np.ndarray):
    """45 -> 22 encoding. Returns (y, caches) with caches keyed by block."""
    _check_width(x, TOTAL_DIM, f"{role} encoder input")
    if model.spec.split_encoder:
        y_pa, c_pa = mlp_forward(model.params, f"{role}.pa", x[:, PA_SLICE])
        y_sp, c_sp = mlp_forward(model.params, f"{role}.sp", x[:, SP_SLICE])
        y_va, c_va = mlp_forward(model.params, f"{role}.va", x[:, VA_SLICE])
        y = np.concatenate([y_pa, y_sp, y_va, x[:, IP_SLICE], x[:, SS_SLICE]], axis=1)
        return y, {"pa": c_pa, "sp": c_sp, "va": c_va}
    y, cache = mlp_forward(model.params, role, x)
    return y, {"mono": cache}


def encoder_backward(model: SimilarityModel, role: str, grad_y: np.ndarray, caches, grads):
    if model.spec.split_encoder:
        mlp_backward(model.params, f"{role}.pa", grad_y[:, 0:6], caches["pa"], grads)
        mlp_backward(model.params, f"{role}.sp", grad_y[:, 6:12], caches["sp"], grads)
        mlp_backward(model.params, f"{role}.va", grad_y[:, 12:18], caches["va"], grads)
        # ip/ss pass-through slots carry no weights.
    else:
        mlp_backward(model.params, role, grad_y, caches["mono"], grads)


def sfpm_forward(model: SimilarityModel, x: np.ndarray) -> np.ndarray:
    """Public encoder evaluation for a batch or single 45-dim vector."""
    single = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y, _ = encoder_forward(model, "feat", x)
    return y[0] if single else y


def _pair_forward(model: SimilarityModel, a: np.ndarray, b: np.ndarray):
    """Dissimilarity of row-aligned feature batches, with caches."""
    fa, ca = encoder_forward(model, "feat", a)
    fb, cb = encoder_forward(model, "feat", b)
    blocks = [fa, fb]
    cd = None
    if model.spec.difference_branch:
        diff = np.abs(a - b)
        fd, cd = encoder_forward(model, "diff", diff)
        blocks.append(fd)
    metric_in = np.concatenate(blocks, axis=1)
    z, cm = mlp_forward(model.params, "metric", metric_in)
    d = _sigmoid(z[:, 0])
    return d, (ca, cb, cd, cm, d)


def _pair_backward(model: SimilarityModel, grad_d: np.ndarray, cache, grads):
    ca, cb, cd, cm, d = cache
    dz = (grad_d * d * (1.0 - d))[:, None]
    grad_in = mlp_backward(model.params, "metric", dz, cm, grads, want_dx=True)
    k = ENCODER_OUT
    encoder_backward(model, "feat", grad_in[:, 0:k], ca, grads)
    encoder_backward(model, "feat", grad_in[:, k:2 * k], cb, grads)
    if model.spec.difference_branch:
        encoder_backward(model, "diff", grad_in[:, 2 * k:3 * k], cd, grads)


def dissimilarity(model: SimilarityModel, a, b) -> float:
    """Learned dissimilarity in (0, 1) between two 45-dim feature vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1 and b.ndim == 1:
        d, _ = _pair_forward(model, a[None, :], b[None, :])
        return float(d[0])
    d, _ = _pair_forward(model, np.atleast_2d(a), np.atleast_2d(b))
    return d


def dissimilarity_batch(model: SimilarityModel, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d, _ = _pair_forward(model, np.atleast_2d(a), np.atleast_2d(b))
    return d


def triplet_forward(model: SimilarityModel, anchors, positives, negatives):
    """Distance pair (d_plus, d_minus) for aligned triplet batches."""
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    positives = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    d_plus, _ = _pair_forward(model, anchors, positives)
    d_minus, _ = _pair_forward(model, anchors, negatives)
    return d_plus, d_minus


# ---------------------------------------------------------------------------
# Loss + gradients
# ---------------------------------------------------------------------------

D_CLAMP = 1e-6


def loss_terms(d_plus: np.ndarray, d_minus: np.ndarray) -> tuple[float, float, float]:
    """(phi, psi, total): log-likelihood push + hinge ranking, batch means."""
    dp = np.clip(d_plus, D_CLAMP, 1.0 - D_CLAMP)
    dm = np.clip(d_minus, D_CLAMP, 1.0 - D_CLAMP)
    phi = float(-np.mean(np.log(1.0 - dp) + np.log(dm)))
    psi = float(np.mean(np.maximum(0.0, d_plus - d_minus)))
    total = phi + psi
    if not np.isfinite(total):
        raise NonFiniteLoss(f"loss is not finite (phi={phi}, psi={psi})")
    return phi, psi, total


def loss_and_gradients(model: SimilarityModel, anchors, positives, negatives):
    """Forward + hand-derived backward pass over a triplet batch.

    Returns (phi, psi, total, grads) where grads maps every weight tensor
    name to the gradient of the total loss (mean over the batch).  Encoder
    weights shared across branches accumulate contributions from each use.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    positives = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    n = anchors.shape[0]

    d_plus, cache_plus = _pair_forward(model, anchors, positives)
    d_minus, cache_minus = _pair_forward(model, anchors, negatives)
    phi, psi, total = loss_terms(d_plus, d_minus)

    # d(total)/dd+, d(total)/dd-: the log terms vanish where the clamp is
    # active; the hinge contributes where d+ > d-.
    hinge = (d_plus > d_minus).astype(np.float64)
    in_range_p = (d_plus > D_CLAMP) & (d_plus < 1.0 - D_CLAMP)
    in_range_m = (d_minus > D_CLAMP) & (d_minus < 1.0 - D_CLAMP)
    grad_dp = (np.where(in_range_p, 1.0 / (1.0 - d_plus), 0.0) + hinge) / n
    grad_dm = (np.where(in_range_m, -1.0 / d_minus, 0.0) - hinge) / n

    grads = zero_gradients(model)
    _pair_backward(model, grad_dp, cache_plus, grads)
    _pair_backward(model, grad_dm, cache_minus, grads)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteLoss(f"gradient for {name} is not finite")
    return phi, psi, total, grads


def gradients(model: SimilarityModel, triplets) -> dict[str, np.ndarray]:
    """Gradient of the total loss over a list of TripletSample-like objects."""
    anchors = np.stack([t.anchor for t in triplets])
    positives = np.stack([t.positive for t in triplets])
    negatives = np.stack([t.negative for t in triplets])
    _, _, _, grads = loss_and_gradients(model, anchors, positives, negatives)
    return grads


# ---------------------------------------------------------------------------
# Introspection + (de)serialization
# ---------------------------------------------------------------------------

def layer_audit(model: SimilarityModel) -> dict[str, tuple[int, int, int, int]]:
    """Instantiated (in, h1, h2, out) sizes of every MLP block, from weights."""
    blocks: dict[str, tuple[int, int, int, int]] = {}
    prefixes = sorted({name.rsplit(".", 1)[0] for name in model.params})
    for prefix in prefixes:
        w0 = model.params[f"{prefix}.W0"]
        w1 = model.params[f"{prefix}.W1"]
        w2 = model.params[f"{prefix}.W2"]
        blocks[prefix] = (w0.shape[1], w0.shape[0], w1.shape[0], w2.shape[0])
    return blocks


def save_model(model: SimilarityModel) -> bytes:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "variant": model.variant,
        "seed": model.seed,
        "feature_config": asdict(model.feature_config),
        "fingerprint": model.fingerprint,
        "params": {name: model.params[name].tolist() for name, _ in param_specs(model.variant)},
    }
    return json.dumps(doc, indent=1).encode("utf-8")


def load_model(document: bytes | str) -> SimilarityModel:
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"model file is not UTF-8: {exc}") from exc
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ParseError("not a semplace model file")
    if doc.get("version") != MODEL_VERSION:
        raise ParseError(f"unsupported model version {doc.get('version')!r}")
    try:
        variant = resolve_variant(doc["variant"])
        cfg = FeatureConfig(**doc["feature_config"])
        raw_params = doc["params"]
        seed = int(doc["seed"])
    except KeyError as exc:
        raise ParseError(f"model file missing field: {exc}") from exc
    except TypeError as exc:
        raise ParseError(f"bad feature config: {exc}") from exc
    params: dict[str, np.ndarray] = {}
    for name, shape in param_specs(variant):
        if name not in raw_params:
            raise VariantMismatch(f"missing weight tensor {name!r} for variant {variant!r}")
        arr = np.asarray(raw_params[name], dtype=np.float64)
        if arr.shape != shape:
            raise VariantMismatch(
                f"tensor {name!r} has shape {arr.shape}, expected {shape} for {variant!r}"
            )
        params[name] = arr
    return SimilarityModel(variant, seed, cfg, params)


def require_fingerprint(model: SimilarityModel, cfg: FeatureConfig):
    """Raise FingerprintMismatch if the model was trained under another config."""
    if model.fingerprint != cfg.fingerprint():
        raise FingerprintMismatch(
            f"model feature-config fingerprint {model.fingerprint} does not match "
            f"the active configuration {cfg.fingerprint()}"
        )
