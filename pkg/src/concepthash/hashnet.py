"""Trainable hashing head and its composite training objective.

The head is a two-layer feed-forward network (linear, ReLU, linear, tanh)
mapping precomputed feature vectors to relaxed codes in (-1, 1)^k.  The
objective combines three terms over a mini-batch of relaxed codes Z and the
matching block Q of pairwise target similarities:

* a quadratic term, mean squared gap between the cosine matrix of Z and Q;
* a contrastive term: for each row, pairs at least as similar as the
  threshold are positives, the rest negatives, and each positive pays
  -log(exp(c/temp) / (exp(c/temp) + sum over negatives)), averaged per row;
* a quantization term, mean squared distance of each row to its sign vector
  (sign of 0 counts as -1).

Gradients are fully analytic, including the cosine-normalization Jacobian;
the sign vector is treated as a constant within a step.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .conceptsim import SimilaritySource, similarity_block
from .datastore import FeatureMatrix, FormatError, _read_exact, _read_header, _read_payload

_MAGIC_WEIGHTS = b"UHSW"
_WEIGHTS_VERSION = 1

# np.tanh rounds to exactly +/-1.0 for |x| >~ 19; keep outputs strictly inside.
_OPEN_ONE = np.nextafter(1.0, 0.0)


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for the hashing head and its optimizer.

    Defaults are the tuned single-label preset; see PRESETS for the
    multi-label alternatives.
    """

    code_bits: int = 64
    contrast_weight: float = 0.2   # weight of the contrastive term
    quant_weight: float = 0.001    # weight of the quantization term
    contrast_temp: float = 0.2     # softmax temperature inside the contrastive term
    sim_threshold: float = 0.8     # similarity at or above which a pair is positive
    lr: float = 0.006
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch: int = 128
    epochs: int = 30
    seed: int = 0
    hidden: int = 512

    def __post_init__(self):
        if self.code_bits < 1:
            raise ValueError("code_bits must be >= 1")
        if not self.contrast_temp > 0:
            raise ValueError("contrast_temp must be positive")
        if not 0.0 <= self.sim_threshold <= 1.0:
            raise ValueError("sim_threshold must lie in [0, 1]")
        if self.contrast_weight < 0 or self.quant_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.batch < 2:
            raise ValueError("batch must be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")


# Per-dataset loss-weight presets: (contrast_weight, sim_threshold,
# contrast_temp, quant_weight).
PRESETS = {
    "cifar10": dict(contrast_weight=0.2, sim_threshold=0.8, contrast_temp=0.2, quant_weight=0.001),
    "nuswide": dict(contrast_weight=0.1, sim_threshold=0.5, contrast_temp=0.2, quant_weight=0.001),
    "mirflickr": dict(contrast_weight=0.3, sim_threshold=0.6, contrast_temp=0.5, quant_weight=0.001),
}


def preset_config(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}, have {sorted(PRESETS)}")
    merged = {**PRESETS[name], **overrides}
    return TrainConfig(**merged)


@dataclass(frozen=True)
class LossBreakdown:
    l2_term: float
    contrastive_term: float
    quant_term: float
    total: float


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class HashHeadParams:
    """Weights of the two-layer head, float64."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            object.__setattr__(
                self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            )
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ValueError("weight matrices must be 2-d")
        if self.b1.shape != (self.w1.shape[1],) or self.b2.shape != (self.w2.shape[1],):
            raise ValueError("bias shapes do not match weights")
        if self.w1.shape[1] != self.w2.shape[0]:
            raise ValueError("layer widths do not match")
        for name in ("w1", "b1", "w2", "b2"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} has non-finite entries")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def code_bits(self) -> int:
        return self.w2.shape[1]


@dataclass
class HeadGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class SgdState:
    """Momentum buffers, one per parameter tensor."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros_like(cls, params: HashHeadParams) -> "SgdState":
        return cls(
            np.zeros_like(params.w1),
            np.zeros_like(params.b1),
            np.zeros_like(params.w2),
            np.zeros_like(params.b2),
        )


def init_params(input_dim: int, hidden_dim: int, code_bits: int, seed: int) -> HashHeadParams:
    """Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    if min(input_dim, hidden_dim, code_bits) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    bound1 = np.sqrt(6.0 / (input_dim + hidden_dim))
    bound2 = np.sqrt(6.0 / (hidden_dim + code_bits))
    return HashHeadParams(
        w1=rng.uniform(-bound1, bound1, size=(input_dim, hidden_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.uniform(-bound2, bound2, size=(hidden_dim, code_bits)),
        b2=np.zeros(code_bits),
    )


def forward(params: HashHeadParams, x: np.ndarray) -> np.ndarray:
    """Relaxed codes for a feature batch; every entry strictly in (-1, 1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(
            f"expected batch of shape (t, {params.input_dim}), got {x.shape}"
        )
    hidden = np.maximum(x @ params.w1 + params.b1, 0.0)
    z = np.tanh(hidden @ params.w2 + params.b2)
    return np.clip(z, -_OPEN_ONE, _OPEN_ONE)


# ---------------------------------------------------------------------------
# loss and gradients


def _sign_pm1(z: np.ndarray) -> np.ndarray:
    # sign with sign(0) = -1
    return np.where(z > 0.0, 1.0, -1.0)


def _cosine_setup(z: np.ndarray, sim: np.ndarray):
    z = np.asarray(z, dtype=np.float64)
    sim = np.asarray(sim, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("relaxed codes must be a 2-d batch")
    t = z.shape[0]
    if sim.shape != (t, t):
        raise ValueError(f"similarity block must be {t}x{t}, got {sim.shape}")
    if not np.isfinite(z).all():
        raise ValueError("relaxed codes must be finite")
    if np.abs(sim - sim.T).max(initial=0.0) > 1e-6:
        raise ValueError("similarity block must be symmetric within 1e-6")
    if np.abs(np.diagonal(sim) - 1.0).max(initial=0.0) > 1e-6:
        raise ValueError("similarity block must have a unit diagonal")
    norms = np.linalg.norm(z, axis=1)
    if (norms == 0.0).any():
        raise ValueError("zero-norm code row, cosine undefined")
    unit = z / norms[:, None]
    cosines = unit @ unit.T
    return z, sim, t, norms, unit, cosines


def _positive_negative_masks(sim: np.ndarray, threshold: float):
    off_diag = ~np.eye(sim.shape[0], dtype=bool)
    positives = (sim >= threshold) & off_diag
    negatives = (sim < threshold) & off_diag
    return positives, negatives


def loss(z: np.ndarray, sim: np.ndarray, cfg: TrainConfig) -> LossBreakdown:
    """Composite objective over one batch of relaxed codes."""
    z, sim, t, _, _, cosines = _cosine_setup(z, sim)

    l2_term = float(np.mean((cosines - sim) ** 2))

    positives, negatives = _positive_negative_masks(sim, cfg.sim_threshold)
    logits = cosines / cfg.contrast_temp
    shifted = logits - _off_diagonal_max(logits)[:, None]
    exp_shifted = np.exp(shifted)
    np.fill_diagonal(exp_shifted, 0.0)
    neg_sums = np.where(negatives, exp_shifted, 0.0).sum(axis=1)

    contrastive_term = 0.0
    pos_counts = positives.sum(axis=1)
    for i in np.flatnonzero(pos_counts):
        if neg_sums[i] == 0.0:
            continue  # denominator equals numerator, every pair term is 0
        pair = exp_shifted[i, positives[i]]
        terms = np.log(pair + neg_sums[i]) - shifted[i, positives[i]]
        contrastive_term += float(terms.sum()) / pos_counts[i]
    contrastive_term /= t

    quant_term = float(np.sum((z - _sign_pm1(z)) ** 2)) / t

    total = l2_term + cfg.contrast_weight * contrastive_term + cfg.quant_weight * quant_term
    if not np.isfinite(total):
        raise FloatingPointError("loss is not finite")
    return LossBreakdown(l2_term, contrastive_term, quant_term, total)


def _off_diagonal_max(matrix: np.ndarray) -> np.ndarray:
    masked = matrix.copy()
    np.fill_diagonal(masked, -np.inf)
    return masked.max(axis=1)


def loss_grad(z: np.ndarray, sim: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """Analytic gradient of loss(...).total with respect to the batch z."""
    z, sim, t, norms, unit, cosines = _cosine_setup(z, sim)

    # d(total)/d(cosines), treating every matrix entry as independent.
    grad_cos = (2.0 / (t * t)) * (cosines - sim)

    positives, negatives = _positive_negative_masks(sim, cfg.sim_threshold)
    logits = cosines / cfg.contrast_temp
    shifted = logits - _off_diagonal_max(logits)[:, None]
    exp_shifted = np.exp(shifted)
    np.fill_diagonal(exp_shifted, 0.0)
    neg_sums = np.where(negatives, exp_shifted, 0.0).sum(axis=1)

    pos_counts = positives.sum(axis=1)
    scale = cfg.contrast_weight / (t * cfg.contrast_temp)
    for i in np.flatnonzero(pos_counts):
        if neg_sums[i] == 0.0:
            continue
        w = scale / pos_counts[i]
        denom = exp_shifted[i, positives[i]] + neg_sums[i]
        # positives: each pair term differentiates to -neg_sum/denom
        grad_cos[i, positives[i]] += w * (-neg_sums[i] / denom)
        # negatives: accumulate exp(l)/denom over every positive pair
        grad_cos[i, negatives[i]] += (
            w * exp_shifted[i, negatives[i]] * float(np.sum(1.0 / denom))
        )

    # Back through the cosine normalization: for rows p != j,
    # d cos(p,j)/dz_p = (u_j - cos(p,j) u_p) / |z_p|; the diagonal is constant.
    mass = grad_cos + grad_cos.T
    np.fill_diagonal(mass, 0.0)
    row_mix = (mass * cosines).sum(axis=1)
    grad = (mass @ unit - row_mix[:, None] * unit) / norms[:, None]

    grad += cfg.quant_weight * (2.0 / t) * (z - _sign_pm1(z))
    return grad


def backward(params: HashHeadParams, x: np.ndarray, grad_z: np.ndarray) -> HeadGrads:
    """Backpropagate a gradient on the relaxed codes to parameter gradients."""
    x = np.asarray(x, dtype=np.float64)
    grad_z = np.asarray(grad_z, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"expected batch of shape (t, {params.input_dim}), got {x.shape}")
    if grad_z.shape != (x.shape[0], params.code_bits):
        raise ValueError("code gradient shape does not match the batch")
    pre_hidden = x @ params.w1 + params.b1
    hidden = np.maximum(pre_hidden, 0.0)
    z = np.tanh(hidden @ params.w2 + params.b2)
    grad_pre_out = grad_z * (1.0 - z * z)
    grad_hidden = grad_pre_out @ params.w2.T
    grad_pre_hidden = grad_hidden * (pre_hidden > 0.0)
    return HeadGrads(
        w1=x.T @ grad_pre_hidden,
        b1=grad_pre_hidden.sum(axis=0),
        w2=hidden.T @ grad_pre_out,
        b2=grad_pre_out.sum(axis=0),
    )


def sgd_step(
    params: HashHeadParams, grads: HeadGrads, state: SgdState, cfg: TrainConfig
) -> HashHeadParams:
    """One SGD-with-momentum update; mutates state, returns new parameters."""
    updated = {}
    for name in ("w1", "b1", "w2", "b2"):
        w = getattr(params, name)
        v = cfg.momentum * getattr(state, name) + getattr(grads, name) + cfg.weight_decay * w
        setattr(state, name, v)
        updated[name] = w - cfg.lr * v
    return HashHeadParams(**updated)


# ---------------------------------------------------------------------------
# training loop


def train(
    features: FeatureMatrix, source: SimilaritySource, cfg: TrainConfig
) -> tuple[HashHeadParams, list[float]]:
    """Mini-batch training against block-wise target similarities.

    Each epoch shuffles the sample order with a seeded generator and walks
    floor(n/batch) batches; leftovers are dropped for that epoch.  Returns the
    final parameters and the mean total loss per epoch.
    """
    n = features.n
    if source.n != n:
        raise ValueError("features and similarity source cover different item counts")
    if cfg.batch > n:
        raise ValueError(f"batch size {cfg.batch} exceeds the {n} training items")
    params = init_params(features.d, cfg.hidden, cfg.code_bits, cfg.seed)
    state = SgdState.zeros_like(params)
    # Separate stream from weight init so reordering one never shifts the other.
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    x_all = features.features.astype(np.float64)

    history: list[float] = []
    batches = n // cfg.batch
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        epoch_total = 0.0
        for b in range(batches):
            idx = order[b * cfg.batch : (b + 1) * cfg.batch]
            xb = x_all[idx]
            sim = similarity_block(source, idx, idx)
            zb = forward(params, xb)
            try:
                breakdown = loss(zb, sim, cfg)
            except FloatingPointError as exc:
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {b}"
                ) from exc
            grads = backward(params, xb, loss_grad(zb, sim, cfg))
            params = sgd_step(params, grads, state, cfg)
            epoch_total += breakdown.total
        history.append(epoch_total / batches)
    return params, history


# ---------------------------------------------------------------------------
# weight serialization


def save_params(path, params: HashHeadParams) -> None:
    """Write weights: magic UHSW, version, dims, float32 blocks in layer order."""
    with open(path, "wb") as f:
        f.write(_MAGIC_WEIGHTS)
        f.write(struct.pack("<I", _WEIGHTS_VERSION))
        f.write(
            struct.pack("<QQQ", params.input_dim, params.hidden_dim, params.code_bits)
        )
        for block in (params.w1, params.b1, params.w2, params.b2):
            f.write(np.ascontiguousarray(block, dtype="<f4").tobytes())


def load_params(path) -> HashHeadParams:
    with open(path, "rb") as f:
        _read_header(f, _MAGIC_WEIGHTS)
        d, hidden, k = struct.unpack("<QQQ", _read_exact(f, 24, "layer dimensions"))
        if min(d, hidden, k) < 1:
            raise FormatError("layer dimensions must be >= 1")
        counts = [d * hidden, hidden, hidden * k, k]
        raw = _read_payload(f, path, 4 * sum(counts), "weight payload")
    flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    blocks = np.split(flat, np.cumsum(counts)[:-1])
    try:
        return HashHeadParams(
            w1=blocks[0].reshape(d, hidden),
            b1=blocks[1],
            w2=blocks[2].reshape(hidden, k),
            b2=blocks[3],
        )
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
