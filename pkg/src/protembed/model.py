"""Dense numeric core: pooling, normalization, the trainable adapter, the
two contrastive losses with analytic gradients, AdamW, and the warmup-cosine
schedule. Everything runs in float64.

The in-batch ranking loss scores each anchor against a shared candidate pool
(all batch positives plus any explicit hard negatives) with scaled cosine
similarities; the per-row loss is the softmax cross-entropy with the row's
own positive as the target:

    loss_i = logsumexp_j(s * a_i . c_j) - s * a_i . p_i,   value = mean_i

The pairwise ranking loss on continuous scores penalizes cosine-order
inversions among rows whose target scores are strictly ordered:

    loss = log(1 + sum_{score_i > score_j} exp(s * (c_j - c_i)))

Gradients flow through the row L2 normalization to the adapter parameters;
finite-difference agreement is part of the test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .seqio import EmbeddingSet
from .rng import make_rng

DEFAULT_SCALE = 20.0

PADP_MAGIC = b"PADP1\x00"
PADP_VERSION = 1


class NumericError(Exception):
    """A training-time numerical failure (NaN/Inf loss or similarity)."""


def mean_pool(token_vectors: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean of the rows where mask is true."""
    token_vectors = np.asarray(token_vectors, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[0] != token_vectors.shape[0]:
        raise ValueError("mask length must match token count")
    if not mask.any():
        raise ValueError("mask selects no tokens")
    return token_vectors[mask].mean(axis=0)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """dot(u, v) / sqrt(dot(u, u) dot(v, v)); exactly 1.0 for identical arrays."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    denom = math.sqrt(float(u @ u) * float(v @ v))
    if denom == 0.0:
        raise ValueError("cosine of a zero vector")
    return float(u @ v) / denom


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Unit-normalize a vector or each row of a matrix."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return v / norm
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if (norms == 0.0).any():
        raise ValueError("cannot normalize a zero row")
    return v / norms


@dataclass
class AdapterParams:
    weight: np.ndarray  # d_in x d_out
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[1] < 2:
            raise ValueError("weight must be d_in x d_out with d_out >= 2")
        if not np.isfinite(self.weight).all():
            raise ValueError("weight has non-finite entries")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.weight.shape[1],):
                raise ValueError("bias shape must be (d_out,)")
            if not np.isfinite(self.bias).all():
                raise ValueError("bias has non-finite entries")

    def copy(self) -> "AdapterParams":
        return AdapterParams(
            self.weight.copy(), None if self.bias is None else self.bias.copy()
        )


def init_adapter(
    d_in: int,
    d_out: int | None = None,
    init_scale: float = 1e-3,
    use_bias: bool = False,
    seed: int = 0,
) -> AdapterParams:
    """Identity map plus Gaussian noise, so step 0 preserves the input space."""
    d_out = d_in if d_out is None else d_out
    rng = make_rng(seed, "adapter-init")
    weight = np.eye(d_in, d_out) + init_scale * rng.standard_normal((d_in, d_out))
    bias = np.zeros(d_out) if use_bias else None
    return AdapterParams(weight=weight, bias=bias)


def adapter_forward(params: AdapterParams, H: np.ndarray) -> np.ndarray:
    """Rows of normalize(H @ W + bias)."""
    Z, _, _ = _adapter_forward_full(params, H)
    return Z


def _adapter_forward_full(params: AdapterParams, H: np.ndarray):
    H = np.asarray(H, dtype=np.float64)
    Y = H @ params.weight
    if params.bias is not None:
        Y = Y + params.bias
    norms = np.linalg.norm(Y, axis=1, keepdims=True)
    if (norms == 0.0).any():
        raise NumericError("adapter output has a zero row; cannot normalize")
    return Y / norms, Y, norms


def _normalize_backward(Z: np.ndarray, norms: np.ndarray, dZ: np.ndarray) -> np.ndarray:
    # z = y / |y|  =>  dy = (dz - z (z . dz)) / |y|
    inner = (Z * dZ).sum(axis=1, keepdims=True)
    return (dZ - Z * inner) / norms


@dataclass
class LossOutput:
    value: float
    grad_weight: np.ndarray
    grad_bias: np.ndarray | None
    per_row: np.ndarray


@dataclass
class EmbeddingGrads:
    """Loss value and gradients with respect to the unit-norm inputs."""

    value: float
    per_row: np.ndarray
    grad_anchors: np.ndarray
    grad_positives: np.ndarray
    grad_hard_negatives: np.ndarray | None = None


def mnrl_loss(
    Z_a: np.ndarray,
    Z_p: np.ndarray,
    Z_hn: np.ndarray | None = None,
    scale: float = DEFAULT_SCALE,
) -> EmbeddingGrads:
    """In-batch ranking loss over a shared candidate pool of unit rows.

    Candidates are all N positives plus all M hard negatives; anchor i's
    target is candidate i.
    """
    Z_a = np.asarray(Z_a, dtype=np.float64)
    Z_p = np.asarray(Z_p, dtype=np.float64)
    n = Z_a.shape[0]
    if n < 1 or Z_a.shape != Z_p.shape:
        raise ValueError("anchors and positives must be matching non-empty N x d")
    if Z_hn is not None:
        Z_hn = np.asarray(Z_hn, dtype=np.float64)
        cands = np.vstack([Z_p, Z_hn])
    else:
        cands = Z_p
    logits = scale * (Z_a @ cands.T)
    if not np.isfinite(logits).all():
        raise NumericError("non-finite similarity in loss computation")
    targets = logits[np.arange(n), np.arange(n)]
    # per-row loss via log1p of the non-target mass relative to the target,
    # so well-separated rows keep full relative precision instead of
    # collapsing to log(1) = 0
    rel = logits - targets[:, None]
    rel[np.arange(n), np.arange(n)] = -np.inf
    shift = np.maximum(rel.max(axis=1), 0.0)
    mass = np.exp(rel - shift[:, None]).sum(axis=1)
    per_row = np.where(shift == 0.0, np.log1p(mass), shift + np.log(np.exp(-shift) + mass))
    value = float(per_row.mean())

    lse = targets + per_row  # log-sum-exp over the full candidate pool
    soft = np.exp(logits - lse[:, None])
    soft[np.arange(n), np.arange(n)] -= 1.0
    G = soft / n  # d value / d logits
    grad_a = scale * (G @ cands)
    grad_c = scale * (G.T @ Z_a)
    if Z_hn is not None:
        return EmbeddingGrads(value, per_row, grad_a, grad_c[:n], grad_c[n:])
    return EmbeddingGrads(value, per_row, grad_a, grad_c, None)


def cosent_loss(
    Z_1: np.ndarray,
    Z_2: np.ndarray,
    scores: np.ndarray,
    scale: float = DEFAULT_SCALE,
) -> EmbeddingGrads:
    """Pairwise ranking loss preserving the order of continuous scores.

    With c_p the cosine of row pair p, the loss is
    log(1 + sum over score_i > score_j of exp(scale * (c_j - c_i))); an
    empty ordered set (under two rows, or all scores equal) gives loss 0.
    """
    Z_1 = np.asarray(Z_1, dtype=np.float64)
    Z_2 = np.asarray(Z_2, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    p = Z_1.shape[0]
    if Z_1.shape != Z_2.shape or scores.shape != (p,):
        raise ValueError("rows and scores must align")
    cos = (Z_1 * Z_2).sum(axis=1)
    if not np.isfinite(cos).all():
        raise NumericError("non-finite similarity in loss computation")
    ordered = scores[:, None] > scores[None, :]  # (i, j): score_i > score_j
    if p < 2 or not ordered.any():
        zero = np.zeros_like(Z_1)
        return EmbeddingGrads(0.0, np.zeros(p), zero, np.zeros_like(Z_2), None)

    diffs = scale * (cos[None, :] - cos[:, None])  # exp argument for (i, j)
    terms = diffs[ordered]
    m = float(terms.max())
    if m <= 0.0:
        # all inversions exponentially suppressed; log1p keeps the tiny
        # loss at full relative precision
        value = float(np.log1p(np.exp(terms).sum()))
    else:
        value = m + math.log(math.exp(-m) + np.exp(terms - m).sum())

    w = np.zeros((p, p))
    w[ordered] = np.exp(terms - value)  # softmax weight of each ordered pair
    dcos = w.sum(axis=0) - w.sum(axis=1)  # +scale at j, -scale at i, per pair
    dcos *= scale
    grad_1 = dcos[:, None] * Z_2
    grad_2 = dcos[:, None] * Z_1
    return EmbeddingGrads(value, np.zeros(p), grad_1, grad_2, None)


def mnrl_adapter_loss(
    params: AdapterParams,
    H_a: np.ndarray,
    H_p: np.ndarray,
    H_hn: np.ndarray | None = None,
    scale: float = DEFAULT_SCALE,
) -> LossOutput:
    """In-batch ranking loss and analytic parameter gradients."""
    Z_a, _, n_a = _adapter_forward_full(params, H_a)
    Z_p, _, n_p = _adapter_forward_full(params, H_p)
    Z_hn = n_hn = None
    if H_hn is not None and len(H_hn) > 0:
        Z_hn, _, n_hn = _adapter_forward_full(params, H_hn)
    res = mnrl_loss(Z_a, Z_p, Z_hn, scale=scale)
    streams = [(H_a, Z_a, n_a, res.grad_anchors), (H_p, Z_p, n_p, res.grad_positives)]
    if Z_hn is not None:
        streams.append((H_hn, Z_hn, n_hn, res.grad_hard_negatives))
    gw, gb = _accumulate_param_grads(params, streams)
    return LossOutput(value=res.value, grad_weight=gw, grad_bias=gb, per_row=res.per_row)


def cosent_adapter_loss(
    params: AdapterParams,
    H_1: np.ndarray,
    H_2: np.ndarray,
    scores: np.ndarray,
    scale: float = DEFAULT_SCALE,
) -> LossOutput:
    """Score-ranking loss and analytic parameter gradients."""
    Z_1, _, n_1 = _adapter_forward_full(params, H_1)
    Z_2, _, n_2 = _adapter_forward_full(params, H_2)
    res = cosent_loss(Z_1, Z_2, scores, scale=scale)
    gw, gb = _accumulate_param_grads(
        params, [(H_1, Z_1, n_1, res.grad_anchors), (H_2, Z_2, n_2, res.grad_positives)]
    )
    return LossOutput(value=res.value, grad_weight=gw, grad_bias=gb, per_row=res.per_row)


def _accumulate_param_grads(params: AdapterParams, streams) -> tuple[np.ndarray, np.ndarray | None]:
    gw = np.zeros_like(params.weight)
    gb = np.zeros_like(params.bias) if params.bias is not None else None
    for H, Z, norms, dZ in streams:
        dY = _normalize_backward(Z, norms, dZ)
        gw += np.asarray(H, dtype=np.float64).T @ dY
        if gb is not None:
            gb += dY.sum(axis=0)
    return gw, gb


# -- optimizer and schedule ----------------------------------------------------


@dataclass
class OptimizerState:
    lr: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m_weight: np.ndarray | None = None
    v_weight: np.ndarray | None = None
    m_bias: np.ndarray | None = None
    v_bias: np.ndarray | None = None


def adamw_step(
    state: OptimizerState,
    params: AdapterParams,
    grad_weight: np.ndarray,
    grad_bias: np.ndarray | None,
    lr: float | None = None,
) -> tuple[OptimizerState, AdapterParams]:
    """One decoupled-weight-decay step; decay is applied to the parameters
    before the bias-corrected moment update. Updates in place and returns
    the same objects."""
    if lr is None:
        lr = state.lr
    if lr < 0:
        raise ValueError("lr must be non-negative")
    if state.m_weight is None:
        state.m_weight = np.zeros_like(params.weight)
        state.v_weight = np.zeros_like(params.weight)
        if params.bias is not None:
            state.m_bias = np.zeros_like(params.bias)
            state.v_bias = np.zeros_like(params.bias)
    state.step += 1
    t = state.step
    b1, b2 = state.betas
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t

    def update(p, g, m, v):
        p *= 1.0 - lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)

    update(params.weight, np.asarray(grad_weight, dtype=np.float64), state.m_weight, state.v_weight)
    if params.bias is not None:
        if grad_bias is None:
            grad_bias = np.zeros_like(params.bias)
        update(params.bias, np.asarray(grad_bias, dtype=np.float64), state.m_bias, state.v_bias)
    return state, params


@dataclass(frozen=True)
class ScheduleConfig:
    warmup_steps: int
    total_steps: int
    base_lr: float
    min_lr: float = 0.0

    def __post_init__(self):
        if not (0 <= self.warmup_steps <= self.total_steps):
            raise ValueError("need 0 <= warmup_steps <= total_steps")
        if not (0 <= self.min_lr <= self.base_lr):
            raise ValueError("need 0 <= min_lr <= base_lr")


def cosine_lr(step: int, cfg: ScheduleConfig) -> float:
    """Linear ramp to base_lr over warmup, then cosine decay to min_lr."""
    if not (0 <= step <= cfg.total_steps):
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if step <= cfg.warmup_steps:
        if step == cfg.warmup_steps:
            return cfg.base_lr
        return cfg.base_lr * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / span
    return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * progress))


# -- adapter checkpoint ----------------------------------------------------------


def write_adapter(params: AdapterParams, dest) -> None:
    """PADP1 layout: magic | u32 version | u32 d_in | u32 d_out | u8 has_bias
    | f32 LE row-major weight | f32 LE bias (if present)."""
    close = False
    if isinstance(dest, str):
        dest = open(dest, "wb")
        close = True
    try:
        d_in, d_out = params.weight.shape
        dest.write(PADP_MAGIC)
        dest.write(np.uint32(PADP_VERSION).tobytes())
        dest.write(np.uint32(d_in).tobytes())
        dest.write(np.uint32(d_out).tobytes())
        dest.write(bytes([1 if params.bias is not None else 0]))
        dest.write(np.ascontiguousarray(params.weight, dtype="<f4").tobytes())
        if params.bias is not None:
            dest.write(np.ascontiguousarray(params.bias, dtype="<f4").tobytes())
    finally:
        if close:
            dest.close()


def read_adapter(source) -> AdapterParams:
    close = False
    if isinstance(source, str):
        source = open(source, "rb")
        close = True
    try:
        blob = source.read()
    finally:
        if close:
            source.close()
    if blob[:6] != PADP_MAGIC:
        raise ValueError("not a PADP1 adapter file")
    version = int(np.frombuffer(blob[6:10], "<u4")[0])
    if version != PADP_VERSION:
        raise ValueError(f"unsupported adapter version {version}")
    d_in = int(np.frombuffer(blob[10:14], "<u4")[0])
    d_out = int(np.frombuffer(blob[14:18], "<u4")[0])
    has_bias = blob[18]
    off = 19
    need = d_in * d_out * 4 + (d_out * 4 if has_bias else 0)
    if len(blob) - off != need:
        raise ValueError("adapter payload size mismatch")
    weight = np.frombuffer(blob[off : off + d_in * d_out * 4], "<f4").reshape(d_in, d_out)
    off += d_in * d_out * 4
    bias = np.frombuffer(blob[off:], "<f4").copy() if has_bias else None
    return AdapterParams(weight=weight.astype(np.float64), bias=None if bias is None else bias.astype(np.float64))


# -- training loop ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainDataset:
    """Resolved training rows: embedding row indices into one EmbeddingSet."""

    name: str
    kind: str  # "mnrl_grouped" | "mnrl_pairs" | "cosent"
    anchor_idx: np.ndarray | None = None  # mnrl_pairs / cosent (seq1)
    positive_idx: np.ndarray | None = None  # mnrl_pairs / cosent (seq2)
    hard_negative_idx: np.ndarray | None = None  # mnrl_pairs, -1 where absent
    member_idx: np.ndarray | None = None  # mnrl_grouped stream positions
    scores: np.ndarray | None = None  # cosent


@dataclass(frozen=True)
class TrainerConfig:
    effective_batch_size: int = 1024
    micro_batch_size: int = 64
    lr: float = 3e-4
    min_lr: float = 3e-5
    warmup_steps: int = 500
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    scale: float = DEFAULT_SCALE
    init_scale: float = 1e-3
    use_bias: bool = False
    seed: int = 42

    @property
    def grad_accum(self) -> int:
        return max(1, self.effective_batch_size // self.micro_batch_size)


def _gather(emb: np.ndarray, idx) -> np.ndarray:
    return emb[np.asarray(idx, dtype=np.int64)]


def train_adapter(
    embeddings: EmbeddingSet,
    datasets: list[TrainDataset],
    plan,
    cfg: TrainerConfig,
    params: AdapterParams | None = None,
) -> tuple[AdapterParams, list[dict]]:
    """Run the plan with gradient accumulation to the effective batch size.

    Micro-batch losses within one effective batch are averaged; the learning
    rate follows the warmup-cosine schedule over optimizer steps. Returns
    final parameters and the JSONL-ready loss log.
    """
    emb = embeddings.matrix.astype(np.float64)
    if params is None:
        params = init_adapter(
            emb.shape[1], init_scale=cfg.init_scale, use_bias=cfg.use_bias, seed=cfg.seed
        )
    state = OptimizerState(
        lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay
    )
    accum = cfg.grad_accum
    n_opt_steps = max(1, math.ceil(len(plan.steps) / accum))
    schedule = ScheduleConfig(
        warmup_steps=min(cfg.warmup_steps, n_opt_steps),
        total_steps=n_opt_steps,
        base_lr=cfg.lr,
        min_lr=min(cfg.min_lr, cfg.lr),
    )

    log: list[dict] = []
    gw = np.zeros_like(params.weight)
    gb = np.zeros_like(params.bias) if params.bias is not None else None
    in_group = 0
    opt_step = 0

    for t, step in enumerate(plan.steps):
        ds = datasets[step.dataset_index]
        if ds.kind == "mnrl_grouped":
            a_idx = ds.member_idx[[a for a, _ in step.rows]]
            p_idx = ds.member_idx[[p for _, p in step.rows]]
            out = mnrl_adapter_loss(
                params, _gather(emb, a_idx), _gather(emb, p_idx), None, scale=cfg.scale
            )
        elif ds.kind == "mnrl_pairs":
            rows = np.asarray(step.rows, dtype=np.int64)
            hn_rows = (
                ds.hard_negative_idx[rows] if ds.hard_negative_idx is not None else None
            )
            H_hn = None
            if hn_rows is not None:
                present = hn_rows[hn_rows >= 0]
                if present.size > 0:
                    H_hn = _gather(emb, present)
            out = mnrl_adapter_loss(
                params,
                _gather(emb, ds.anchor_idx[rows]),
                _gather(emb, ds.positive_idx[rows]),
                H_hn,
                scale=cfg.scale,
            )
        elif ds.kind == "cosent":
            rows = np.asarray(step.rows, dtype=np.int64)
            out = cosent_adapter_loss(
                params,
                _gather(emb, ds.anchor_idx[rows]),
                _gather(emb, ds.positive_idx[rows]),
                ds.scores[rows],
                scale=cfg.scale,
            )
        else:
            raise ValueError(f"unknown dataset kind {ds.kind!r}")

        if not math.isfinite(out.value):
            raise NumericError(
                f"non-finite loss {out.value!r} at step {t} (dataset {ds.name!r})"
            )

        gw += out.grad_weight
        if gb is not None and out.grad_bias is not None:
            gb += out.grad_bias
        in_group += 1
        lr_now = cosine_lr(min(opt_step + 1, schedule.total_steps), schedule)
        log.append(
            {"step": t, "dataset": ds.name, "loss": out.value, "lr": lr_now}
        )
        if in_group == accum or t == len(plan.steps) - 1:
            gw /= in_group
            if gb is not None:
                gb /= in_group
            opt_step += 1
            adamw_step(state, params, gw, gb, lr=lr_now)
            gw = np.zeros_like(params.weight)
            gb = np.zeros_like(params.bias) if params.bias is not None else None
            in_group = 0
    return params, log


def write_loss_log(log: list[dict], dest) -> None:
    close = False
    if isinstance(dest, str):
        dest = open(dest, "w")
        close = True
    try:
        for row in log:
            dest.write(
                json.dumps(
                    {"step": row["step"], "dataset": row["dataset"], "loss": row["loss"], "lr": row["lr"]}
                )
                + "\n"
            )
    finally:
        if close:
            dest.close()
