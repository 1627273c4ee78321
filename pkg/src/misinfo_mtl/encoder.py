"""Shared text encoder: a small Transformer with exact reverse-mode gradients.

All math runs in float64. The forward pass caches every intermediate needed
for the hand-written backward pass, and ``finite_difference_check`` provides
an independent numerical oracle for the analytic gradients. Parameters are a
flat name->array dict so the optimizer, checkpointing and gradient checking
can all treat them uniformly.

Parameters are immutable during a forward/backward pair; eval-mode forwards
over shared parameters are safe to run concurrently.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .tokenization import Batch

LN_EPS = 1e-5
GRADCHECK_FLOOR = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the shared encoder stand-in (desk-scale by default)."""

    vocab_size: int
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    max_seq_len: int = 128
    dropout_rate: float = 0.1
    seed: int = 0
    pooling: str = "cls"

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim ({self.embed_dim}) must be divisible by num_heads ({self.num_heads})"
            )
        for name in ("vocab_size", "embed_dim", "num_layers", "num_heads", "ffn_dim", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.pooling not in ("cls", "mean"):
            raise ValueError(f"pooling must be 'cls' or 'mean', got {self.pooling!r}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads


@dataclass
class EncoderParams:
    """Encoder weights: a flat name->float64-array dict plus the config they fit."""

    config: EncoderConfig
    tensors: dict[str, np.ndarray]


def param_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter names and shapes, in initialization order."""
    d, f = config.embed_dim, config.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {
        "token_emb": (config.vocab_size, d),
        "pos_emb": (config.max_seq_len, d),
        "emb_ln.gain": (d,),
        "emb_ln.bias": (d,),
    }
    for i in range(config.num_layers):
        p = f"layers.{i}."
        shapes[p + "attn.wq"] = (d, d)
        shapes[p + "attn.bq"] = (d,)
        # No key bias: it shifts all scores for a query equally, so softmax
        # cancels it exactly and it could never receive a gradient.
        shapes[p + "attn.wk"] = (d, d)
        shapes[p + "attn.wv"] = (d, d)
        shapes[p + "attn.bv"] = (d,)
        shapes[p + "attn.wo"] = (d, d)
        shapes[p + "attn.bo"] = (d,)
        shapes[p + "attn_ln.gain"] = (d,)
        shapes[p + "attn_ln.bias"] = (d,)
        shapes[p + "ffn.w1"] = (d, f)
        shapes[p + "ffn.b1"] = (f,)
        shapes[p + "ffn.w2"] = (f, d)
        shapes[p + "ffn.b2"] = (d,)
        shapes[p + "ffn_ln.gain"] = (d,)
        shapes[p + "ffn_ln.bias"] = (d,)
    return shapes


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Scaled-uniform init with bound sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = shape[0], shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_encoder(config: EncoderConfig) -> EncoderParams:
    """Deterministically initialize all encoder parameters from config.seed.

    Weight matrices (embeddings included) are Glorot-uniform; layer-norm gains
    are 1, every bias is 0.
    """
    rng = np.random.default_rng(config.seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gain"):
            tensors[name] = np.ones(shape)
        elif name.endswith((".bias", ".bq", ".bv", ".bo", ".b1", ".b2")):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = glorot_uniform(rng, shape)
    return EncoderParams(config=config, tensors=tensors)


# --- primitive forward/backward pieces -------------------------------------


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def _ln_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return gain * xhat + bias, xhat, inv


def _ln_backward(dout, gain, xhat, inv):
    dgain = (dout * xhat).sum(axis=tuple(range(dout.ndim - 1)))
    dbias = dout.sum(axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def _softmax_last(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    # Inverted dropout: mask already carries the 1/(1-rate) rescaling.
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _split_heads(x, num_heads):
    b, l, d = x.shape
    return x.reshape(b, l, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


# --- forward / backward -----------------------------------------------------


@dataclass
class _LayerCache:
    x_in: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray
    ctx: np.ndarray
    attn_drop: np.ndarray | None
    xhat1: np.ndarray
    inv1: np.ndarray
    x_mid: np.ndarray
    h_pre: np.ndarray
    h_act: np.ndarray
    ffn_drop: np.ndarray | None
    xhat2: np.ndarray
    inv2: np.ndarray


@dataclass
class EncoderCache:
    """Activations from one forward pass, consumed by ``backward``."""

    ids: np.ndarray
    maskf: np.ndarray
    emb_drop: np.ndarray | None
    xhat0: np.ndarray
    inv0: np.ndarray
    layers: list[_LayerCache] = field(default_factory=list)
    x_final: np.ndarray | None = None


def encode_batch(
    params: EncoderParams,
    batch: Batch,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    return_cache: bool = False,
):
    """Run the encoder stack and pool one vector per input.

    PAD positions get a -inf pre-softmax attention score, so their content can
    never reach the pooled output. Dropout fires only in train mode (and then
    requires ``rng``). With ``return_cache=True`` the result is
    ``(pooled, cache)`` for a subsequent ``backward`` call.
    """
    cfg = params.config
    t = params.tensors
    ids, mask = batch.ids, batch.mask
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(f"token id out of range [0, {cfg.vocab_size})")
    length = ids.shape[1]
    if length > cfg.max_seq_len:
        raise ValueError(f"sequence length {length} exceeds max_seq_len {cfg.max_seq_len}")
    if not np.all(mask[:, 0] == 1):
        raise ValueError("position 0 (CLS) must be unmasked in every row")
    drop = cfg.dropout_rate if train_mode else 0.0
    if drop > 0.0 and rng is None:
        raise ValueError("train-mode forward with dropout requires an rng")

    maskf = mask.astype(np.float64)
    x = t["token_emb"][ids] + t["pos_emb"][:length]
    x, xhat0, inv0 = _ln_forward(x, t["emb_ln.gain"], t["emb_ln.bias"])
    emb_drop = None
    if drop > 0.0:
        emb_drop = _dropout_mask(rng, x.shape, drop)
        x = x * emb_drop
    cache = EncoderCache(ids=ids, maskf=maskf, emb_drop=emb_drop, xhat0=xhat0, inv0=inv0)

    key_keep = mask[:, None, None, :] > 0  # (B,1,1,L) over the key axis
    scale = 1.0 / math.sqrt(cfg.head_dim)
    for i in range(cfg.num_layers):
        p = f"layers.{i}."
        x_in = x
        q = _split_heads(x_in @ t[p + "attn.wq"] + t[p + "attn.bq"], cfg.num_heads)
        k = _split_heads(x_in @ t[p + "attn.wk"], cfg.num_heads)
        v = _split_heads(x_in @ t[p + "attn.wv"] + t[p + "attn.bv"], cfg.num_heads)
        scores = np.where(key_keep, (q @ k.transpose(0, 1, 3, 2)) * scale, -np.inf)
        probs = _softmax_last(scores)
        ctx = _merge_heads(probs @ v)
        attn_out = ctx @ t[p + "attn.wo"] + t[p + "attn.bo"]
        attn_drop = None
        if drop > 0.0:
            attn_drop = _dropout_mask(rng, attn_out.shape, drop)
            attn_out = attn_out * attn_drop
        x_mid, xhat1, inv1 = _ln_forward(x_in + attn_out, t[p + "attn_ln.gain"], t[p + "attn_ln.bias"])
        h_pre = x_mid @ t[p + "ffn.w1"] + t[p + "ffn.b1"]
        h_act = gelu(h_pre)
        ffn_out = h_act @ t[p + "ffn.w2"] + t[p + "ffn.b2"]
        ffn_drop = None
        if drop > 0.0:
            ffn_drop = _dropout_mask(rng, ffn_out.shape, drop)
            ffn_out = ffn_out * ffn_drop
        x, xhat2, inv2 = _ln_forward(x_mid + ffn_out, t[p + "ffn_ln.gain"], t[p + "ffn_ln.bias"])
        cache.layers.append(
            _LayerCache(
                x_in=x_in, q=q, k=k, v=v, probs=probs, ctx=ctx, attn_drop=attn_drop,
                xhat1=xhat1, inv1=inv1, x_mid=x_mid, h_pre=h_pre, h_act=h_act,
                ffn_drop=ffn_drop, xhat2=xhat2, inv2=inv2,
            )
        )
    cache.x_final = x

    if cfg.pooling == "cls":
        pooled = x[:, 0, :].copy()
    else:
        denom = maskf.sum(axis=1, keepdims=True)
        pooled = (x * maskf[:, :, None]).sum(axis=1) / denom
    if return_cache:
        return pooled, cache
    return pooled


def backward(params: EncoderParams, cache: EncoderCache, upstream_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of the pooled output w.r.t. every parameter.

    ``upstream_grad`` has shape (batch, embed_dim) and is contracted with the
    pooled output's Jacobian; requires the cache produced by the matching
    forward pass.
    """
    if cache is None:
        raise ValueError("backward requires the cache from a forward pass")
    cfg = params.config
    t = params.tensors
    grads = {name: np.zeros_like(arr) for name, arr in params.tensors.items()}
    b, length = cache.ids.shape

    dx = np.zeros_like(cache.x_final)
    if cfg.pooling == "cls":
        dx[:, 0, :] = upstream_grad
    else:
        denom = cache.maskf.sum(axis=1)
        dx += (upstream_grad / denom[:, None])[:, None, :] * cache.maskf[:, :, None]

    scale = 1.0 / math.sqrt(cfg.head_dim)
    for i in reversed(range(cfg.num_layers)):
        p = f"layers.{i}."
        lc = cache.layers[i]

        dz2, dg, dbias = _ln_backward(dx, t[p + "ffn_ln.gain"], lc.xhat2, lc.inv2)
        grads[p + "ffn_ln.gain"] += dg
        grads[p + "ffn_ln.bias"] += dbias
        dffn_out = dz2 if lc.ffn_drop is None else dz2 * lc.ffn_drop
        h2d = lc.h_act.reshape(-1, cfg.ffn_dim)
        grads[p + "ffn.w2"] += h2d.T @ dffn_out.reshape(-1, cfg.embed_dim)
        grads[p + "ffn.b2"] += dffn_out.sum(axis=(0, 1))
        dh_act = dffn_out @ t[p + "ffn.w2"].T
        dh_pre = dh_act * gelu_grad(lc.h_pre)
        x_mid2d = lc.x_mid.reshape(-1, cfg.embed_dim)
        grads[p + "ffn.w1"] += x_mid2d.T @ dh_pre.reshape(-1, cfg.ffn_dim)
        grads[p + "ffn.b1"] += dh_pre.sum(axis=(0, 1))
        dx_mid = dz2 + dh_pre @ t[p + "ffn.w1"].T

        dz1, dg, dbias = _ln_backward(dx_mid, t[p + "attn_ln.gain"], lc.xhat1, lc.inv1)
        grads[p + "attn_ln.gain"] += dg
        grads[p + "attn_ln.bias"] += dbias
        dattn_out = dz1 if lc.attn_drop is None else dz1 * lc.attn_drop
        ctx2d = lc.ctx.reshape(-1, cfg.embed_dim)
        grads[p + "attn.wo"] += ctx2d.T @ dattn_out.reshape(-1, cfg.embed_dim)
        grads[p + "attn.bo"] += dattn_out.sum(axis=(0, 1))
        dctx = _split_heads(dattn_out @ t[p + "attn.wo"].T, cfg.num_heads)

        dprobs = dctx @ lc.v.transpose(0, 1, 3, 2)
        dv = lc.probs.transpose(0, 1, 3, 2) @ dctx
        # Softmax backward; masked keys have prob 0 and thus zero score grad.
        dscores = lc.probs * (dprobs - (dprobs * lc.probs).sum(axis=-1, keepdims=True))
        dq = (dscores @ lc.k) * scale
        dk = (dscores.transpose(0, 1, 3, 2) @ lc.q) * scale

        x_in2d = lc.x_in.reshape(-1, cfg.embed_dim)
        dx_in = dz1
        for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
            dmerged = _merge_heads(dproj)
            grads[p + f"attn.w{name}"] += x_in2d.T @ dmerged.reshape(-1, cfg.embed_dim)
            if name != "k":  # the key projection has no bias
                grads[p + f"attn.b{name}"] += dmerged.sum(axis=(0, 1))
            dx_in = dx_in + dmerged @ t[p + f"attn.w{name}"].T
        dx = dx_in

    if cache.emb_drop is not None:
        dx = dx * cache.emb_drop
    de, dg, dbias = _ln_backward(dx, t["emb_ln.gain"], cache.xhat0, cache.inv0)
    grads["emb_ln.gain"] += dg
    grads["emb_ln.bias"] += dbias
    np.add.at(grads["token_emb"], cache.ids, de)
    grads["pos_emb"][:length] += de.sum(axis=0)
    return grads


# --- numerical gradient oracle ----------------------------------------------


def finite_difference_check(
    loss_fn,
    params: dict[str, np.ndarray],
    epsilon: float = 1e-4,
    sample_count: int = 200,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn`` maps a name->array dict to ``(loss, grads)``; the analytic side
    is taken from one call at the base point, the numeric side from two loss
    evaluations per sampled coordinate. The relative error for a coordinate is
    ``|a - n| / max(|a|, |n|, 1e-12)``. ``loss_fn`` must be deterministic
    (dropout off).
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    loss, grads = loss_fn(params)
    if not np.isfinite(loss):
        raise ValueError("non-finite loss at the base point")

    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(sample_count, total), replace=False)

    work = {n: params[n].copy() for n in names}
    worst = 0.0
    for flat in sorted(int(i) for i in picks):
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, off = names[which], flat - int(offsets[which])
        base = work[name].flat[off]
        work[name].flat[off] = base + epsilon
        loss_plus = loss_fn(work)[0]
        work[name].flat[off] = base - epsilon
        loss_minus = loss_fn(work)[0]
        work[name].flat[off] = base
        if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
            raise ValueError(f"non-finite loss while perturbing {name}[{off}]")
        numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
        analytic = grads[name].flat[off]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), GRADCHECK_FLOOR)
        worst = max(worst, err)
    return worst
