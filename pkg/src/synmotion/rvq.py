"""Per-body-part residual VQ-VAE.

Convolutional encoder with x4 temporal downsampling, Q residual quantization
layers (EMA-updated codebooks with dead-code reset), straight-through
training, and a convolutional decoder that restores the original frame count.
The final code is the sum of per-layer codes; training mixes both corpora so
the latent space covers speech-style and template-style motion alike.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import mathcore as mc
from . import kernels
from .datagen import PART_RANGES
from .seeding import substream


@dataclass
class RVQConfig:
    Q: int = 4
    K: int = 64
    d: int = 32
    beta: float = 0.25
    dropout: float = 0.2
    downsample: int = 4
    ema_decay: float = 0.99
    reset_threshold: float = 1.0
    width: int = 32  # channels at full/half rate
    width2: int = 64  # channels at the quarter (latent) rate
    epochs: int = 30
    batch: int = 32
    lr: float = 2e-3

    def validate(self):
        if self.Q < 1:
            raise ValueError("need at least one quantization layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        return self


@dataclass
class Codebook:
    entries: np.ndarray  # (K, d)
    ema_cluster_size: np.ndarray  # (K,)
    ema_embed_sum: np.ndarray  # (K, d)
    decay: float

    @classmethod
    def init(cls, rng, K, d, decay):
        entries = rng.normal(0.0, 0.1, size=(K, d))
        return cls(entries=entries, ema_cluster_size=np.ones(K),
                   ema_embed_sum=entries.copy(), decay=decay)


@dataclass
class LatentSeq:
    data: np.ndarray  # (n, d) or (B, n, d)
    quantized: bool
    pad_frames: int = 0


@dataclass
class QuantizeResult:
    indices: np.ndarray  # (Q, n) int64
    per_layer_codes: list  # Q arrays (n, d)
    residuals: list  # Q arrays (n, d); residuals[q] = z - sum(codes[:q+1])
    code_sum: LatentSeq
    layers_used: int


@dataclass
class RVQStack:
    part: str
    encoder: mc.Network
    decoder: mc.Network
    codebooks: list
    config: RVQConfig
    scaler_mu: np.ndarray = None
    scaler_sigma: np.ndarray = None
    frozen: bool = False


def _res(w, k=3):
    p = (k - 1) // 2
    return {"kind": "residual", "body": [
        {"kind": "conv1d", "cin": w, "cout": w, "k": k, "stride": 1, "pad": p},
        {"kind": "act", "fn": "silu"},
        {"kind": "conv1d", "cin": w, "cout": w, "k": k, "stride": 1, "pad": p}]}


def _encoder_spec(cin, cfg):
    w, w2 = cfg.width, cfg.width2
    return [
        {"kind": "conv1d", "cin": cin, "cout": w, "k": 5, "stride": 2, "pad": 2},
        {"kind": "act", "fn": "silu"},
        _res(w),
        {"kind": "conv1d", "cin": w, "cout": w2, "k": 3, "stride": 2, "pad": 1},
        {"kind": "act", "fn": "silu"},
        _res(w2),
        _res(w2),
        {"kind": "conv1d", "cin": w2, "cout": cfg.d, "k": 3, "stride": 1, "pad": 1},
    ]


def _decoder_spec(cout, cfg):
    w, w2 = cfg.width, cfg.width2
    return [
        {"kind": "conv1d", "cin": cfg.d, "cout": w2, "k": 3, "stride": 1, "pad": 1},
        {"kind": "act", "fn": "silu"},
        _res(w2),
        _res(w2),
        {"kind": "upsample", "factor": 2},
        {"kind": "conv1d", "cin": w2, "cout": w, "k": 5, "stride": 1, "pad": 2},
        {"kind": "act", "fn": "silu"},
        _res(w),
        {"kind": "upsample", "factor": 2},
        {"kind": "conv1d", "cin": w, "cout": w, "k": 5, "stride": 1, "pad": 2},
        {"kind": "act", "fn": "silu"},
        {"kind": "conv1d", "cin": w, "cout": cout, "k": 3, "stride": 1, "pad": 1},
    ]


def init_stack(part, cfg, rng):
    cfg.validate()
    lo, hi = PART_RANGES[part]
    ch = hi - lo
    encoder = mc.Network.from_spec(_encoder_spec(ch, cfg), rng)
    decoder = mc.Network.from_spec(_decoder_spec(ch, cfg), rng)
    books = [Codebook.init(rng, cfg.K, cfg.d, cfg.ema_decay) for _ in range(cfg.Q)]
    return RVQStack(part=part, encoder=encoder, decoder=decoder, codebooks=books,
                    config=cfg, scaler_mu=np.zeros(ch), scaler_sigma=np.ones(ch))


def _pad_frames(motion_part, downsample):
    n = motion_part.shape[-2]
    pad = (-n) % downsample
    if pad:
        last = motion_part[..., -1:, :]
        motion_part = np.concatenate(
            [motion_part] + [last] * pad, axis=-2)
    return motion_part, pad


def encode(stack, motion_part):
    """Motion part (N, C) or (B, N, C) -> raw latents at N/downsample."""
    ch = stack.scaler_mu.shape[0]
    if motion_part.shape[-1] != ch:
        raise mc.ShapeError(
            f"{stack.part} stack expects {ch} channels, got {motion_part.shape[-1]}")
    x, pad = _pad_frames(np.asarray(motion_part, dtype=np.float64), stack.config.downsample)
    x = (x - stack.scaler_mu) / stack.scaler_sigma
    z = stack.encoder.apply(x)
    return LatentSeq(data=z, quantized=False, pad_frames=pad)


def quantize_residual(z, codebooks, rng=None, dropout=0.0):
    """Residual quantization; per layer the nearest entry to the running
    residual (ties to the lowest index). With an rng, a draw under `dropout`
    picks a uniform effective depth in [1, Q]; without an rng all layers are
    summed and no randomness is consulted."""
    if isinstance(z, LatentSeq):
        if z.quantized:
            raise ValueError("input latents are already quantized")
        pad = z.pad_frames
        data = z.data
    else:
        pad = 0
        data = np.asarray(z, dtype=np.float64)
    Q = len(codebooks)
    if Q == 0:
        raise ValueError("no codebooks")
    for cb in codebooks:
        if cb.entries.shape[0] == 0:
            raise ValueError("empty codebook")
    layers_used = Q
    if rng is not None and dropout > 0.0 and rng.uniform() < dropout:
        layers_used = int(rng.integers(1, Q + 1))

    lead = data.shape[:-1]
    flat = np.ascontiguousarray(data.reshape(-1, data.shape[-1]))
    indices = np.empty((Q, flat.shape[0]), dtype=np.int64)
    codes, residuals = [], []
    resid = flat
    for q, cb in enumerate(codebooks):
        idx = np.asarray(kernels.nearest_code(np.ascontiguousarray(resid), cb.entries))
        code = cb.entries[idx]
        resid = resid - code
        indices[q] = idx
        codes.append(code.reshape(lead + (-1,)))
        residuals.append(resid.reshape(lead + (-1,)))
    total = np.zeros_like(data)
    for q in range(layers_used):
        total = total + codes[q]
    return QuantizeResult(
        indices=indices.reshape((Q,) + lead),
        per_layer_codes=codes,
        residuals=residuals,
        code_sum=LatentSeq(data=total, quantized=True, pad_frames=pad),
        layers_used=layers_used,
    )


def decode(stack, code_sum, debug_raw=False):
    """Summed codes -> motion part; the encode-time pad is stripped."""
    if isinstance(code_sum, LatentSeq):
        if not code_sum.quantized and not debug_raw:
            raise ValueError("decode expects quantized latents (debug_raw to override)")
        data, pad = code_sum.data, code_sum.pad_frames
    else:
        data, pad = np.asarray(code_sum, dtype=np.float64), 0
    if data.shape[-1] != stack.config.d:
        raise mc.ShapeError(
            f"latent dim {data.shape[-1]} != configured {stack.config.d}")
    y = stack.decoder.apply(data)
    y = y * stack.scaler_sigma + stack.scaler_mu
    if pad:
        y = y[..., :-pad, :]
    return y


def rvq_loss(motion, recon, residuals, beta):
    """Mean L1 reconstruction plus beta * sum of squared per-layer residuals
    (the commitment term; its quantized operand is under stop-gradient)."""
    l1 = float(np.abs(motion - recon).mean())
    commit = 0.0
    for r in residuals:
        commit += float((r * r).sum())
    return l1 + beta * commit


def ema_update(codebook, assigned_idx, vectors):
    """EMA step from the latest assignments (index per vector)."""
    K, d = codebook.entries.shape
    counts = np.bincount(assigned_idx, minlength=K).astype(np.float64)
    sums = np.zeros((K, d))
    np.add.at(sums, assigned_idx, vectors)
    dec = codebook.decay
    codebook.ema_cluster_size = dec * codebook.ema_cluster_size + (1.0 - dec) * counts
    codebook.ema_embed_sum = dec * codebook.ema_embed_sum + (1.0 - dec) * sums
    denom = np.maximum(codebook.ema_cluster_size, 1e-7)
    codebook.entries = codebook.ema_embed_sum / denom[:, None]
    return codebook


def codebook_reset(codebook, batch_latents, rng, threshold):
    """Replace entries whose EMA usage fell below threshold with random
    latents from the current batch."""
    if batch_latents.shape[0] == 0:
        raise ValueError("empty batch")
    dead = np.flatnonzero(codebook.ema_cluster_size < threshold)
    if dead.size:
        picks = rng.integers(0, batch_latents.shape[0], size=dead.size)
        codebook.entries[dead] = batch_latents[picks]
        codebook.ema_cluster_size[dead] = 1.0
        codebook.ema_embed_sum[dead] = codebook.entries[dead]
    return codebook


def _straight_through_step(stack, batch, rng, opt, params):
    """One training step; returns (loss, fraction of entries used)."""
    cfg = stack.config
    x = (batch - stack.scaler_mu) / stack.scaler_sigma
    enc_acts = stack.encoder.forward(x)
    z = enc_acts[-1]
    q = quantize_residual(z, stack.codebooks, rng=rng, dropout=cfg.dropout)
    dec_acts = stack.decoder.forward(q.code_sum.data)
    recon = dec_acts[-1]

    active_resid = q.residuals[:q.layers_used]
    # commitment weight normalized per latent entry so the two gradient
    # scales match; rvq_loss itself stays unnormalized per its contract
    beta_eff = cfg.beta / z.size
    loss = rvq_loss(x, recon, active_resid, beta_eff)
    if not math.isfinite(loss):
        raise mc.NumericError("non-finite training loss")

    # reconstruction gradient, straight-through onto z
    dl_drecon = np.sign(recon - x) / recon.size
    dec_grads, dz = stack.decoder.backward(dec_acts, dl_drecon)
    # commitment gradient: d/dz sum_q ||r_q||^2 = 2 * sum_q r_q (sg on codes)
    for r in active_resid:
        dz = dz + 2.0 * beta_eff * r
    enc_grads, _ = stack.encoder.backward(enc_acts, dz)

    grads = {f"encoder.{k}": v for k, v in enc_grads.items()}
    grads.update({f"decoder.{k}": v for k, v in dec_grads.items()})
    mc.adam_step(params, grads, opt)

    # EMA + reset on the active layers only; layer q clusters its own inputs
    used = 0
    for qi in range(q.layers_used):
        idx = q.indices[qi].reshape(-1)
        layer_in = z if qi == 0 else q.residuals[qi - 1]
        flat_inputs = layer_in.reshape(-1, cfg.d)
        ema_update(stack.codebooks[qi], idx, flat_inputs)
        codebook_reset(stack.codebooks[qi], flat_inputs, rng, cfg.reset_threshold)
        used += len(np.unique(idx))
    return loss, used / (q.layers_used * cfg.K)


def train_stack(part, motions, cfg, seed, log=None):
    """Train one part's stack on (M, N, C) stacked part channels."""
    rng = substream(seed, f"rvq/{part}/init")
    stack = init_stack(part, cfg, rng)
    stack.scaler_mu = motions.mean(axis=(0, 1))
    sigma = motions.std(axis=(0, 1))
    stack.scaler_sigma = np.maximum(sigma, 1e-2)

    params = ([(f"encoder.{n}", p) for n, p in stack.encoder.named_parameters()]
              + [(f"decoder.{n}", p) for n, p in stack.decoder.named_parameters()])
    opt = mc.OptimState(params, lr=cfg.lr)
    order_rng = substream(seed, f"rvq/{part}/order")
    step_rng = substream(seed, f"rvq/{part}/steps")
    M = motions.shape[0]
    history = []
    for epoch in range(cfg.epochs):
        # cosine decay to 10% keeps the L1 dither floor low near convergence
        opt.lr = cfg.lr * (0.1 + 0.45 * (1.0 + math.cos(math.pi * epoch / cfg.epochs)))
        order = order_rng.permutation(M)
        losses = []
        for s in range(0, M - cfg.batch + 1, cfg.batch):
            batch = motions[order[s:s + cfg.batch]]
            loss, _ = _straight_through_step(stack, batch, step_rng, opt, params)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if log is not None:
            log(part, epoch, history[-1])
    stack.frozen = True
    return stack, history


def train_rvq(corpus, cfg, seed, log=None):
    """Train the three per-part stacks on all motion data (both corpora)."""
    stacks = {}
    histories = {}
    train = corpus.train_clips()
    for part in PART_RANGES:
        motions = np.stack([rec.motion.part(part) for rec in train])
        stacks[part], histories[part] = train_stack(part, motions, cfg, seed, log=log)
    return stacks, histories


def reconstruct(stack, motion_part):
    """Encode + full-depth quantize + decode (inference path)."""
    z = encode(stack, motion_part)
    q = quantize_residual(z, stack.codebooks)
    return decode(stack, q.code_sum)


def relative_mse(stack, motions):
    """Pooled reconstruction MSE / variance over a clip set (per part)."""
    recon = reconstruct(stack, motions)
    err = float(((motions - recon) ** 2).sum())
    mu = motions.mean(axis=(0, 1), keepdims=True)
    var = float(((motions - mu) ** 2).sum())
    return err / max(var, 1e-12)


def codebook_usage(stack, motions):
    """Per-layer fraction of codebook entries used over a clip set."""
    z = encode(stack, motions)
    q = quantize_residual(z, stack.codebooks)
    return [len(np.unique(q.indices[qi])) / stack.config.K
            for qi in range(stack.config.Q)]


def usage_histogram(stack, motions):
    """(layer, entry) -> assignment count table."""
    z = encode(stack, motions)
    q = quantize_residual(z, stack.codebooks)
    rows = []
    for qi in range(stack.config.Q):
        counts = np.bincount(q.indices[qi].reshape(-1), minlength=stack.config.K)
        rows.append(counts)
    return np.stack(rows)
