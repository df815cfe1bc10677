"""Flow-matching action tokenizer: encoder, sign quantizer, velocity decoder.

An H x S action chunk is encoded by a transformer that appends L
zero-initialized query tokens to the projected action rows; the query
outputs form a continuous latent e in R^{L x D}, quantized to bits
sign(e) in {-1,+1}^{L x D} (an implicit 2^D-entry codebook, no lookup
table). The decoder is a joint-sequence transformer over [action rows;
code tokens] that predicts the straight-path velocity a - z at
interpolation time t, with t injected through per-block scale/shift/gate
modulation of the action stream (gates start at zero, so the decoder is
input-transparent at initialization). Reconstruction integrates the
predicted velocity from Gaussian noise at t=0 to t=1 with Euler steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .data import ActionChunk, standardize, destandardize


class ModelError(ValueError):
    """Raised on invalid model configuration or inputs."""


@dataclass
class TokenizerConfig:
    horizon: int = 32          # H: timesteps per chunk
    dims: int = 7              # S: action dimensions
    code_len: int = 20         # L: tokens per chunk
    code_bits: int = 12        # D: bits per token; vocabulary is 2^D
    width: int = 128           # transformer hidden size
    enc_blocks: int = 4
    dec_blocks: int = 4
    heads: int = 4
    ode_steps: int = 10
    entropy_weight: float = 0.1
    commit_weight: float = 0.25
    entropy_temp: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.code_len > self.horizon:
            raise ModelError(f"code_len {self.code_len} must not exceed horizon {self.horizon}")
        if self.code_bits < 1:
            raise ModelError("code_bits must be >= 1")
        if self.width % self.heads != 0:
            raise ModelError(f"width {self.width} must be divisible by heads {self.heads}")
        if self.ode_steps < 1:
            raise ModelError("ode_steps must be >= 1")

    @property
    def vocab_size(self):
        return 2 ** self.code_bits

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


# ---------------------------------------------------------------------------
# latent codes


def bits_to_token_ids(bits):
    """Map {-1,+1} bit rows to integer ids; bit 0 is the most significant."""
    bits = np.asarray(bits)
    d = bits.shape[-1]
    weights = (1 << np.arange(d - 1, -1, -1)).astype(np.int64)
    levels = ((bits + 1.0) / 2.0).astype(np.int64)
    return levels @ weights


def token_ids_to_bits(token_ids, code_bits):
    """Inverse of bits_to_token_ids; validates the id range."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if np.any(ids < 0) or np.any(ids >= (1 << code_bits)):
        bad = ids[(ids < 0) | (ids >= (1 << code_bits))][0]
        raise ModelError(f"token id {bad} outside [0, {1 << code_bits})")
    shifts = np.arange(code_bits - 1, -1, -1)
    levels = (ids[..., None] >> shifts) & 1
    return (levels * 2.0 - 1.0).astype(np.float32)


@dataclass
class LatentCode:
    bits: np.ndarray  # (L, D) in {-1, +1}

    @property
    def token_ids(self):
        return bits_to_token_ids(self.bits)

    @classmethod
    def from_token_ids(cls, token_ids, code_bits):
        return cls(bits=token_ids_to_bits(token_ids, code_bits))


def quantize(e):
    """Snap a continuous latent to its sign code; sign(0) = +1."""
    values = e.data if isinstance(e, T.Tensor) else np.asarray(e)
    bits = np.where(values >= 0.0, 1.0, -1.0).astype(np.float32)
    return LatentCode(bits=bits)


# ---------------------------------------------------------------------------
# parameters


def _normal(rng, shape, std=0.02):
    return rng.normal(0.0, std, size=shape).astype(np.float32)


def init_params(cfg, seed=None):
    """All learnable tensors, in checkpoint manifest order.

    Query embeddings start at exact zeros; decoder modulation layers and the
    decoder output head start at zero so every gated residual branch (and the
    initial velocity) is zero.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    h, s, l, d, w = cfg.horizon, cfg.dims, cfg.code_len, cfg.code_bits, cfg.width
    hidden = 4 * w
    p = {}

    def param(name, value):
        p[name] = T.Tensor(value, requires_grad=True)

    def zeros(shape):
        return np.zeros(shape, dtype=np.float32)

    param("enc.in_proj.w", _normal(rng, (s, w)))
    param("enc.in_proj.b", zeros(w))
    param("enc.queries", zeros((l, w)))
    param("enc.pos", _normal(rng, (h + l, w)))
    for i in range(cfg.enc_blocks):
        pre = f"enc.blk{i}"
        param(f"{pre}.ln1.g", np.ones(w, dtype=np.float32))
        param(f"{pre}.ln1.b", zeros(w))
        for proj in ("wq", "wk", "wv", "wo"):
            param(f"{pre}.attn.{proj}", _normal(rng, (w, w)))
        for bias in ("bq", "bk", "bv", "bo"):
            param(f"{pre}.attn.{bias}", zeros(w))
        param(f"{pre}.ln2.g", np.ones(w, dtype=np.float32))
        param(f"{pre}.ln2.b", zeros(w))
        param(f"{pre}.mlp.w1", _normal(rng, (w, hidden)))
        param(f"{pre}.mlp.b1", zeros(hidden))
        param(f"{pre}.mlp.w2", _normal(rng, (hidden, w)))
        param(f"{pre}.mlp.b2", zeros(w))
    param("enc.ln_f.g", np.ones(w, dtype=np.float32))
    param("enc.ln_f.b", zeros(w))
    param("enc.head.w", _normal(rng, (w, d)))
    param("enc.head.b", zeros(d))

    param("dec.in_proj.w", _normal(rng, (s, w)))
    param("dec.in_proj.b", zeros(w))
    param("dec.code_proj.w", _normal(rng, (d, w)))
    param("dec.code_proj.b", zeros(w))
    param("dec.pos", _normal(rng, (h + l, w)))
    param("dec.time.w1", _normal(rng, (w, w)))
    param("dec.time.b1", zeros(w))
    param("dec.time.w2", _normal(rng, (w, w)))
    param("dec.time.b2", zeros(w))
    for i in range(cfg.dec_blocks):
        pre = f"dec.blk{i}"
        param(f"{pre}.mod.w", zeros((w, 6 * w)))
        param(f"{pre}.mod.b", zeros(6 * w))
        for proj in ("wq", "wk", "wv", "wo"):
            param(f"{pre}.attn.{proj}", _normal(rng, (w, w)))
        for bias in ("bq", "bk", "bv", "bo"):
            param(f"{pre}.attn.{bias}", zeros(w))
        param(f"{pre}.mlp.w1", _normal(rng, (w, hidden)))
        param(f"{pre}.mlp.b1", zeros(hidden))
        param(f"{pre}.mlp.w2", _normal(rng, (hidden, w)))
        param(f"{pre}.mlp.b2", zeros(w))
    param("dec.head.w", zeros((w, s)))
    param("dec.head.b", zeros(s))
    return p


def zero_grads(params):
    for t in params.values():
        t.grad = None


# ---------------------------------------------------------------------------
# network building blocks


def _linear(x, params, prefix):
    return T.add(T.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def _affine_ln(x, params, prefix):
    return T.layer_norm_affine(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def _attention(x, params, prefix, heads):
    b, t, w = x.shape
    dh = w // heads
    q = _linear_qkv(x, params, prefix, "q")
    k = _linear_qkv(x, params, prefix, "k")
    v = _linear_qkv(x, params, prefix, "v")
    q4 = T.transpose(T.reshape(q, (b, t, heads, dh)), (0, 2, 1, 3))
    k4 = T.transpose(T.reshape(k, (b, t, heads, dh)), (0, 2, 3, 1))
    v4 = T.transpose(T.reshape(v, (b, t, heads, dh)), (0, 2, 1, 3))
    att = T.softmax(T.scale(T.matmul(q4, k4), 1.0 / math.sqrt(dh)))
    ctx = T.reshape(T.transpose(T.matmul(att, v4), (0, 2, 1, 3)), (b, t, w))
    return T.add(T.matmul(ctx, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def _linear_qkv(x, params, prefix, which):
    return T.add(T.matmul(x, params[f"{prefix}.w{which}"]), params[f"{prefix}.b{which}"])


def _mlp(x, params, prefix):
    hidden = T.silu(T.add(T.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return T.add(T.matmul(hidden, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def _as_batch(values, expected_tail, what):
    arr = np.asarray(values, dtype=np.float32) if not isinstance(values, T.Tensor) else values
    shape = arr.shape
    if shape[-len(expected_tail):] != expected_tail:
        raise ModelError(f"{what} must end in {expected_tail}, got {shape}")
    if len(shape) == len(expected_tail):
        if isinstance(arr, T.Tensor):
            raise ModelError(f"{what}: pass batched tensors, got {shape}")
        return arr[None, ...], True
    if len(shape) == len(expected_tail) + 1:
        return arr, False
    raise ModelError(f"{what} has unsupported rank {len(shape)}")


# ---------------------------------------------------------------------------
# encoder


def encode_batch(params, cfg, chunks):
    """Standardized chunks (B,H,S) -> continuous latents (B,L,D) on the tape."""
    x = chunks if isinstance(chunks, T.Tensor) else T.Tensor(np.asarray(chunks, dtype=np.float32))
    b = x.shape[0]
    actions = _linear(x, params, "enc.in_proj")                       # (B,H,W)
    queries = T.broadcast_to(params["enc.queries"], (b,) + params["enc.queries"].shape)
    seq = T.add(T.concat([actions, queries], axis=1), params["enc.pos"])
    for i in range(cfg.enc_blocks):
        pre = f"enc.blk{i}"
        seq = T.add(seq, _attention(_affine_ln(seq, params, f"{pre}.ln1"), params, f"{pre}.attn", cfg.heads))
        seq = T.add(seq, _mlp(_affine_ln(seq, params, f"{pre}.ln2"), params, f"{pre}.mlp"))
    latent_rows = T.narrow(_affine_ln(seq, params, "enc.ln_f"), 1, cfg.horizon, cfg.code_len)
    return _linear(latent_rows, params, "enc.head")                   # (B,L,D)


def encode(chunk, params, cfg):
    """Single standardized chunk (H,S) -> latent (L,D) as a numpy array."""
    values = chunk.values if isinstance(chunk, ActionChunk) else chunk
    batch, _ = _as_batch(values, (cfg.horizon, cfg.dims), "chunk")
    return encode_batch(params, cfg, batch).data[0]


# ---------------------------------------------------------------------------
# rectified-flow interpolation and velocity decoder


def interpolate(z, a, t):
    """Straight path (1-t) z + t a for t in [0,1]; t scalar or per-sample."""
    z = np.asarray(z)
    a = np.asarray(a)
    if z.shape != a.shape:
        raise ModelError(f"interpolate shapes disagree: {z.shape} vs {a.shape}")
    t_arr = np.asarray(t, dtype=z.dtype)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ModelError(f"interpolation time must lie in [0,1], got {t}")
    if t_arr.ndim == 1:
        t_arr = t_arr.reshape((-1,) + (1,) * (z.ndim - 1))
    return (1.0 - t_arr) * z + t_arr * a


def time_features(t, width):
    """Sinusoidal features of the flow time, (B, width), gradient-free."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = width // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :] * 1000.0
    feats = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if width % 2:
        feats = np.concatenate([feats, np.zeros((len(t), 1))], axis=1)
    return feats.astype(np.float32)


def velocity_batch(params, cfg, noisy_actions, bits, t):
    """Joint-sequence decoder pass: (B,H,S) x (B,L,D) x (B,) -> (B,H,S).

    Each timestep is one token (patch size one). The flow time enters only
    through the per-block scale/shift/gate modulation of the action rows;
    code rows run as plain pre-norm residual blocks through the shared
    attention and MLP.
    """
    h, l = cfg.horizon, cfg.code_len
    t_arr = np.asarray(t, dtype=np.float64).reshape(-1)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ModelError(f"flow time must lie in [0,1], got {t}")
    x = noisy_actions if isinstance(noisy_actions, T.Tensor) else T.Tensor(
        np.asarray(noisy_actions, dtype=np.float32))
    code = bits if isinstance(bits, T.Tensor) else T.Tensor(np.asarray(bits, dtype=np.float32))
    b = x.shape[0]

    actions = _linear(x, params, "dec.in_proj")                        # (B,H,W)
    codes = _linear(code, params, "dec.code_proj")                     # (B,L,W)
    seq = T.add(T.concat([actions, codes], axis=1), params["dec.pos"])

    # time embedding MLP: linear -> silu -> linear
    temb = T.add(T.matmul(T.Tensor(time_features(t_arr, cfg.width)), params["dec.time.w1"]),
                 params["dec.time.b1"])
    temb = T.add(T.matmul(T.silu(temb), params["dec.time.w2"]), params["dec.time.b2"])
    cemb = T.silu(temb)                                                # (B,W)

    for i in range(cfg.dec_blocks):
        pre = f"dec.blk{i}"
        mod = T.add(T.matmul(cemb, params[f"{pre}.mod.w"]), params[f"{pre}.mod.b"])
        mod = T.reshape(mod, (b, 1, 6 * cfg.width))
        scale1 = T.narrow(mod, 2, 0, cfg.width)
        shift1 = T.narrow(mod, 2, cfg.width, cfg.width)
        gate1 = T.narrow(mod, 2, 2 * cfg.width, cfg.width)
        scale2 = T.narrow(mod, 2, 3 * cfg.width, cfg.width)
        shift2 = T.narrow(mod, 2, 4 * cfg.width, cfg.width)
        gate2 = T.narrow(mod, 2, 5 * cfg.width, cfg.width)

        normed = T.layer_norm(seq)
        act_rows = T.narrow(normed, 1, 0, h)
        code_rows = T.narrow(normed, 1, h, l)
        act_rows = T.add(T.add(act_rows, T.mul(act_rows, scale1)), shift1)
        attn_out = _attention(T.concat([act_rows, code_rows], axis=1), params, f"{pre}.attn", cfg.heads)
        seq = T.add(seq, T.concat([T.mul(T.narrow(attn_out, 1, 0, h), gate1),
                                   T.narrow(attn_out, 1, h, l)], axis=1))

        normed = T.layer_norm(seq)
        act_rows = T.narrow(normed, 1, 0, h)
        code_rows = T.narrow(normed, 1, h, l)
        act_rows = T.add(T.add(act_rows, T.mul(act_rows, scale2)), shift2)
        mlp_out = _mlp(T.concat([act_rows, code_rows], axis=1), params, f"{pre}.mlp")
        seq = T.add(seq, T.concat([T.mul(T.narrow(mlp_out, 1, 0, h), gate2),
                                   T.narrow(mlp_out, 1, h, l)], axis=1))

    return _linear(T.narrow(seq, 1, 0, h), params, "dec.head")         # (B,H,S)


def decode_velocity(noisy_chunk, code, t, params, cfg):
    """Single-chunk velocity prediction, (H,S) -> (H,S) numpy."""
    batch, _ = _as_batch(noisy_chunk, (cfg.horizon, cfg.dims), "noisy chunk")
    bits = code.bits if isinstance(code, LatentCode) else np.asarray(code)
    return velocity_batch(params, cfg, batch, bits[None, ...], [float(t)]).data[0]


# ---------------------------------------------------------------------------
# losses


def loss_flow(params, cfg, actions, noise, times, bits):
    """Mean squared error between predicted velocity and a - z."""
    a_t = interpolate(noise, actions, times).astype(np.float32)
    target = T.Tensor(np.asarray(actions, dtype=np.float32) - np.asarray(noise, dtype=np.float32))
    pred = velocity_batch(params, cfg, a_t, bits, times)
    return T.mse(pred, target)


def loss_entropy(e, temp=1.0):
    """Confident-but-diverse code regularizer, in nats.

    Per-bit Bernoulli surrogate: mean binary entropy of p = sigmoid(2e/temp)
    per sample (pushed low, confident codes) minus the binary entropy of the
    batch-mean p per bit position (pushed high, diverse usage). Bounded in
    [-ln 2, ln 2]; a collapsed-but-confident batch scores 0.
    """
    if e.shape[0] < 2:
        raise ModelError("loss_entropy requires a batch of at least 2 latents")
    p = T.sigmoid(T.scale(e, 2.0 / temp))
    conditional = T.mean(T.binary_entropy(p))
    marginal = T.mean(T.binary_entropy(T.mean(p, axis=0)))
    return T.sub(conditional, marginal)


def loss_commit(e, bits):
    """Mean of (e - bits)^2 with no gradient through the quantized bits."""
    return T.mse(e, T.detach(bits))


def compute_losses(params, cfg, actions, noise, times):
    """Run the full forward pass and return all loss terms.

    total = flow + entropy_weight * entropy + commit_weight * commit.
    """
    e = encode_batch(params, cfg, np.asarray(actions, dtype=np.float32))
    bits = T.sign_ste(e)
    flow = loss_flow(params, cfg, actions, noise, times, bits)
    entropy = loss_entropy(e, cfg.entropy_temp)
    commit = loss_commit(e, bits)
    total = T.add(flow, T.add(T.scale(entropy, cfg.entropy_weight),
                              T.scale(commit, cfg.commit_weight)))
    return {"flow": flow, "entropy": entropy, "commit": commit, "total": total,
            "e": e, "bits": bits}


# ---------------------------------------------------------------------------
# reconstruction


def euler_integrate(velocity_fn, x0, ode_steps):
    """Integrate dx/dt = velocity_fn(x, t) from t=0 to t=1 in equal steps."""
    if ode_steps < 1:
        raise ModelError("ode_steps must be >= 1")
    x = np.array(x0, copy=True)
    dt = 1.0 / ode_steps
    for k in range(ode_steps):
        x = x + dt * np.asarray(velocity_fn(x, k * dt))
    return x


def noise_for_chunk(seed, index, horizon, dims):
    """Per-chunk Gaussian start state, independent of batch composition."""
    rng = np.random.default_rng([int(seed), int(index)])
    return rng.standard_normal((horizon, dims)).astype(np.float32)


def reconstruct_batch(bits, params, cfg, ode_steps=None, seed=0, indices=None):
    """Integrate the learned field for a batch of codes; returns (B,H,S)."""
    bits = np.asarray(bits, dtype=np.float32)
    b = bits.shape[0]
    steps = cfg.ode_steps if ode_steps is None else int(ode_steps)
    if indices is None:
        indices = range(b)
    x0 = np.stack([noise_for_chunk(seed, i, cfg.horizon, cfg.dims) for i in indices])

    def field(x, t):
        times = np.full(b, t, dtype=np.float64)
        return velocity_batch(params, cfg, x.astype(np.float32), bits, times).data

    return euler_integrate(field, x0, steps)


def reconstruct(code, params, cfg, ode_steps=None, seed=0):
    """Decode one latent code to a standardized chunk by Euler integration."""
    bits = code.bits if isinstance(code, LatentCode) else np.asarray(code)
    return reconstruct_batch(bits[None, ...], params, cfg, ode_steps=ode_steps, seed=seed)[0]


# ---------------------------------------------------------------------------
# end-to-end tokenizer


class FactTokenizer:
    """Trained model plus normalization stats: raw chunks <-> L token ids."""

    name = "fact"

    def __init__(self, cfg, params, stats):
        self.cfg = cfg
        self.params = params
        self.stats = stats

    @property
    def vocab_size(self):
        return self.cfg.vocab_size

    # standardized-space interface used by the evaluation harness
    def encode_std_batch(self, chunks):
        e = encode_batch(self.params, self.cfg, np.asarray(chunks, dtype=np.float32))
        return bits_to_token_ids(quantize(e).bits)

    def decode_std_batch(self, token_id_rows, seed=0, indices=None):
        bits = np.stack([token_ids_to_bits(ids, self.cfg.code_bits) for ids in token_id_rows])
        return reconstruct_batch(bits, self.params, self.cfg, seed=seed, indices=indices)

    # raw-space interface used by the CLI
    def tokenize(self, chunk):
        if not isinstance(chunk, ActionChunk):
            chunk = ActionChunk(values=np.asarray(chunk, dtype=np.float64),
                                task_id="", source_offset=0)
        std = standardize(chunk, self.stats)
        return self.encode_std_batch(std.values[None, ...])[0].tolist()

    def detokenize(self, token_ids, seed=0):
        std = self.decode_std_batch([np.asarray(token_ids)], seed=seed)[0]
        chunk = ActionChunk(values=std.astype(np.float64), task_id="", source_offset=0)
        return destandardize(chunk, self.stats).values
