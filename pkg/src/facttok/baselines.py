"""Comparison tokenizers: per-dimension uniform binning, and a FAST-style
pipeline (per-dimension DCT over the chunk, scale-and-round quantization,
then byte-pair encoding of the integer stream).

Binning emits one token per value, so its code length is always H*S; the
FAST-style tokenizer emits a variable number of tokens per chunk. BPE here
is lossless by construction: encoding then decoding any stream of base
tokens is the identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct, idct


class BaselineError(ValueError):
    """Raised on invalid baseline inputs."""


class DecodeFailure(RuntimeError):
    """A token stream could not be decoded (unknown token id)."""


# ---------------------------------------------------------------------------
# uniform binning


@dataclass
class BinningSpec:
    bins_per_dim: int
    clip_low: np.ndarray   # (S,)
    clip_high: np.ndarray  # (S,)

    @property
    def widths(self):
        return (self.clip_high - self.clip_low) / self.bins_per_dim


def fit_binning(train_values, bins_per_dim=256, quantiles=(0.01, 0.99)):
    """Clip bounds from training-data quantiles, one pair per dimension."""
    stacked = np.concatenate([np.asarray(v).reshape(-1, np.asarray(v).shape[-1])
                              for v in train_values], axis=0)
    low = np.quantile(stacked, quantiles[0], axis=0)
    high = np.quantile(stacked, quantiles[1], axis=0)
    bad = high <= low
    if np.any(bad):
        # constant dimension: widen symmetrically so bin width stays positive
        high = high.copy()
        low = low.copy()
        high[bad] = low[bad] + 1e-6
    return BinningSpec(bins_per_dim=bins_per_dim, clip_low=low, clip_high=high)


def bin_tokenize(chunk, spec):
    """Clip each value into [low, high] and map to its bin id; H*S tokens."""
    values = np.asarray(chunk)
    clipped = np.clip(values, spec.clip_low, spec.clip_high)
    ids = np.floor((clipped - spec.clip_low) / spec.widths).astype(np.int64)
    ids = np.minimum(ids, spec.bins_per_dim - 1)
    return ids.reshape(-1)


def bin_detokenize(ids, spec, horizon):
    ids = np.asarray(ids, dtype=np.int64)
    if np.any(ids < 0) or np.any(ids >= spec.bins_per_dim):
        raise BaselineError(f"bin id outside [0, {spec.bins_per_dim})")
    grid = ids.reshape(horizon, -1)
    return spec.clip_low + (grid + 0.5) * spec.widths


# ---------------------------------------------------------------------------
# orthonormal DCT


def dct_forward(signal):
    """Orthonormal DCT-II along the first axis."""
    return dct(np.asarray(signal, dtype=np.float64), type=2, norm="ortho", axis=0)


def dct_inverse(coeffs):
    """Exact inverse of dct_forward."""
    return idct(np.asarray(coeffs, dtype=np.float64), type=2, norm="ortho", axis=0)


# ---------------------------------------------------------------------------
# byte-pair encoding over integer streams


@dataclass
class BpeModel:
    base_vocab: int
    merges: list = field(default_factory=list)  # [(a, b, new_id), ...]

    @property
    def vocab_size(self):
        return self.base_vocab + len(self.merges)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"base_vocab": self.base_vocab,
                       "merges": [list(m) for m in self.merges]}, f)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
        return cls(base_vocab=int(obj["base_vocab"]),
                   merges=[tuple(m) for m in obj["merges"]])


def _merge_pair(stream, a, b, new_id):
    """Replace non-overlapping (a, b) occurrences left to right, vectorized."""
    if len(stream) < 2:
        return stream
    hits = np.flatnonzero((stream[:-1] == a) & (stream[1:] == b))
    if len(hits) == 0:
        return stream
    if a == b:
        # drop hits that overlap an earlier kept hit (runs of the same token)
        keep = []
        last = -2
        for h in hits:
            if h > last + 1:
                keep.append(h)
                last = h
        hits = np.asarray(keep)
    out = np.empty(len(stream) - len(hits), dtype=stream.dtype)
    mask = np.ones(len(stream), dtype=bool)
    mask[hits + 1] = False
    out[:] = stream[mask]
    # positions of kept hits within the compacted stream
    offsets = np.searchsorted(np.flatnonzero(mask), hits)
    out[offsets] = new_id
    return out


def _pair_counts(streams, vocab):
    counts = {}
    for s in streams:
        if len(s) < 2:
            continue
        keys = s[:-1].astype(np.int64) * vocab + s[1:]
        uniq, cnt = np.unique(keys, return_counts=True)
        for k, c in zip(uniq.tolist(), cnt.tolist()):
            counts[k] = counts.get(k, 0) + c
    return counts


def bpe_train(corpus, base_vocab, target_vocab):
    """Merge the most frequent adjacent pair until target vocabulary size.

    Ties break toward the lexicographically smallest (first, second) pair.
    Stops early when no pair occurs at least twice.
    """
    if not corpus:
        raise BaselineError("bpe_train requires a nonempty corpus")
    if target_vocab <= base_vocab:
        raise BaselineError(
            f"target vocabulary {target_vocab} must exceed base vocabulary {base_vocab}")
    streams = [np.asarray(s, dtype=np.int64) for s in corpus]
    for s in streams:
        if len(s) and (s.min() < 0 or s.max() >= base_vocab):
            raise BaselineError("corpus token outside base vocabulary")
    merges = []
    next_id = base_vocab
    while next_id < target_vocab:
        counts = _pair_counts(streams, next_id)
        best = None  # (count, key); key = a * next_id + b orders pairs lexicographically
        for key, count in counts.items():
            if count < 2:
                continue
            if best is None or count > best[0] or (count == best[0] and key < best[1]):
                best = (count, key)
        if best is None:
            break
        a, b = divmod(best[1], next_id)
        streams = [_merge_pair(s, a, b, next_id) for s in streams]
        merges.append((int(a), int(b), next_id))
        next_id += 1
    return BpeModel(base_vocab=base_vocab, merges=merges)


def bpe_encode(stream, model):
    """Apply merge rules in training order; deterministic."""
    s = np.asarray(stream, dtype=np.int64)
    if len(s) and (s.min() < 0 or s.max() >= model.base_vocab):
        raise BaselineError("stream token outside base vocabulary")
    for a, b, new_id in model.merges:
        s = _merge_pair(s, a, b, new_id)
    return s


def bpe_decode(stream, model):
    """Expand merged tokens back to base tokens; unknown ids fail loudly."""
    expansion = {new_id: (a, b) for a, b, new_id in model.merges}
    out = []

    def expand(tok):
        if tok < 0 or tok >= model.base_vocab + len(model.merges):
            raise DecodeFailure(f"token id {tok} not in BPE model (vocab {model.vocab_size})")
        if tok < model.base_vocab:
            out.append(tok)
            return
        a, b = expansion[tok]
        expand(a)
        expand(b)

    for tok in np.asarray(stream, dtype=np.int64).tolist():
        expand(tok)
    return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# FAST-style pipeline: DCT -> scale and round -> offset -> BPE


@dataclass
class FastSpec:
    quant_scale: float
    offset: int          # subtracted at decode: base token = int + offset
    base_vocab: int
    bpe: BpeModel
    horizon: int
    dims: int


def _quantize_coeffs(chunk, quant_scale):
    coeffs = dct_forward(chunk)                       # (H, S)
    return np.round(coeffs * quant_scale).astype(np.int64)


def fit_fast(train_chunks, quant_scale, merge_budget=512, bpe_sample=256, seed=0):
    """Fit offset/base vocabulary on the training data, then train BPE.

    `bpe_sample` caps how many chunks feed merge training; frequencies on a
    few hundred chunks are stable and training stays fast.
    """
    train_chunks = list(train_chunks)
    if not train_chunks:
        raise BaselineError("fit_fast requires training chunks")
    horizon, dims = np.asarray(train_chunks[0]).shape
    ints = [_quantize_coeffs(np.asarray(c), quant_scale) for c in train_chunks]
    lo = min(int(q.min()) for q in ints)
    hi = max(int(q.max()) for q in ints)
    offset = lo
    base_vocab = hi - lo + 1
    rng = np.random.default_rng(seed)
    sample_idx = np.arange(len(ints))
    if len(ints) > bpe_sample:
        sample_idx = rng.choice(len(ints), size=bpe_sample, replace=False)
    streams = [(ints[i].T.reshape(-1) - offset) for i in sample_idx]
    bpe = bpe_train(streams, base_vocab, base_vocab + merge_budget)
    return FastSpec(quant_scale=quant_scale, offset=offset, base_vocab=base_vocab,
                    bpe=bpe, horizon=horizon, dims=dims)


def fast_tokenize(chunk, spec):
    """DCT per dimension, quantize, flatten dimension-major, BPE encode."""
    values = np.asarray(chunk)
    if values.shape != (spec.horizon, spec.dims):
        raise BaselineError(f"chunk shape {values.shape} does not match fitted {spec.horizon}x{spec.dims}")
    ints = _quantize_coeffs(values, spec.quant_scale)
    base = ints.T.reshape(-1) - spec.offset           # dimension-major, low freq first
    base = np.clip(base, 0, spec.base_vocab - 1)      # out-of-range rounding extremes
    return bpe_encode(base, spec.bpe)


def fast_detokenize(ids, spec):
    """Invert BPE, offset, rounding scale, and the DCT."""
    base = bpe_decode(ids, spec.bpe)
    expected = spec.horizon * spec.dims
    if len(base) != expected:
        raise DecodeFailure(f"decoded stream has {len(base)} base tokens, expected {expected}")
    ints = (base + spec.offset).reshape(spec.dims, spec.horizon).T
    coeffs = ints.astype(np.float64) / spec.quant_scale
    return dct_inverse(coeffs)
