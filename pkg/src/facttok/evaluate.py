"""Reconstruction-fidelity measurement and code-length comparison reports.

All tokenizers are evaluated through one duck-typed interface over
standardized chunks: `encode_std(values) -> token ids` and
`decode_std(ids, sample_seed, index) -> values`. Records land in
records.csv incrementally (sweeps are crash-resumable), and emit_report
renders records.csv, summary.json, and a log-scale MSE-vs-code-length SVG
chart with one series per tokenizer.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import baselines as B
from . import model as M
from . import training as TR

CSV_FIELDS = ("tokenizer", "code_length", "vocab_size", "mse", "failure_rate", "chunks", "seed")


class EvalError(RuntimeError):
    """Raised on invalid evaluation inputs (e.g. leaking task splits)."""


@dataclass
class EvalRecord:
    tokenizer: str
    code_length: float
    vocab_size: int
    mse: float
    per_dim_mse: list = field(default_factory=list)
    failure_rate: float = 0.0
    chunks: int = 0
    seed: int = 0

    def csv_row(self):
        return {
            "tokenizer": self.tokenizer,
            "code_length": repr(self.code_length),
            "vocab_size": self.vocab_size,
            "mse": repr(self.mse),
            "failure_rate": repr(self.failure_rate),
            "chunks": self.chunks,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# tokenizer adapters (standardized space)


class BinningTokenizer:
    """Per-dimension uniform binning; optionally truncated to a token budget.

    With a budget, only the first `budget` of the H*S value tokens are kept;
    missing values decode to 0 (the standardized mean).
    """

    def __init__(self, spec, horizon, dims, budget=None):
        self.spec = spec
        self.horizon = horizon
        self.dims = dims
        self.budget = budget
        bins = spec.bins_per_dim
        self.name = f"binning-{bins}" if budget is None else f"binning-{bins}-budget{budget}"

    @classmethod
    def fit(cls, train_values, horizon, dims, bins=256, budget=None):
        spec = B.fit_binning(train_values, bins_per_dim=bins)
        return cls(spec, horizon, dims, budget=budget)

    @property
    def vocab_size(self):
        return self.spec.bins_per_dim

    def encode_std(self, values):
        ids = B.bin_tokenize(values, self.spec)
        if self.budget is not None:
            ids = ids[: self.budget]
        return ids

    def decode_std(self, ids, sample_seed=0, index=0):
        full = self.horizon * self.dims
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) < full:
            # decode the covered prefix value by value (row-major order);
            # everything beyond the budget falls back to the standardized mean
            grid = np.zeros(full)
            widths = np.repeat(self.spec.widths[None, :], self.horizon, axis=0).reshape(-1)
            lows = np.repeat(self.spec.clip_low[None, :], self.horizon, axis=0).reshape(-1)
            grid[: len(ids)] = lows[: len(ids)] + (ids + 0.5) * widths[: len(ids)]
            return grid.reshape(self.horizon, self.dims)
        return B.bin_detokenize(ids, self.spec, self.horizon)


class FastBaselineTokenizer:
    """DCT + scale/round + BPE pipeline behind the shared interface."""

    def __init__(self, spec):
        self.spec = spec
        self.name = f"fast-scale{spec.quant_scale:g}"

    @classmethod
    def fit(cls, train_values, quant_scale, merge_budget=512, bpe_sample=256, seed=0):
        spec = B.fit_fast(train_values, quant_scale, merge_budget=merge_budget,
                          bpe_sample=bpe_sample, seed=seed)
        return cls(spec)

    @property
    def vocab_size(self):
        return self.spec.bpe.vocab_size

    def encode_std(self, values):
        return B.fast_tokenize(values, self.spec)

    def decode_std(self, ids, sample_seed=0, index=0):
        return B.fast_detokenize(ids, self.spec)


# ---------------------------------------------------------------------------
# reconstruction evaluation


def _check_disjoint(test_chunks, train_task_ids):
    if train_task_ids is None:
        return
    test_tasks = {c.task_id for c in test_chunks if getattr(c, "task_id", None)}
    leaked = test_tasks & set(train_task_ids)
    if leaked:
        raise EvalError(f"task leakage between train and test splits: {sorted(leaked)}")


def eval_reconstruction(tokenizer, test_chunks, seed=0, train_task_ids=None, batch_size=64):
    """Round-trip every standardized test chunk and aggregate the error.

    Decode failures are counted into failure_rate and excluded from the MSE.
    Deterministic given (tokenizer, test set, seed): generative decoders
    receive per-chunk noise seeded by (seed, chunk index).
    """
    _check_disjoint(test_chunks, train_task_ids)
    values = [np.asarray(c.values if hasattr(c, "values") else c, dtype=np.float64)
              for c in test_chunks]
    if not values:
        raise EvalError("eval_reconstruction requires at least one chunk")
    dims = values[0].shape[1]

    lengths = []
    sq_err_sum = np.zeros(dims)
    err_count = 0
    failures = 0

    if hasattr(tokenizer, "encode_std_batch"):
        stacked = np.stack(values).astype(np.float32)
        recon = np.empty_like(stacked)
        for start in range(0, len(values), batch_size):
            stop = min(start + batch_size, len(values))
            ids = tokenizer.encode_std_batch(stacked[start:stop])
            lengths.extend([ids.shape[1]] * (stop - start))
            recon[start:stop] = tokenizer.decode_std_batch(
                ids, seed=seed, indices=range(start, stop))
        diff = (stacked.astype(np.float64) - recon.astype(np.float64)) ** 2
        sq_err_sum = diff.sum(axis=(0, 1))
        err_count = len(values)
    else:
        for i, chunk in enumerate(values):
            ids = tokenizer.encode_std(chunk)
            lengths.append(len(ids))
            try:
                back = tokenizer.decode_std(ids, sample_seed=seed, index=i)
            except B.DecodeFailure:
                failures += 1
                continue
            sq_err_sum += ((chunk - back) ** 2).sum(axis=0)
            err_count += 1

    if err_count == 0:
        mse = float("nan")
        per_dim = [float("nan")] * dims
    else:
        horizon = values[0].shape[0]
        per_dim = (sq_err_sum / (err_count * horizon)).tolist()
        mse = float(sq_err_sum.sum() / (err_count * horizon * dims))
    return EvalRecord(
        tokenizer=tokenizer.name,
        code_length=float(np.mean(lengths)),
        vocab_size=int(tokenizer.vocab_size),
        mse=mse,
        per_dim_mse=per_dim,
        failure_rate=failures / len(values),
        chunks=len(values),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# FAST code-length matching


def match_fast_code_length(train_values, test_chunks, target_len, tolerance=0.1,
                           scales=(10.0, 32.0, 100.0, 316.0, 1000.0),
                           merge_budget=512, seed=0, max_probes=8):
    """Fit the DCT+BPE baseline at swept scales and pick code-length matches.

    Returns (matching [(tokenizer, record)], all [(tokenizer, record)]).
    When no swept scale lands within tolerance of `target_len`, bisect on
    log-scale between the bracketing scales (mean code length grows with
    scale) until one does or probes run out.
    """
    evaluated = []

    def probe(scale):
        tok = FastBaselineTokenizer.fit(train_values, scale, merge_budget=merge_budget, seed=seed)
        rec = eval_reconstruction(tok, test_chunks, seed=seed)
        evaluated.append((tok, rec))
        return rec

    for scale in scales:
        probe(scale)

    def matches():
        return [(t, r) for t, r in evaluated
                if abs(r.code_length - target_len) <= tolerance * target_len]

    probes = 0
    while not matches() and probes < max_probes:
        by_len = sorted(evaluated, key=lambda tr: tr[1].code_length)
        below = [tr for tr in by_len if tr[1].code_length < target_len]
        above = [tr for tr in by_len if tr[1].code_length > target_len]
        if below and above:
            lo = below[-1][0].spec.quant_scale
            hi = above[0][0].spec.quant_scale
            nxt = math.sqrt(lo * hi)
        elif above:
            # even the coarsest scale emits too many tokens: go coarser
            nxt = min(t.spec.quant_scale for t, _ in evaluated) / 4.0
        elif below:
            nxt = max(t.spec.quant_scale for t, _ in evaluated) * 4.0
        else:
            break
        if any(abs(t.spec.quant_scale - nxt) / nxt < 1e-3 for t, _ in evaluated):
            break
        probe(nxt)
        probes += 1
    return matches(), evaluated


# ---------------------------------------------------------------------------
# record persistence and sweeps


def append_record(record, path):
    exists = os.path.exists(path) and os.path.getsize(path) > 0
    with open(path, "a", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        if not exists:
            writer.writeheader()
        writer.writerow(record.csv_row())


def read_records(path):
    records = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            records.append(EvalRecord(
                tokenizer=row["tokenizer"],
                code_length=float(row["code_length"]),
                vocab_size=int(row["vocab_size"]),
                mse=float(row["mse"]),
                failure_rate=float(row["failure_rate"]),
                chunks=int(row["chunks"]),
                seed=int(row["seed"]),
            ))
    return records


def _sweep_point(base_cfg_dict, train_cfg_dict, train_std, test_values, code_len, bits, seed):
    """Train one grid point from scratch and evaluate it (worker-safe)."""
    from .data import ActionChunk, NormStats
    cfg = M.TokenizerConfig(**{**base_cfg_dict, "code_len": code_len,
                               "code_bits": bits, "seed": seed})
    tcfg = TR.TrainConfig(**{**train_cfg_dict, "seed": seed})
    test_chunks = [ActionChunk(values=v, task_id="", source_offset=0) for v in test_values]
    try:
        state = TR.TrainState(cfg, tcfg)
        TR.train(state, train_std)
        stats = NormStats(mean=np.zeros(cfg.dims), std=np.ones(cfg.dims))
        tok = M.FactTokenizer(cfg, state.params, stats)
        return eval_reconstruction(tok, test_chunks, seed=seed)
    except TR.TrainingDiverged:
        return EvalRecord(tokenizer="fact", code_length=float(code_len),
                          vocab_size=2 ** bits, mse=float("nan"),
                          failure_rate=1.0, chunks=len(test_chunks), seed=seed)


def sweep(base_cfg, train_cfg, train_std, test_chunks, code_lengths, bit_widths,
          seeds, records_path, jobs=1):
    """Train and evaluate the flow tokenizer over a {L} x {D} x seeds grid.

    Each completed point appends to records_path immediately; rerunning the
    sweep skips points already present (matched on code length, vocabulary
    size, and seed). Grid points are independent: with jobs > 1 they train
    in separate processes.
    """
    done = set()
    if os.path.exists(records_path):
        for rec in read_records(records_path):
            if rec.tokenizer == "fact":
                done.add((int(round(rec.code_length)), rec.vocab_size, rec.seed))
    test_values = [np.asarray(c.values if hasattr(c, "values") else c, dtype=np.float32)
                   for c in test_chunks]
    points = [(code_len, bits, seed)
              for code_len in code_lengths for bits in bit_widths for seed in seeds
              if (code_len, 2 ** bits, seed) not in done]
    records = []
    if jobs > 1 and len(points) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_point, base_cfg.to_dict(), train_cfg.to_dict(),
                                   train_std, test_values, *point)
                       for point in points]
            for future in futures:
                rec = future.result()
                append_record(rec, records_path)
                records.append(rec)
    else:
        for point in points:
            rec = _sweep_point(base_cfg.to_dict(), train_cfg.to_dict(),
                               train_std, test_values, *point)
            append_record(rec, records_path)
            records.append(rec)
    return records


# ---------------------------------------------------------------------------
# report emission


def emit_report(records, out_dir):
    """Write records.csv, summary.json, and a log-scale comparison chart."""
    if not records:
        raise EvalError("emit_report requires at least one record")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "records.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for rec in records:
            writer.writerow(rec.csv_row())
    summary = {
        "records": [
            {**rec.csv_row(), "code_length": rec.code_length, "mse": rec.mse,
             "failure_rate": rec.failure_rate, "per_dim_mse": rec.per_dim_mse}
            for rec in records
        ],
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=1)
    svg_path = os.path.join(out_dir, "chart.svg")
    with open(svg_path, "w") as f:
        f.write(render_chart_svg(records))
    return {"csv": csv_path, "summary": os.path.join(out_dir, "summary.json"), "svg": svg_path}


_SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def render_chart_svg(records, width=640, height=440):
    """Reconstruction MSE (log scale) against code length, per tokenizer."""
    pad_l, pad_r, pad_t, pad_b = 64, 16, 28, 46
    plot_w, plot_h = width - pad_l - pad_r, height - pad_t - pad_b
    finite = [r for r in records if math.isfinite(r.mse) and r.mse > 0]
    xs = [r.code_length for r in finite] or [1.0]
    ys = [r.mse for r in finite] or [1.0]
    x_min, x_max = min(xs), max(xs)
    if x_max == x_min:
        x_min, x_max = x_min - 1, x_max + 1
    y_lo = math.floor(math.log10(min(ys)))
    y_hi = math.ceil(math.log10(max(ys)))
    if y_hi == y_lo:
        y_hi += 1

    def sx(x):
        return pad_l + (x - x_min) / (x_max - x_min) * plot_w

    def sy(y):
        return pad_t + (y_hi - math.log10(y)) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{pad_l}" y="{pad_t}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#444"/>',
    ]
    for exp in range(y_lo, y_hi + 1):
        y = sy(10.0 ** exp)
        parts.append(f'<line x1="{pad_l}" y1="{y:.1f}" x2="{pad_l + plot_w}" y2="{y:.1f}" '
                     f'stroke="#ddd"/>')
        parts.append(f'<text x="{pad_l - 6}" y="{y + 4:.1f}" text-anchor="end">1e{exp}</text>')
    n_xticks = 6
    for i in range(n_xticks + 1):
        x_val = x_min + (x_max - x_min) * i / n_xticks
        x = sx(x_val)
        parts.append(f'<line x1="{x:.1f}" y1="{pad_t + plot_h}" x2="{x:.1f}" '
                     f'y2="{pad_t + plot_h + 4}" stroke="#444"/>')
        parts.append(f'<text x="{x:.1f}" y="{pad_t + plot_h + 18}" '
                     f'text-anchor="middle">{x_val:.0f}</text>')
    parts.append(f'<text x="{pad_l + plot_w / 2:.0f}" y="{height - 8}" '
                 f'text-anchor="middle">code length (tokens per chunk)</text>')
    parts.append(f'<text x="14" y="{pad_t + plot_h / 2:.0f}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {pad_t + plot_h / 2:.0f})">reconstruction MSE</text>')

    by_name = {}
    for rec in finite:
        by_name.setdefault(rec.tokenizer, []).append(rec)
    for idx, (name, recs) in enumerate(sorted(by_name.items())):
        color = _SERIES_COLORS[idx % len(_SERIES_COLORS)]
        pts = sorted(((r.code_length, r.mse) for r in recs))
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        if len(pts) > 1:
            parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                         f'stroke-width="1.5"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}"/>')
        ly = pad_t + 14 + idx * 16
        parts.append(f'<rect x="{pad_l + plot_w - 150}" y="{ly - 9}" width="10" height="10" '
                     f'fill="{color}"/>')
        parts.append(f'<text x="{pad_l + plot_w - 136}" y="{ly}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
