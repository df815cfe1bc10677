import xml.etree.ElementTree as ET

import numpy as np
import pytest

from facttok import baselines as B
from facttok import evaluate as E
from facttok.data import ActionChunk


def make_chunks(n=20, horizon=16, dims=3, seed=0, task_prefix="task"):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, horizon)
    chunks = []
    for i in range(n):
        cols = [rng.uniform(-1, 1) * np.sin(2 * np.pi * rng.uniform(0.5, 2) * t + rng.uniform(0, 6))
                for _ in range(dims)]
        chunks.append(ActionChunk(values=np.stack(cols, axis=1),
                                  task_id=f"{task_prefix}{i % 4}", source_offset=0))
    return chunks


class IdentityTokenizer:
    """Pass-through: one fake token, exact reconstruction."""

    name = "identity"
    vocab_size = 1

    def __init__(self):
        self._stash = {}

    def encode_std(self, values):
        key = len(self._stash)
        self._stash[key] = np.array(values)
        return np.array([key])

    def decode_std(self, ids, sample_seed=0, index=0):
        return self._stash[int(ids[0])]


class FailingTokenizer:
    name = "failing"
    vocab_size = 1

    def encode_std(self, values):
        return np.array([0])

    def decode_std(self, ids, sample_seed=0, index=0):
        raise B.DecodeFailure("always fails")


def test_identity_tokenizer_mse_zero():
    chunks = make_chunks()
    rec = E.eval_reconstruction(IdentityTokenizer(), chunks, seed=0)
    assert rec.mse == 0.0
    assert rec.chunks == len(chunks)
    assert rec.failure_rate == 0.0
    assert rec.code_length == 1.0


def test_binning_uniform_data_matches_quantization_noise():
    # uniform data in [-1,1] with 256 bins: MSE ~= width^2 / 12 within 20%
    rng = np.random.default_rng(1)
    horizon, dims = 25, 4
    n = 10_000 // (horizon * dims) + 1
    chunks = [ActionChunk(values=rng.uniform(-1, 1, size=(horizon, dims)),
                          task_id=f"t{i}", source_offset=0) for i in range(n)]
    tok = E.BinningTokenizer(
        B.BinningSpec(bins_per_dim=256, clip_low=np.full(dims, -1.0), clip_high=np.full(dims, 1.0)),
        horizon, dims)
    rec = E.eval_reconstruction(tok, chunks, seed=0)
    expected = (2.0 / 256) ** 2 / 12.0
    assert abs(rec.mse - expected) < 0.2 * expected


def test_binning_budget_truncation_loses_uncovered_values():
    rng = np.random.default_rng(2)
    horizon, dims = 10, 2
    chunks = [ActionChunk(values=rng.normal(size=(horizon, dims)), task_id=f"t{i}",
                          source_offset=0) for i in range(8)]
    tok = E.BinningTokenizer(
        B.BinningSpec(bins_per_dim=64, clip_low=np.full(dims, -3.0), clip_high=np.full(dims, 3.0)),
        horizon, dims, budget=4)
    rec = E.eval_reconstruction(tok, chunks, seed=0)
    assert rec.code_length == 4.0
    # 16 of 20 values decode to 0; error approaches their mean square
    assert rec.mse > 0.5


def test_failure_rate_counted_and_excluded():
    chunks = make_chunks(n=10)
    rec = E.eval_reconstruction(FailingTokenizer(), chunks, seed=0)
    assert rec.failure_rate == 1.0
    assert np.isnan(rec.mse)


def test_task_leakage_detected():
    chunks = make_chunks(n=8)
    with pytest.raises(E.EvalError, match="leakage"):
        E.eval_reconstruction(IdentityTokenizer(), chunks, seed=0,
                              train_task_ids={"task0"})


def test_disjoint_split_passes():
    chunks = make_chunks(n=8)
    rec = E.eval_reconstruction(IdentityTokenizer(), chunks, seed=0,
                                train_task_ids={"other0", "other1"})
    assert rec.mse == 0.0


def test_eval_mse_matches_scalar_loop():
    chunks = make_chunks(n=10, seed=3)
    tok = E.BinningTokenizer(
        B.BinningSpec(bins_per_dim=32, clip_low=np.full(3, -1.5), clip_high=np.full(3, 1.5)),
        16, 3)
    rec = E.eval_reconstruction(tok, chunks, seed=0)
    acc = 0.0
    count = 0
    for i, chunk in enumerate(chunks):
        back = tok.decode_std(tok.encode_std(chunk.values), sample_seed=0, index=i)
        for r in range(16):
            for c in range(3):
                acc += float(chunk.values[r, c] - back[r, c]) ** 2
                count += 1
    assert abs(rec.mse - acc / count) < 1e-9


def test_eval_deterministic():
    chunks = make_chunks(n=6, seed=4)
    tok = E.BinningTokenizer(
        B.BinningSpec(bins_per_dim=16, clip_low=np.full(3, -2.0), clip_high=np.full(3, 2.0)),
        16, 3)
    a = E.eval_reconstruction(tok, chunks, seed=5)
    b = E.eval_reconstruction(tok, chunks, seed=5)
    assert a == b


# ---------------------------------------------------------------------------
# fast baseline adapter


def test_fast_adapter_roundtrip():
    chunks = make_chunks(n=30, horizon=32, seed=5)
    values = [c.values for c in chunks]
    tok = E.FastBaselineTokenizer.fit(values, quant_scale=100.0, merge_budget=64)
    rec = E.eval_reconstruction(tok, chunks, seed=0)
    assert rec.mse < (0.5 / 100.0) ** 2
    assert rec.failure_rate == 0.0
    assert rec.code_length > 0


def test_match_fast_code_length_finds_match():
    chunks = make_chunks(n=40, horizon=32, seed=6)
    values = [c.values for c in chunks]
    target = 30.0
    matching, evaluated = E.match_fast_code_length(
        values, chunks, target_len=target, tolerance=0.5,
        scales=(10.0, 100.0), merge_budget=64)
    assert len(evaluated) >= 2
    for _, rec in matching:
        assert abs(rec.code_length - target) <= 0.5 * target


# ---------------------------------------------------------------------------
# records and reports


def sample_records():
    return [
        E.EvalRecord(tokenizer="fact", code_length=20.0, vocab_size=4096, mse=1e-4,
                     per_dim_mse=[1e-4, 2e-4], failure_rate=0.0, chunks=10, seed=0),
        E.EvalRecord(tokenizer="fast-scale10", code_length=21.0, vocab_size=900, mse=3e-3,
                     per_dim_mse=[3e-3, 3e-3], failure_rate=0.0, chunks=10, seed=0),
        E.EvalRecord(tokenizer="binning-256", code_length=112.0, vocab_size=256, mse=2e-2,
                     per_dim_mse=[2e-2, 2e-2], failure_rate=0.0, chunks=10, seed=0),
    ]


def test_append_and_read_records_roundtrip(tmp_path):
    path = tmp_path / "records.csv"
    records = sample_records()
    for rec in records:
        E.append_record(rec, path)
    loaded = E.read_records(path)
    assert len(loaded) == 3
    for got, want in zip(loaded, records):
        assert got.tokenizer == want.tokenizer
        assert got.mse == want.mse
        assert got.code_length == want.code_length


def test_emit_report_minimal_record(tmp_path):
    out = tmp_path / "report"
    paths = E.emit_report(sample_records()[:1], out)
    lines = (out / "records.csv").read_text().strip().splitlines()
    assert lines[0] == "tokenizer,code_length,vocab_size,mse,failure_rate,chunks,seed"
    assert len(lines) == 2
    ET.fromstring((out / "chart.svg").read_text())  # well-formed XML


def test_emit_report_row_count(tmp_path):
    out = tmp_path / "report"
    records = sample_records()
    E.emit_report(records, out)
    lines = (out / "records.csv").read_text().strip().splitlines()
    assert len(lines) == len(records) + 1


def test_emit_report_svg_has_series_per_tokenizer(tmp_path):
    out = tmp_path / "report"
    E.emit_report(sample_records(), out)
    svg = (out / "chart.svg").read_text()
    root = ET.fromstring(svg)
    assert "fact" in svg and "binning-256" in svg and "fast-scale10" in svg
    assert root.tag.endswith("svg")


def test_emit_report_requires_records(tmp_path):
    with pytest.raises(E.EvalError):
        E.emit_report([], tmp_path / "r")
