import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facttok import baselines as B


# ---------------------------------------------------------------------------
# uniform binning


def unit_spec(bins=256):
    return B.BinningSpec(bins_per_dim=bins,
                         clip_low=np.array([-1.0]),
                         clip_high=np.array([1.0]))


def test_bin_boundaries():
    spec = unit_spec(bins=8)
    ids = B.bin_tokenize(np.array([[-1.0], [1.0]]), spec)
    assert ids[0] == 0
    assert ids[1] == 7


def test_bin_hand_oracle_256():
    # 256 bins on [-1, 1]: width = 2/256; x = 0.004 lands in bin 128 with
    # center -1 + 128.5 * width = 0.00390625
    spec = unit_spec(bins=256)
    ids = B.bin_tokenize(np.array([[0.004]]), spec)
    assert ids[0] == 128
    center = B.bin_detokenize(ids, spec, horizon=1)[0, 0]
    assert center == pytest.approx(0.00390625, abs=1e-12)


def test_bin_roundtrip_error_bounded_by_half_width():
    rng = np.random.default_rng(0)
    spec = unit_spec(bins=64)
    values = rng.uniform(-1, 1, size=(50, 1))
    back = B.bin_detokenize(B.bin_tokenize(values, spec), spec, horizon=50)
    assert np.max(np.abs(back - values)) <= (2.0 / 64) / 2 + 1e-12


def test_bin_out_of_range_id_rejected():
    spec = unit_spec(bins=16)
    with pytest.raises(B.BaselineError):
        B.bin_detokenize(np.array([16]), spec, horizon=1)


def test_fit_binning_uses_quantiles():
    rng = np.random.default_rng(1)
    data = [rng.normal(size=(500, 2))]
    spec = B.fit_binning(data, bins_per_dim=32)
    stacked = data[0]
    np.testing.assert_allclose(spec.clip_low, np.quantile(stacked, 0.01, axis=0))
    np.testing.assert_allclose(spec.clip_high, np.quantile(stacked, 0.99, axis=0))
    assert np.all(spec.widths > 0)


def test_fit_binning_constant_dimension():
    data = [np.ones((20, 1))]
    spec = B.fit_binning(data, bins_per_dim=8)
    assert np.all(spec.widths > 0)


# ---------------------------------------------------------------------------
# DCT


def test_dct_inverse_identity():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(32, 3))
    np.testing.assert_allclose(B.dct_inverse(B.dct_forward(x)), x, atol=1e-9)


def test_dct_constant_signal_is_pure_dc():
    x = np.full((16, 1), 2.5)
    coeffs = B.dct_forward(x)
    assert abs(coeffs[0, 0] - 2.5 * np.sqrt(16)) < 1e-9
    np.testing.assert_allclose(coeffs[1:], 0.0, atol=1e-9)


def test_dct_parseval():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(32,))
    coeffs = B.dct_forward(x)
    assert abs(np.sum(x ** 2) - np.sum(coeffs ** 2)) < 1e-9


# ---------------------------------------------------------------------------
# BPE


def test_bpe_first_merge_is_most_frequent_pair():
    # (1,1) occurs twice per repetition, (1,2) and (2,1) once
    corpus = [np.tile([1, 1, 1, 2], 5)]
    model = B.bpe_train(corpus, base_vocab=3, target_vocab=4)
    assert model.merges[0][:2] == (1, 1)


def test_bpe_no_repeated_pair_no_merges():
    corpus = [np.array([0, 1, 2, 3, 4, 5])]
    model = B.bpe_train(corpus, base_vocab=6, target_vocab=16)
    assert model.merges == []


def test_bpe_merge_count_bounded():
    rng = np.random.default_rng(4)
    corpus = [rng.integers(0, 4, size=100) for _ in range(5)]
    model = B.bpe_train(corpus, base_vocab=4, target_vocab=12)
    assert len(model.merges) <= 8


def test_bpe_target_vocab_must_exceed_base():
    with pytest.raises(B.BaselineError):
        B.bpe_train([np.array([0, 1])], base_vocab=4, target_vocab=4)


def test_bpe_empty_corpus_rejected():
    with pytest.raises(B.BaselineError):
        B.bpe_train([], base_vocab=4, target_vocab=8)


def test_bpe_tie_break_prefers_smaller_pair():
    # (0,1) and (1,0) both occur twice; smaller first id wins
    corpus = [np.array([0, 1, 0, 1, 0])]
    model = B.bpe_train(corpus, base_vocab=2, target_vocab=3)
    assert model.merges[0][:2] == (0, 1)


def test_bpe_decode_unknown_id_fails():
    model = B.BpeModel(base_vocab=4, merges=[(0, 1, 4)])
    with pytest.raises(B.DecodeFailure):
        B.bpe_decode(np.array([5]), model)


def test_bpe_roundtrip_on_training_corpus():
    rng = np.random.default_rng(5)
    corpus = [rng.integers(0, 6, size=80) for _ in range(10)]
    model = B.bpe_train(corpus, base_vocab=6, target_vocab=30)
    for stream in corpus:
        encoded = B.bpe_encode(stream, model)
        assert len(encoded) <= len(stream)
        np.testing.assert_array_equal(B.bpe_decode(encoded, model), stream)


_PROPERTY_MODEL = B.bpe_train(
    [np.random.default_rng(6).integers(0, 8, size=120) for _ in range(6)],
    base_vocab=8, target_vocab=40)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=7), min_size=0, max_size=200))
def test_bpe_encode_decode_identity_property(stream):
    arr = np.asarray(stream, dtype=np.int64)
    model = _PROPERTY_MODEL
    np.testing.assert_array_equal(B.bpe_decode(B.bpe_encode(arr, model), model), arr)


def test_bpe_model_json_roundtrip(tmp_path):
    model = B.BpeModel(base_vocab=5, merges=[(0, 1, 5), (5, 2, 6)])
    path = tmp_path / "bpe.json"
    model.save(path)
    loaded = B.BpeModel.load(path)
    assert loaded == model


# ---------------------------------------------------------------------------
# FAST-style pipeline


def smooth_chunks(n=30, horizon=32, dims=3, seed=7):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, horizon)
    chunks = []
    for _ in range(n):
        cols = [rng.uniform(-1, 1) * np.sin(2 * np.pi * rng.uniform(0.5, 2) * t + rng.uniform(0, 6))
                for _ in range(dims)]
        chunks.append(np.stack(cols, axis=1))
    return chunks


def test_fast_high_scale_near_lossless():
    chunks = smooth_chunks()
    spec = B.fit_fast(chunks, quant_scale=1e6, merge_budget=64)
    chunk = chunks[0]
    back = B.fast_detokenize(B.fast_tokenize(chunk, spec), spec)
    assert np.mean((back - chunk) ** 2) < 1e-9


def test_fast_roundtrip_equals_no_bpe_roundtrip():
    chunks = smooth_chunks(seed=8)
    spec = B.fit_fast(chunks, quant_scale=50.0, merge_budget=128)
    for chunk in chunks[:5]:
        via_bpe = B.fast_detokenize(B.fast_tokenize(chunk, spec), spec)
        ints = np.round(B.dct_forward(chunk) * spec.quant_scale).astype(np.int64)
        base = np.clip(ints.T.reshape(-1) - spec.offset, 0, spec.base_vocab - 1)
        direct = B.dct_inverse((base.reshape(spec.dims, spec.horizon).T + spec.offset)
                               / spec.quant_scale)
        np.testing.assert_allclose(via_bpe, direct, atol=1e-12)


def test_fast_rounding_error_bound():
    # Parseval: coefficient-space rounding error maps exactly to signal space
    chunks = smooth_chunks(seed=9)
    scale = 20.0
    spec = B.fit_fast(chunks, quant_scale=scale, merge_budget=64)
    chunk = chunks[1]
    back = B.fast_detokenize(B.fast_tokenize(chunk, spec), spec)
    mse = np.mean((back - chunk) ** 2)
    assert mse <= (0.5 / scale) ** 2 + 1e-12


def test_fast_variable_length_tokens():
    chunks = smooth_chunks(n=40, seed=10)
    spec = B.fit_fast(chunks, quant_scale=30.0, merge_budget=256)
    lengths = {len(B.fast_tokenize(c, spec)) for c in chunks}
    assert len(lengths) > 1  # variable-length, unlike the fixed-L tokenizer


def test_fast_shape_mismatch_rejected():
    chunks = smooth_chunks(n=5, seed=11)
    spec = B.fit_fast(chunks, quant_scale=10.0, merge_budget=16)
    with pytest.raises(B.BaselineError):
        B.fast_tokenize(np.zeros((8, 3)), spec)
