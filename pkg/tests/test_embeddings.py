"""Patch extraction, sinusoidal and time-aware positional encodings."""

import numpy as np

from lmae.embeddings import (
    patchify,
    sinusoidal_encoding,
    sinusoidal_table,
    standardize_pixels,
    temporal_encoding_rows,
    time_aware_init,
    unpatchify,
    validate_times,
    add_time_aware_params,
)
from lmae.params import ParamStore
from lmae.tensor import Tensor


def test_patchify_unpatchify_roundtrip():
    rng = np.random.default_rng(0)
    for size, p, c in ((8, 4, 1), (16, 4, 1), (32, 8, 3)):
        frame = rng.random((size, size, c))
        tokens = patchify(frame, p)
        q = size // p
        assert tokens.shape == (q * q, p * p * c)
        assert np.array_equal(unpatchify(tokens, size, p, c), frame)


def test_patchify_token_order_row_major():
    # pixel (i, j) lands in patch (i//P, j//P) at offset (i%P, j%P)
    size, p = 8, 4
    frame = np.arange(size * size, dtype=np.float64).reshape(size, size, 1)
    tokens = patchify(frame, p)
    assert tokens[0, 0] == frame[0, 0, 0]
    assert tokens[1, 0] == frame[0, 4, 0]  # second patch starts at column 4
    assert tokens[2, 0] == frame[4, 0, 0]  # third patch starts at row 4
    assert tokens[0, 1] == frame[0, 1, 0]  # second pixel within a patch
    assert tokens[0, p] == frame[1, 0, 0]  # next pixel row within a patch


def test_patchify_input_validation():
    try:
        patchify(np.zeros((8, 8)), 4)
        assert False, "expected ValueError for missing channel axis"
    except ValueError:
        pass
    try:
        patchify(np.zeros((8, 6, 1)), 2)
        assert False, "expected ValueError for non-square frame"
    except ValueError:
        pass
    try:
        patchify(np.zeros((8, 8, 1)), 3)
        assert False, "expected ValueError for indivisible patch size"
    except ValueError:
        pass


def test_standardize_pixels_affine():
    x = np.array([0.0, 0.5, 1.0])
    assert np.allclose(standardize_pixels(x), [-2.0, 0.0, 2.0])


def test_sinusoidal_position_zero():
    for dim in (2, 4, 16, 64):
        enc = sinusoidal_encoding(0, dim)
        expect = np.zeros(dim)
        expect[1::2] = 1.0
        assert np.array_equal(enc, expect)


def test_sinusoidal_k1_d4_hand_values():
    # omega_0 = 1, omega_1 = 10000^(-1/2) = 0.01
    enc = sinusoidal_encoding(1, 4)
    expect = np.array([np.sin(1.0), np.cos(1.0), np.sin(0.01), np.cos(0.01)])
    assert np.max(np.abs(enc - expect)) < 1e-5


def test_sinusoidal_table_rows():
    table = sinusoidal_table(5, 8)
    assert table.shape == (5, 8)
    for k in range(5):
        assert np.array_equal(table[k], sinusoidal_encoding(k, 8))


def test_sinusoidal_odd_dim_rejected():
    try:
        sinusoidal_encoding(0, 3)
        assert False, "expected ValueError"
    except ValueError:
        pass


def test_time_aware_init_matches_sinusoidal_at_zero():
    # cos(0 + tau) with tau = pi/2 on even slots, 0 on odd = [0, 1, 0, 1, ...]
    omega, tau = time_aware_init(8)
    enc = np.cos(omega * 0.0 + tau)
    assert np.allclose(enc, sinusoidal_encoding(0, 8), atol=1e-15)
    # frequency ladder repeats in pairs
    assert omega[0] == omega[1] == 1.0
    assert np.allclose(omega[2], omega[3])


def test_time_aware_shift_invariance_exact():
    store = ParamStore(dtype=np.float64)
    add_time_aware_params(store, "temporal", 16)
    times = np.array([0.0, 1.5, 4.0])
    for delta in (0.0, 2.25, 1000.0):
        rows_a = temporal_encoding_rows(store, "temporal", "time_aware", times, 16)
        rows_b = temporal_encoding_rows(store, "temporal", "time_aware", times + delta, 16)
        assert np.array_equal(rows_a.data, rows_b.data)


def test_time_aware_rows_use_learnable_params():
    store = ParamStore(dtype=np.float64)
    add_time_aware_params(store, "temporal", 4)
    times = np.array([0.0, 2.0])
    rows = temporal_encoding_rows(store, "temporal", "time_aware", times, 4)
    assert isinstance(rows, Tensor)
    omega = store["temporal.omega"].value
    tau = store["temporal.tau"].value
    assert np.allclose(rows.data, np.cos(omega * np.array([[0.0], [2.0]]) + tau))
    # perturbing omega changes the encoding of the later visit only
    store["temporal.omega"].value = omega + 0.1
    rows2 = temporal_encoding_rows(store, "temporal", "time_aware", times, 4)
    assert np.array_equal(rows2.data[0], rows.data[0])
    assert not np.array_equal(rows2.data[1], rows.data[1])


def test_temporal_variants():
    store = ParamStore(dtype=np.float64)
    add_time_aware_params(store, "temporal", 6)
    times = np.array([0.0, 1.0, 2.0])
    assert temporal_encoding_rows(store, "temporal", "empty", times, 6) is None
    base = temporal_encoding_rows(store, "temporal", "base", times, 6)
    assert isinstance(base, np.ndarray)
    assert np.array_equal(base, sinusoidal_table(3, 6))
    try:
        temporal_encoding_rows(store, "temporal", "nope", times, 6)
        assert False, "expected ValueError"
    except ValueError:
        pass


def test_base_variant_ignores_times():
    store = ParamStore(dtype=np.float64)
    a = temporal_encoding_rows(store, "temporal", "base", np.array([0.0, 0.3]), 4)
    b = temporal_encoding_rows(store, "temporal", "base", np.array([5.0, 9.7]), 4)
    assert np.array_equal(a, b)


def test_validate_times():
    out = validate_times([0.0, 1.0, 1.0, 2.5], 4)
    assert out.dtype == np.float64
    try:
        validate_times([0.0, 1.0], 3)
        assert False, "expected ValueError for wrong length"
    except ValueError:
        pass
    try:
        validate_times([1.0, 0.5], 2)
        assert False, "expected ValueError for decreasing times"
    except ValueError:
        pass
