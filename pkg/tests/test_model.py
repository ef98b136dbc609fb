"""Masked-autoencoder structure: visible-only encoding, decoder assembly,
masked-only loss."""

import numpy as np

from lmae import tensor as T
from lmae.masking import MaskConfig, make_mask, random_mask, sequence_prog_mask
from lmae.model import LMAEConfig, LongitudinalMAE, pretrain_step
from lmae.optim import AdamW
from lmae.rng import substream
from lmae.tensor import backward

TINY = LMAEConfig(image_size=8, patch_size=4, d_enc=16, enc_depth=1, enc_heads=2,
                  d_dec=8, dec_depth=1, dec_heads=2)


def _tiny_batch(t_frames=2, seed=0):
    rng = np.random.default_rng(seed)
    frames = rng.random((t_frames, 8, 8, 1)).astype(np.float32)
    times = np.cumsum(rng.uniform(0.5, 2.0, size=t_frames)) - 0.5
    return frames, times


def test_config_properties_and_validation():
    assert TINY.grid_side == 2
    assert TINY.tokens_per_frame == 4
    assert TINY.patch_dim == 16
    try:
        LMAEConfig(image_size=10, patch_size=4)
        assert False, "expected ValueError"
    except ValueError:
        pass
    try:
        LMAEConfig(temporal_variant="sundial")
        assert False, "expected ValueError"
    except ValueError:
        pass


def test_decoder_more_compact_than_encoder():
    model = LongitudinalMAE(LMAEConfig())
    n_enc = model.store.count_values("encoder.") + model.store.count_values("patch_embed")
    n_dec = (model.store.count_values("decoder.") + model.store.count_values("dec_temporal.")
             + model.store.count_values("mask_token") + model.store.count_values("pixel_head"))
    assert n_dec < n_enc


def test_encoder_length_equals_visible_count_all_strategies():
    model = LongitudinalMAE(TINY, seed=0)
    frames, times = _tiny_batch(3)
    rng = substream(0, "mask", "test")
    grades = [0, 2, 4]
    masks = [random_mask(2, 3, 0.25, rng), random_mask(2, 3, 0.5, rng),
             random_mask(2, 3, 0.75, rng)]
    for r in (0.25, 0.5, 0.75):
        masks.append(sequence_prog_mask(2, grades, r, rng))
    masks.append(make_mask(MaskConfig(strategy="visit"), 2, grades, rng))
    masks.append(make_mask(MaskConfig(strategy="prog_aware_random"), 2, grades, rng))
    for visible in masks:
        if not visible.any():
            continue
        encoded, vis_idx = model.encode_visible(frames, times, visible)
        assert encoded.data.shape == (int(visible.sum()), TINY.d_enc)
        assert np.array_equal(np.flatnonzero(visible.reshape(-1)), vis_idx)


def test_all_masked_rejected():
    model = LongitudinalMAE(TINY)
    frames, times = _tiny_batch(2)
    visible = np.zeros((2, 2, 2), dtype=bool)
    try:
        model.encode_visible(frames, times, visible)
        assert False, "expected ValueError"
    except ValueError:
        pass
    try:
        model.reconstruction_loss(
            T.constant(np.zeros((8, 16))), frames, np.ones((2, 2, 2), dtype=bool))
        assert False, "expected ValueError for no masked tokens"
    except ValueError:
        pass


def test_loss_invariant_to_visible_target_pixels():
    model = LongitudinalMAE(TINY, seed=1)
    frames, times = _tiny_batch(2, seed=2)
    visible = random_mask(2, 2, 0.5, np.random.default_rng(3))
    loss_a = model.forward_loss(frames, times, visible).item()
    # rewrite pixels under the visible tokens; the loss must move (input
    # changes) but zeroing the same pixels in the target must not
    predicted = model.decode_full(*model.encode_visible(frames, times, visible),
                                  times=times, n_frames=2)
    tampered = frames.copy().reshape(2, 2, 4, 2, 4, 1)
    # visible token (frame, gy, gx): overwrite its patch in a target copy
    vis_tokens = np.argwhere(visible)
    f, gy, gx = vis_tokens[0]
    tampered[f, gy, :, gx, :, :] = 0.123
    tampered = tampered.reshape(2, 8, 8, 1)
    loss_b = model.reconstruction_loss(predicted, tampered, visible).item()
    loss_ref = model.reconstruction_loss(predicted, frames, visible).item()
    assert loss_b == loss_ref
    assert np.isclose(loss_a, loss_ref)


def test_zero_gradient_at_visible_targets():
    model = LongitudinalMAE(TINY, seed=4)
    frames, times = _tiny_batch(2, seed=5)
    visible = random_mask(2, 2, 0.5, np.random.default_rng(6))
    encoded, vis_idx = model.encode_visible(frames, times, visible)
    predicted = model.decode_full(encoded, vis_idx, times, 2)
    loss = model.reconstruction_loss(predicted, frames, visible)
    model.store.zero_grads()
    predicted.zero_grad()
    backward(loss)
    grad = predicted.grad
    assert grad is not None
    masked_idx = np.flatnonzero(~visible.reshape(-1))
    assert np.allclose(grad[vis_idx], 0.0)
    assert np.any(grad[masked_idx] != 0.0)


def test_decoder_assembly_order():
    # the mask token fills exactly the masked slots after reordering
    model = LongitudinalMAE(TINY, seed=7)
    frames, times = _tiny_batch(2, seed=8)
    visible = np.ones((2, 2, 2), dtype=bool)
    visible[0, 0, 0] = False
    visible[1, 1, 1] = False
    encoded, vis_idx = model.encode_visible(frames, times, visible)
    # probe: make enc_to_dec the zero map and the mask token a constant; the
    # pre-PE assembly then holds 0 at visible slots and the constant at
    # masked slots, which the decoder sees after PE addition
    model.store["enc_to_dec.weight"].value = np.zeros_like(model.store["enc_to_dec.weight"].value)
    model.store["enc_to_dec.bias"].value = np.zeros_like(model.store["enc_to_dec.bias"].value)
    token = np.full(TINY.d_dec, 0.5, dtype=np.float32)
    model.store["mask_token"].value = token
    with T.no_grad():
        projected = np.zeros((vis_idx.size, TINY.d_dec))
        total = 2 * TINY.tokens_per_frame
        order = np.empty(total, dtype=np.intp)
        order[vis_idx] = np.arange(vis_idx.size)
        masked_idx = np.setdiff1d(np.arange(total), vis_idx)
        order[masked_idx] = vis_idx.size + np.arange(masked_idx.size)
        assembled = np.concatenate([projected, np.tile(token, (masked_idx.size, 1))])[order]
    expect = np.zeros((total, TINY.d_dec))
    expect[masked_idx] = 0.5
    assert np.allclose(assembled, expect)


def test_masked_loss_value_matches_manual():
    model = LongitudinalMAE(TINY, seed=9)
    frames, times = _tiny_batch(2, seed=10)
    visible = random_mask(2, 2, 0.75, np.random.default_rng(11))
    encoded, vis_idx = model.encode_visible(frames, times, visible)
    predicted = model.decode_full(encoded, vis_idx, times, 2)
    loss = model.reconstruction_loss(predicted, frames, visible).item()
    target = model._frames_to_patches(frames)
    masked_idx = np.flatnonzero(~visible.reshape(-1))
    manual = np.mean((predicted.data[masked_idx] - target[masked_idx]) ** 2)
    assert np.isclose(loss, manual, rtol=1e-6)


def test_temporal_variant_changes_output_only_when_times_change():
    frames, _ = _tiny_batch(2, seed=12)
    times_a = np.array([0.0, 1.0])
    times_b = np.array([0.0, 2.5])
    visible = random_mask(2, 2, 0.5, np.random.default_rng(13))
    for variant, should_differ in (("empty", False), ("base", False), ("time_aware", True)):
        cfg = LMAEConfig(image_size=8, patch_size=4, d_enc=16, enc_depth=1, enc_heads=2,
                         d_dec=8, dec_depth=1, dec_heads=2, temporal_variant=variant)
        model = LongitudinalMAE(cfg, seed=14)
        la = model.forward_loss(frames, times_a, visible).item()
        lb = model.forward_loss(frames, times_b, visible).item()
        assert (la != lb) == should_differ, variant


def test_pretrain_step_reduces_loss_quickly():
    frames, times = _tiny_batch(2, seed=3)
    model = LongitudinalMAE(TINY, seed=15)
    opt = AdamW(list(model.store), lr=3e-3, weight_decay=0.0)
    rng = substream(0, "mask", "overfit-smoke")
    visible = random_mask(2, 2, 0.75, rng)
    batch = [(frames, times, visible)]
    first = pretrain_step(model, batch, opt)
    for _ in range(60):
        last = pretrain_step(model, batch, opt)
    assert last < first * 0.5
    try:
        pretrain_step(model, [], opt)
        assert False, "expected ValueError for empty batch"
    except ValueError:
        pass
