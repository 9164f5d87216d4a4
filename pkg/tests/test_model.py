"""Encoder classifier: config, attention, blocks, head, checkpoints."""

import numpy as np
import pytest

import bucketformer.autodiff as ad
from bucketformer.model import (
    BlockParams,
    CheckpointError,
    ConfigError,
    EncoderClassifier,
    ModelConfig,
    attention_head,
    class_logits,
    encoder_block,
    feed_forward,
    forward,
    init,
    load_checkpoint,
    multi_head,
    predict_proba,
    save_checkpoint,
)

BASE = ModelConfig()
SMALL = ModelConfig(seq_len=8, d_model=4, num_heads=2, head_size=3, num_blocks=1, ff_dim=6)


def test_config_defaults_resolve():
    assert BASE.d_model == 16
    assert BASE.ff_dim == 64
    assert BASE.mlp_units == (10,)
    assert ModelConfig(seq_len=64).d_model == 32
    assert ModelConfig(seq_len=64).ff_dim == 128
    assert ModelConfig(d_model=20).ff_dim == 80


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(seq_len=0)
    with pytest.raises(ConfigError):
        ModelConfig(n_classes=1)
    with pytest.raises(ConfigError):
        ModelConfig(dropout=1.0)
    with pytest.raises(ConfigError):
        ModelConfig(mlp_units=(0,))
    with pytest.raises(ConfigError):
        ModelConfig(norm_placement="mid")
    with pytest.raises(ConfigError):
        ModelConfig(layernorm_epsilon=0.0)


def test_param_count_closed_form():
    # per block: 3 projections d->8*64 with bias, output 512->d with bias,
    # two norm pairs of length d, ff d->64->d with biases
    d = 16
    width = 512
    block = 3 * (d * width + width) + width * d + d + 4 * d + d * 64 + 64 + 64 * d + d
    head = 32 * 10 + 10 + 10 * 7 + 7
    assert init(BASE, 0).param_count() == 6 * block + head == 219479


def test_init_deterministic():
    a = init(BASE, seed=11)
    b = init(BASE, seed=11)
    c = init(BASE, seed=12)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.name == pb.name
        assert np.array_equal(pa.value, pb.value)
    assert any(
        not np.array_equal(pa.value, pc.value)
        for pa, pc in zip(a.parameters(), c.parameters())
    )


def test_init_bias_and_norm_values():
    model = init(SMALL, 3)
    by_name = {p.name: p.value for p in model.parameters()}
    assert np.all(by_name["block0.bq"] == 0)
    assert np.all(by_name["block0.ln1_gamma"] == 1)
    assert np.all(by_name["block0.ln2_beta"] == 0)
    assert np.all(by_name["head.out_b"] == 0)
    wq = by_name["block0.wq"]
    limit = np.sqrt(6.0 / (4 + 6))
    assert np.abs(wq).max() <= limit
    assert wq.std() == pytest.approx(limit / np.sqrt(3), rel=0.2)


def test_attention_single_row_is_certain():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(1, 4))
    A, AV = attention_head(X, rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), rng.normal(size=(4, 5)))
    assert A.shape == (1, 1) and A[0, 0] == pytest.approx(1.0)
    assert AV == pytest.approx(X @ np.zeros((4, 5)) + AV)  # shape check (1, 5)


def test_attention_zero_query_uniform_rows():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(6, 4))
    A, _ = attention_head(X, np.zeros((4, 3)), rng.normal(size=(4, 3)), rng.normal(size=(4, 4)))
    assert np.allclose(A, 1.0 / 6.0, atol=1e-15)


def test_attention_hand_case():
    X = np.array([[1.0], [0.0]])
    w = np.array([[1.0]])
    A, AV = attention_head(X, w, w, w)
    e = np.exp(1.0)
    expected_row1 = np.array([e, 1.0]) / (e + 1.0)
    assert A[0] == pytest.approx([0.7311, 0.2689], abs=5e-5)
    assert A[0] == pytest.approx(expected_row1, rel=1e-12)
    assert A[1] == pytest.approx([0.5, 0.5], rel=1e-12)
    assert AV == pytest.approx(A @ X, rel=1e-12)


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(12, 5))
    A, _ = attention_head(X, rng.normal(size=(5, 4)), rng.normal(size=(5, 4)), rng.normal(size=(5, 2)))
    assert A.sum(axis=1) == pytest.approx(np.ones(12), abs=1e-12)
    assert np.all(A > 0)


def _zero_biases(model: EncoderClassifier) -> None:
    for p in model.parameters():
        if p.name.endswith(("bq", "bk", "bv", "bo")):
            p.value = np.zeros_like(p.value)


def test_multi_head_matches_per_head_reference():
    model = init(SMALL, 7)
    _zero_biases(model)
    bp = model.blocks[0]
    rng = np.random.default_rng(3)
    X = rng.normal(size=(8, 4))
    got = multi_head(ad.constant(X), bp, 2, 3).value
    hs = 3
    heads = []
    for h in range(2):
        sl = slice(h * hs, (h + 1) * hs)
        _, av = attention_head(X, bp.wq.value[:, sl], bp.wk.value[:, sl], bp.wv.value[:, sl])
        heads.append(av)
    expected = np.concatenate(heads, axis=1) @ bp.wo.value + bp.bo.value
    assert np.allclose(got, expected, atol=1e-12)


def test_multi_head_zero_output_projection():
    model = init(SMALL, 5)
    bp = model.blocks[0]
    bp.wo.value = np.zeros_like(bp.wo.value)
    bp.bo.value = np.zeros_like(bp.bo.value)
    X = np.random.default_rng(4).normal(size=(8, 4))
    assert np.all(multi_head(ad.constant(X), bp, 2, 3).value == 0.0)


def test_multi_head_preserves_shape_with_batch():
    model = init(SMALL, 6)
    X = np.random.default_rng(5).normal(size=(3, 8, 4))
    out = multi_head(ad.constant(X), model.blocks[0], 2, 3)
    assert out.shape == (3, 8, 4)


def test_feed_forward_zero_fixed_point_and_permutation():
    model = init(SMALL, 8)
    bp = model.blocks[0]
    assert np.all(feed_forward(ad.constant(np.zeros((8, 4))), bp).value == 0.0)
    rng = np.random.default_rng(6)
    X = rng.normal(size=(8, 4))
    out = feed_forward(ad.constant(X), bp).value
    perm = rng.permutation(8)
    out_perm = feed_forward(ad.constant(X[perm]), bp).value
    assert np.allclose(out_perm, out[perm], atol=1e-14)


def test_encoder_block_preserves_shape_both_placements():
    for placement in ("pre", "post"):
        cfg = ModelConfig(
            seq_len=8, d_model=4, num_heads=2, head_size=3, num_blocks=1,
            ff_dim=6, norm_placement=placement,
        )
        model = init(cfg, 9)
        X = np.random.default_rng(7).normal(size=(5, 8, 4))
        out = encoder_block(ad.constant(X), model.blocks[0], cfg, "infer", None)
        assert out.shape == (5, 8, 4)


def test_pre_norm_keeps_stream_offset():
    # the feed-forward residual adds the unnormalised stream, so adding a
    # constant feature offset to the block input shifts the output by the
    # same offset plus whatever the (offset-invariant) sublayers produce
    cfg = SMALL
    model = init(cfg, 10)
    rng = np.random.default_rng(8)
    X = rng.normal(size=(8, 4))
    base = encoder_block(ad.constant(X), model.blocks[0], cfg, "infer", None).value
    shifted = encoder_block(ad.constant(X + 3.0), model.blocks[0], cfg, "infer", None).value
    # layer norm removes the offset inside both sublayers; the residual path
    # carries it through unchanged
    assert np.allclose(shifted - base, 3.0, atol=1e-9)


def test_placements_differ():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(8, 4))
    pre = init(SMALL, 12)
    post_cfg = ModelConfig(
        seq_len=8, d_model=4, num_heads=2, head_size=3, num_blocks=1,
        ff_dim=6, norm_placement="post",
    )
    post = init(post_cfg, 12)
    a = encoder_block(ad.constant(X), pre.blocks[0], SMALL, "infer", None).value
    b = encoder_block(ad.constant(X), post.blocks[0], post_cfg, "infer", None).value
    assert not np.allclose(a, b, atol=1e-6)


def test_forward_probability_rows():
    model = init(SMALL, 13)
    X = np.random.default_rng(9).normal(size=(8, 4))
    probs = forward(model, X)
    assert probs.shape == (7,)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(probs >= 0)
    again = forward(model, X)
    assert np.array_equal(probs, again)


def test_forward_zero_input_is_uniform():
    # zero windows stay zero through every layer at zero-bias init, so the
    # head emits zero logits and exactly uniform probabilities
    model = init(BASE, 14)
    probs = forward(model, np.zeros((32, 16)))
    assert np.allclose(probs, 1.0 / 7.0, atol=1e-15)


def test_forward_train_mode_requires_rng():
    model = init(SMALL, 15)
    with pytest.raises(ValueError):
        forward(model, np.zeros((8, 4)), mode="train")


def test_dropout_free_train_equals_infer():
    cfg = ModelConfig(
        seq_len=8, d_model=4, num_heads=2, head_size=3, num_blocks=2,
        ff_dim=6, dropout=0.0, mlp_dropout=0.0,
    )
    model = init(cfg, 16)
    X = np.random.default_rng(10).normal(size=(8, 4))
    a = forward(model, X, mode="infer")
    b = forward(model, X, mode="train", rng=np.random.default_rng(0))
    assert np.array_equal(a, b)


def test_train_mode_dropout_changes_output():
    model = init(SMALL, 17)
    X = np.random.default_rng(12).normal(size=(8, 4))
    a = forward(model, X, mode="train", rng=np.random.default_rng(1))
    b = forward(model, X, mode="infer")
    assert not np.array_equal(a, b)


def test_class_logits_rejects_bad_shape():
    model = init(SMALL, 18)
    with pytest.raises(ad.ShapeError):
        class_logits(model, ad.constant(np.zeros((4, 8))), "infer", None)
    with pytest.raises(ad.ShapeError):
        class_logits(model, ad.constant(np.zeros((8, 5))), "infer", None)


def test_predict_proba_chunking_matches_single_pass():
    model = init(SMALL, 19)
    X = np.random.default_rng(13).normal(size=(10, 8, 4))
    whole = predict_proba(model, X, batch_size=10)
    chunked = predict_proba(model, X, batch_size=3)
    # equal chunking is bitwise deterministic; different chunk sizes may
    # differ at ulp level through the BLAS kernels
    assert np.array_equal(whole, predict_proba(model, X, batch_size=10))
    assert np.allclose(whole, chunked, atol=1e-12)
    assert whole.shape == (10, 7)


def test_checkpoint_roundtrip_bitwise(tmp_path):
    model = init(SMALL, 20)
    # make values less structured than init
    for p in model.parameters():
        p.value = p.value + np.random.default_rng(21).normal(size=p.value.shape) * 0.01
    path = tmp_path / "m.bkt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.config == model.config
    for pa, pb in zip(model.parameters(), back.parameters()):
        assert pa.name == pb.name
        assert np.array_equal(pa.value, pb.value)
    X = np.random.default_rng(22).normal(size=(8, 4))
    assert np.array_equal(forward(model, X), forward(back, X))


def test_checkpoint_expected_config_mismatch(tmp_path):
    model = init(SMALL, 23)
    path = tmp_path / "m.bkt"
    save_checkpoint(model, path)
    load_checkpoint(path, expected_config=SMALL)  # matching config passes
    with pytest.raises(CheckpointError, match="does not match"):
        load_checkpoint(path, expected_config=BASE)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "m.bkt"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_bad_version(tmp_path):
    model = init(SMALL, 24)
    path = tmp_path / "m.bkt"
    save_checkpoint(model, path)
    data = bytearray(path.read_bytes())
    data[4] = 99
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_checkpoint_truncation(tmp_path):
    model = init(SMALL, 25)
    path = tmp_path / "m.bkt"
    save_checkpoint(model, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 17])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_checkpoint_trailing_bytes(tmp_path):
    model = init(SMALL, 26)
    path = tmp_path / "m.bkt"
    save_checkpoint(model, path)
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_block_params_all_order():
    model = init(SMALL, 27)
    names = [p.name for p in model.blocks[0].all()]
    assert names == [
        "block0.wq", "block0.bq", "block0.wk", "block0.bk",
        "block0.wv", "block0.bv", "block0.wo", "block0.bo",
        "block0.ln1_gamma", "block0.ln1_beta", "block0.ln2_gamma", "block0.ln2_beta",
        "block0.f1_w", "block0.f1_b", "block0.f2_w", "block0.f2_b",
    ]
    assert isinstance(model.blocks[0], BlockParams)
