"""Attention model contracts: component shapes, fusion algebra, training rules."""

import numpy as np
import numpy.testing as npt
import pytest

from fakebeat import autodiff as ad
from fakebeat import model as mdl
from fakebeat import train as tr


def toy_model(n_blocks=8, seq_len=None, seed=0, **kw):
    args = dict(n_blocks=n_blocks, channels=3, atten_kernels=8, atten_extent=5,
                lstm_hidden=4, classifier_width=4, meso_input=64, seed=seed)
    args.update(kw)
    return mdl.DualAttentionModel(seq_len=seq_len, **args)


def rand_map(t, n, c=3, seed=0):
    return np.random.default_rng(seed).random((t, n, c)).astype(np.float32)


# ---------------------------------------------------------------------------
# adaptive spatial attention


@pytest.mark.parametrize("n", [9, 25, 49])
def test_spatial_attention_output_length(n):
    net = mdl.SpatialAttentionNet(kernels=8, extent=5, rng=np.random.default_rng(1))
    x = ad.Tensor(np.random.default_rng(0).random((2, 3, 20, n)).astype(np.float32))
    out = net.forward(x, train=False)
    assert out.shape == (2, n)
    assert (out.data > 0).all() and (out.data < 1).all()


def test_spatial_attention_constant_input_uniform():
    net = mdl.SpatialAttentionNet(kernels=8, extent=5, rng=np.random.default_rng(1))
    x = ad.Tensor(np.full((1, 3, 20, 6), 0.3, dtype=np.float32))
    out = net.forward(x, train=False).data[0]
    npt.assert_allclose(out, out[0], atol=1e-6)


def test_spatial_attention_permutation_equivariant():
    net = mdl.SpatialAttentionNet(kernels=8, extent=5, rng=np.random.default_rng(1))
    x = np.random.default_rng(3).random((1, 3, 20, 7)).astype(np.float32)
    perm = np.random.default_rng(4).permutation(7)
    out = net.forward(ad.Tensor(x), train=False).data[0]
    out_perm = net.forward(ad.Tensor(x[:, :, :, perm]), train=False).data[0]
    npt.assert_allclose(out_perm, out[perm], atol=1e-6)


def test_spatial_attention_short_series_errors():
    net = mdl.SpatialAttentionNet(kernels=8, extent=15, rng=np.random.default_rng(1))
    x = ad.Tensor(np.zeros((1, 3, 10, 6), dtype=np.float32))
    with pytest.raises(ValueError, match="kernel extent"):
        net.forward(x, train=False)


# ---------------------------------------------------------------------------
# block temporal attention


def test_temporal_attention_length_and_range():
    net = mdl.BlockTemporalNet(input_dim=6 * 3, hidden=4, rng=np.random.default_rng(2))
    x = np.random.default_rng(0).random((2, 13, 6, 3)).astype(np.float32)
    out = net.forward(x)
    assert out.shape == (2, 13)
    assert (out.data > 0).all() and (out.data < 1).all()


def test_temporal_attention_zero_params_give_half():
    net = mdl.BlockTemporalNet(input_dim=18, hidden=4, rng=np.random.default_rng(2))
    for p in net.params.values():
        p.data = np.zeros_like(p.data)
    x = np.random.default_rng(0).random((1, 9, 6, 3)).astype(np.float32)
    npt.assert_allclose(net.forward(x).data, 0.5, atol=1e-7)


def test_temporal_attention_causal():
    net = mdl.BlockTemporalNet(input_dim=18, hidden=4, rng=np.random.default_rng(2))
    rng = np.random.default_rng(1)
    x1 = rng.random((1, 12, 6, 3)).astype(np.float32)
    x2 = x1.copy()
    x2[0, 7:] = rng.random((5, 6, 3)).astype(np.float32)
    o1 = net.forward(x1).data[0]
    o2 = net.forward(x2).data[0]
    npt.assert_array_equal(o1[:7], o2[:7])
    assert not np.array_equal(o1[7:], o2[7:])


def test_temporal_attention_block_major_variant():
    net = mdl.BlockTemporalNet(input_dim=12 * 3, hidden=4, rng=np.random.default_rng(2),
                               block_major=True, seq_len=12)
    x = np.random.default_rng(0).random((2, 12, 6, 3)).astype(np.float32)
    out = net.forward(x)
    assert out.shape == (2, 12)
    with pytest.raises(ValueError, match="configured T"):
        net.forward(np.random.default_rng(0).random((2, 9, 6, 3)).astype(np.float32))


# ---------------------------------------------------------------------------
# frame scorer


def test_frame_scorer_per_frame_independence():
    scorer = mdl.FrameScorer(input_size=64, rng=np.random.default_rng(3))
    frame = np.random.default_rng(0).random((1, 3, 64, 64)).astype(np.float32)
    batch = np.concatenate([frame, frame], axis=0)
    scores = scorer.score_frames(batch)
    assert scores[0] == scores[1]
    assert 0.0 < scores[0] < 1.0


def test_frame_scorer_range_random_params():
    scorer = mdl.FrameScorer(input_size=64, rng=np.random.default_rng(9))
    frames = np.random.default_rng(1).random((5, 3, 64, 64)).astype(np.float32)
    scores = scorer.score_frames(frames)
    assert ((scores > 0) & (scores < 1)).all()


def test_frame_scorer_bad_size():
    with pytest.raises(ValueError, match="divisible by 32"):
        mdl.FrameScorer(input_size=50)


# ---------------------------------------------------------------------------
# fusion / application / classification


def test_fuse_attention_identity_cases():
    s_p = np.zeros(8, dtype=np.float32)
    s_a = np.random.default_rng(0).random(8).astype(np.float32)
    s, t = mdl.fuse_attention(s_p, s_a, np.full(5, 0.5), np.full(5, 0.5))
    npt.assert_array_equal(s, s_a)
    npt.assert_allclose(t, 1.0)


def test_fuse_attention_matches_elementwise_sum():
    rng = np.random.default_rng(5)
    s_p, s_a = rng.random(9), rng.random(9)
    t_b, t_f = rng.random(7), rng.random(7)
    s, t = mdl.fuse_attention(s_p, s_a, t_b, t_f)
    npt.assert_array_equal(s, np.array([s_a[i] + s_p[i] for i in range(9)]))
    npt.assert_array_equal(t, np.array([t_b[i] + t_f[i] for i in range(7)]))


def test_fuse_attention_length_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        mdl.fuse_attention(np.zeros(3), np.zeros(4), np.zeros(5), np.zeros(5))


def test_apply_attention_identity_and_zero():
    x = rand_map(4, 5)
    npt.assert_array_equal(mdl.apply_attention(x, np.ones(5), np.ones(4)), x)
    npt.assert_array_equal(mdl.apply_attention(x, np.ones(5), np.zeros(4)), 0.0)


def test_apply_attention_matches_triple_loop():
    rng = np.random.default_rng(2)
    x = rng.random((3, 2, 3)).astype(np.float32)
    t, s = rng.random(3).astype(np.float32), rng.random(2).astype(np.float32)
    got = mdl.apply_attention(x, s, t)
    want = np.empty_like(x)
    for i in range(3):
        for n in range(2):
            for c in range(3):
                want[i, n, c] = (t[i] * s[n]) * x[i, n, c]
    npt.assert_allclose(got, want, atol=1e-7)


def test_apply_attention_rank_one_and_bit_exact_vs_materialized():
    rng = np.random.default_rng(7)
    for _ in range(20):
        t_len = int(rng.integers(2, 13))
        n_len = int(rng.integers(2, 10))
        x = rng.random((t_len, n_len, 3)).astype(np.float32)
        t = rng.random(t_len).astype(np.float32)
        s = rng.random(n_len).astype(np.float32)
        a = np.outer(t, s).astype(np.float32)
        # exhaustive rank-1 structure: every entry is the factor product
        for i in range(t_len):
            for n in range(n_len):
                assert a[i, n] == np.float32(t[i]) * np.float32(s[n])
        via_op = mdl.apply_attention(x, s, t)
        via_matrix = a[:, :, None] * x
        assert np.array_equal(via_op, via_matrix)


def test_apply_attention_channel_permutation_commutes():
    rng = np.random.default_rng(8)
    x = rng.random((5, 4, 3)).astype(np.float32)
    t, s = rng.random(5).astype(np.float32), rng.random(4).astype(np.float32)
    perm = [2, 0, 1]
    npt.assert_array_equal(mdl.apply_attention(x[:, :, perm], s, t),
                           mdl.apply_attention(x, s, t)[:, :, perm])


def test_classify_zero_head_gives_half():
    m = toy_model()
    m.classifier.params["fc_w"].data[:] = 0.0
    m.classifier.params["fc_b"].data[:] = 0.0
    pred = mdl.classify(rand_map(16, 8), m.classifier)
    assert pred.p_fake == pytest.approx(0.5)
    assert pred.label == "real"  # tie goes to real


def test_prediction_threshold():
    assert mdl.Prediction(0.7).label == "fake"
    assert mdl.Prediction(0.5).label == "real"
    assert mdl.Prediction(0.2).label == "real"


def test_attention_bundle_invariants():
    s_p = np.zeros(8, dtype=np.float32)
    s_p[:6] = 1.0
    rng = np.random.default_rng(0)
    s_a = rng.uniform(0.1, 0.9, 8)
    t_b = rng.uniform(0.1, 0.9, 5)
    t_f = rng.uniform(0.1, 0.9, 5)
    bundle = mdl.make_attention_bundle(s_p, s_a, t_b, t_f)
    npt.assert_array_equal(bundle.s, s_a + s_p)
    with pytest.raises(ValueError, match="six ones"):
        mdl.make_attention_bundle(np.zeros(8), s_a, t_b, t_f)
    with pytest.raises(ValueError, match="inside"):
        mdl.make_attention_bundle(s_p, np.ones(8), t_b, t_f)


# ---------------------------------------------------------------------------
# assembled forward


def test_batch_logits_flag_combinations():
    m = toy_model()
    maps = np.random.default_rng(0).random((2, 20, 8, 3)).astype(np.float32)
    s_p = np.zeros((2, 8), dtype=np.float32)
    s_p[:, :6] = 1.0
    t_f = np.full((2, 20), 0.4, dtype=np.float32)
    for flags in ((), ("A",), ("P",), ("B",), ("F",), ("A", "P", "B", "F")):
        out = m.batch_logits(maps, s_p, t_f if "F" in flags else None, flags, train=False)
        assert out.shape == (2, 2)


def test_batch_logits_f_flag_requires_scores():
    m = toy_model()
    maps = np.random.default_rng(0).random((1, 20, 8, 3)).astype(np.float32)
    with pytest.raises(ValueError, match="frame scores"):
        m.batch_logits(maps, np.zeros((1, 8), np.float32), None, ("F",), train=False)


def test_full_loss_grad_check_toy_map():
    # end-to-end differentiability on a 10x8x3 toy map, float64 throughout
    m = toy_model(seed=3)
    for comp in m.components().values():
        for p in comp.params.values():
            p.data = p.data.astype(np.float64)
        for rs in comp.running.values():
            rs.mean = rs.mean.astype(np.float64)
            rs.var = rs.var.astype(np.float64)
    maps = np.random.default_rng(1).random((4, 10, 8, 3))
    s_p = np.zeros((4, 8))
    s_p[:, :6] = 1.0
    t_f = np.random.default_rng(2).uniform(0.2, 0.8, (4, 10))
    labels = np.array([0, 1, 1, 0])
    flags = ("A", "P", "B", "F")
    params = m.named_params(parts=m.trainable_parts(flags))

    def loss_fn(*tensors):
        logits = m.batch_logits(maps, s_p, t_f, flags, train=True)
        return ad.softmax_cross_entropy(logits, labels)

    inputs = list(params.values())
    err = ad.grad_check(loss_fn, inputs, max_coords=8, seed=0)
    assert err < 1e-4, f"stage-2 loss gradient error {err}"


def test_checkpoint_roundtrip(tmp_path):
    m = toy_model(seed=4)
    state = ad.AdamState(lr=0.01, weight_decay=0.05, step_count=3)
    params = m.named_params()
    grads = {k: np.ones_like(t.data) * 0.1 for k, t in params.items()}
    ad.adam_step(params, grads, state)
    mdl.save_checkpoint(tmp_path / "ck.npz", m, state, extra_meta={"note": "test"})
    m2, state2, extra = mdl.load_checkpoint(tmp_path / "ck.npz")
    assert extra == {"note": "test"}
    assert state2.step_count == 4
    for (k1, t1), (k2, t2) in zip(sorted(m.named_params().items()), sorted(m2.named_params().items())):
        assert k1 == k2
        npt.assert_array_equal(t1.data, t2.data)
    maps = np.random.default_rng(0).random((1, 20, 8, 3)).astype(np.float32)
    s_p = np.zeros((1, 8), np.float32)
    out1 = m.batch_logits(maps, s_p, None, ("A", "B"), train=False).data
    out2 = m2.batch_logits(maps, s_p, None, ("A", "B"), train=False).data
    npt.assert_array_equal(out1, out2)


# ---------------------------------------------------------------------------
# training rules


def separable_samples(n=20, t=20, blocks=8, seed=0):
    """Linearly separable toy set: class means differ strongly."""
    rng = np.random.default_rng(seed)
    samples = []
    s_p = np.zeros(blocks, dtype=np.float32)
    s_p[:6] = 1.0
    for i in range(n):
        label = i % 2
        base = 0.35 if label == 0 else 0.65
        values = np.clip(base + rng.normal(0, 0.02, (t, blocks, 3)), 0, 1).astype(np.float32)
        samples.append(tr.VideoSample(source_id=f"v{i}", label=label, values=values,
                                      s_p=s_p, t_f=np.full(t, 0.5, dtype=np.float32)))
    return samples


def test_early_stop_rule():
    assert not tr.should_stop(epoch=50, best_epoch=1, patience=50)
    assert tr.should_stop(epoch=51, best_epoch=1, patience=50)
    assert not tr.should_stop(epoch=51, best_epoch=2, patience=50)


def test_joint_training_learns_separable_toy_set():
    m = toy_model(seed=5)
    samples = separable_samples()
    log = tr.train_joint(m, samples, samples, flags=("A", "P", "B", "F"), lr=1e-3,
                         weight_decay=0.01, max_epochs=60, patience=60, batch_size=8, seed=0)
    metrics = tr.evaluate(m, samples, flags=("A", "P", "B", "F"))
    assert metrics["accuracy"] == 1.0
    assert len(log) <= 60


def test_joint_training_deterministic():
    logs = []
    for _ in range(2):
        m = toy_model(seed=6)
        samples = separable_samples(n=8, t=16)
        log = tr.train_joint(m, samples, samples[:4], flags=("A",), lr=1e-3,
                             weight_decay=0.0, max_epochs=3, patience=10, batch_size=4, seed=1)
        logs.append([(r.epoch, r.train_loss, r.val_loss, r.val_acc) for r in log])
    assert logs[0] == logs[1]


def test_evaluate_constant_half_model_counts_all_real():
    m = toy_model(seed=7)
    m.classifier.params["fc_w"].data[:] = 0.0
    m.classifier.params["fc_b"].data[:] = 0.0
    samples = separable_samples(n=10)
    metrics = tr.evaluate(m, samples, flags=())
    # p_fake = 0.5 everywhere -> every video labeled real
    assert metrics["correct_real"] == metrics["n_real"]
    assert metrics["correct_fake"] == 0
    assert metrics["accuracy"] == metrics["n_real"] / metrics["n_videos"]


def test_training_log_file_appended(tmp_path):
    m = toy_model(seed=8)
    samples = separable_samples(n=6, t=16)
    log_path = tmp_path / "log.csv"
    tr.train_joint(m, samples, samples[:2], flags=(), lr=1e-3, weight_decay=0.0,
                   max_epochs=2, patience=5, batch_size=4, seed=0, log_path=log_path)
    lines = log_path.read_text().strip().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_acc"
    assert len(lines) == 3


def test_frame_scorer_training_separates_textures():
    rng = np.random.default_rng(0)
    clean = rng.uniform(0.4, 0.6, (40, 3, 64, 64)).astype(np.float32)
    noisy = clean + rng.normal(0, 0.15, clean.shape).astype(np.float32)
    x = np.concatenate([clean, np.clip(noisy, 0, 1)])
    y = np.concatenate([np.zeros(40), np.ones(40)])
    scorer = mdl.FrameScorer(input_size=64, rng=np.random.default_rng(1))
    tr.train_frame_scorer(scorer, x, y, x, y, lr=1e-3, weight_decay=0.0,
                          max_epochs=8, patience=8, batch_size=16, seed=0)
    scores = scorer.score_frames(x)
    auc_pairs = (scores[40:][:, None] > scores[:40][None, :]).mean()
    assert auc_pairs > 0.9
