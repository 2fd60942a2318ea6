import numpy as np
import pytest

from gradcheck import check_param_subset, gradients_close, numerical_gradient
from reldepth.binning import info_gain_matrix, make_bins
from reldepth.imagery import DepthMap, Image
from reldepth.losses import infogain_loss, ranking_loss
from reldepth.network import (
    AugmentConfig,
    ChannelNorm,
    Conv2d,
    DepthNet,
    MaxPool2,
    NetConfig,
    ReLU,
    ResidualBlock,
    TrainSchedule,
    finetune_classification,
    finetune_regression,
    l2_regression_loss,
    load_checkpoint,
    map_pairs_to_grid,
    predict_depth,
    predict_relative,
    pretrain_ranking,
    save_checkpoint,
)
from reldepth.ordinal import OrdinalPair

TINY = NetConfig(stage_widths=(3, 4, 5), stage_blocks=(1, 1, 1), stage_strides=(1, 2, 2),
                 head_widths=(6,), head_mode="ranking", head_channels=1, seed=7)


def tiny_net(head_mode="ranking", head_channels=1, seed=7):
    cfg = NetConfig(stage_widths=(3, 4, 5), stage_blocks=(1, 1, 1),
                    stage_strides=(1, 2, 2), head_widths=(6,),
                    head_mode=head_mode, head_channels=head_channels, seed=seed)
    return DepthNet(cfg)


class TestLayers:
    def test_conv_delta_kernel_is_identity(self):
        conv = Conv2d(2, 2, 3, rng=np.random.default_rng(0))
        conv.weight.values[...] = 0.0
        for c in range(2):
            conv.weight.values[c, c, 1, 1] = 1.0
        conv.bias.values[...] = 0.0
        x = np.random.default_rng(1).random((2, 2, 6, 6))
        assert np.array_equal(conv.forward(x), x)

    def test_conv_constant_input_interior(self):
        conv = Conv2d(1, 1, 3, rng=np.random.default_rng(2))
        s = conv.weight.values.sum()
        conv.bias.values[...] = 0.0
        x = np.full((1, 1, 5, 5), 0.7)
        out = conv.forward(x)
        assert np.allclose(out[0, 0, 1:-1, 1:-1], s * 0.7, rtol=1e-12)

    def test_conv_backward_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        conv = Conv2d(2, 3, 3, stride=2, rng=rng)
        x = rng.random((1, 2, 6, 6))
        dout_seed = rng.random((1, 3, 3, 3))

        def loss_for(x_arr):
            return float((conv.forward(x_arr) * dout_seed).sum())

        out = conv.forward(x)
        conv.weight.zero_grad()
        conv.bias.zero_grad()
        dx = conv.backward(dout_seed)
        assert gradients_close(dx, numerical_gradient(loss_for, x.copy()))
        num_w = numerical_gradient(
            lambda w: float((_conv_with_weight(conv, w, x) * dout_seed).sum()),
            conv.weight.values.copy(),
        )
        assert gradients_close(conv.weight.grad, num_w)

    def test_relu_backward_zeroes_dead_units(self):
        relu = ReLU()
        x = np.array([[-1.0, 2.0]])
        relu.forward(x)
        grads = relu.backward(np.ones_like(x))
        assert np.array_equal(grads, [[0.0, 1.0]])

    def test_maxpool_forward_and_routing(self):
        pool = MaxPool2()
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        out = pool.forward(x)
        assert np.array_equal(out[0, 0], [[5, 7], [13, 15]])
        dx = pool.backward(np.ones_like(out))
        assert dx.sum() == 4
        assert dx[0, 0, 1, 1] == 1.0

    def test_maxpool_needs_even_dims(self):
        with pytest.raises(ValueError):
            MaxPool2().forward(np.zeros((1, 1, 3, 4)))

    def test_channel_norm_standardizes_first_batch(self):
        norm = ChannelNorm(3)
        rng = np.random.default_rng(4)
        x = rng.random((2, 3, 5, 5)) * 4 + 1
        out = norm.forward(x)
        assert norm.calibrated
        assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
        assert np.allclose(out.std(axis=(0, 2, 3)), 1.0, atol=1e-3)
        # later batches reuse the stored statistics
        y = rng.random((2, 3, 5, 5)) * 10
        expected = (y - norm.mu[None, :, None, None]) / norm.sigma[None, :, None, None]
        assert np.allclose(norm.forward(y), expected)


def _conv_with_weight(conv, w, x):
    saved = conv.weight.values
    conv.weight.values = w
    out = conv.forward(x)
    conv.weight.values = saved
    return out


class TestResidualBlock:
    def test_zero_branch_identity_shortcut(self):
        rng = np.random.default_rng(5)
        block = ResidualBlock(4, 4, stride=1, rng=rng)
        block.conv1.weight.values[...] = 0.0
        block.conv1.bias.values[...] = 0.0
        block.conv2.weight.values[...] = 0.0
        block.conv2.bias.values[...] = 0.0
        x = rng.random((2, 4, 6, 6))
        assert np.array_equal(block.forward(x), x)

    def test_zero_branch_identity_projection(self):
        rng = np.random.default_rng(6)
        block = ResidualBlock(4, 4, stride=1, rng=rng)
        for conv in (block.conv1, block.conv2):
            conv.weight.values[...] = 0.0
            conv.bias.values[...] = 0.0
        block.projection = Conv2d(4, 4, 1, stride=1, pad=0, rng=rng)
        block.projection.weight.values[...] = 0.0
        for c in range(4):
            block.projection.weight.values[c, c, 0, 0] = 1.0
        block.projection.bias.values[...] = 0.0
        x = rng.random((1, 4, 4, 4))
        assert np.allclose(block.forward(x), x, rtol=1e-15)

    def test_identity_trunk_through_block_chain(self):
        rng = np.random.default_rng(7)
        blocks = [ResidualBlock(3, 3, 1, rng) for _ in range(3)]
        for b in blocks:
            for conv in (b.conv1, b.conv2):
                conv.weight.values[...] = 0.0
                conv.bias.values[...] = 0.0
        x = rng.random((1, 3, 8, 8))
        out = x
        for b in blocks:
            out = b.forward(out)
        assert np.array_equal(out, x)

    def test_projection_present_exactly_when_needed(self):
        rng = np.random.default_rng(8)
        assert ResidualBlock(4, 4, 1, rng).projection is None
        assert ResidualBlock(4, 8, 1, rng).projection is not None
        assert ResidualBlock(4, 4, 2, rng).projection is not None

    def test_strided_block_shapes(self):
        rng = np.random.default_rng(9)
        block = ResidualBlock(3, 6, stride=2, rng=rng)
        out = block.forward(rng.random((2, 3, 8, 8)))
        assert out.shape == (2, 6, 4, 4)
        dx = block.backward(np.ones_like(out))
        assert dx.shape == (2, 3, 8, 8)


def full_parameter_gradient_check(net, loss_from_scores, input_shape, seed):
    """Exhaustive finite-difference check of every parameter coordinate."""
    rng = np.random.default_rng(seed)
    x = rng.random(input_shape)
    net.forward(x)  # calibrate normalization statistics once

    def current_loss():
        return loss_from_scores(net.forward(x)).value

    res = loss_from_scores(net.forward(x))
    net.zero_grad()
    if net.config.head_channels == 1:
        dout = res.gradient[None, None]
    else:
        dout = np.moveaxis(res.gradient, -1, 0)[None]
    net.backward(dout)

    from gradcheck import coordinate_check

    for name, tensor in net.named_params():
        flat = tensor.values.ravel()
        gflat = tensor.grad.ravel()
        for ci in range(flat.size):
            bad = coordinate_check(current_loss, flat, ci, gflat[ci])
            assert bad is None, f"{name}[{ci}]: analytic vs numeric {bad}"


class TestWholeNetGradients:
    def test_ranking_loss_every_parameter(self):
        net = tiny_net()
        pairs = [OrdinalPair((0, 0), (1, 1), 1), OrdinalPair((0, 1), (1, 0), -1),
                 OrdinalPair((1, 1), (0, 1), 0)]
        full_parameter_gradient_check(
            net, lambda out: ranking_loss(out[0, 0], pairs), (1, 3, 16, 16), seed=10
        )

    def test_infogain_loss_every_parameter(self):
        bins = 4
        net = tiny_net(head_mode="classification", head_channels=bins)
        gain = info_gain_matrix(bins, 2.0)
        rng = np.random.default_rng(11)
        labels = rng.integers(1, bins + 1, size=(2, 2))
        mask = np.array([[True, False], [True, True]])
        full_parameter_gradient_check(
            net,
            lambda out: infogain_loss(out[0].transpose(1, 2, 0), labels, mask, gain),
            (1, 3, 16, 16), seed=12,
        )

    def test_sampled_seeds_both_losses(self):
        # a light sweep over several seeds; the acceptance suite runs 100
        for seed in range(5):
            rng = np.random.default_rng(1000 + seed)
            net = tiny_net(seed=seed)
            x = rng.random((1, 3, 16, 16))
            pairs = [OrdinalPair((0, 0), (1, 1), 1), OrdinalPair((1, 0), (0, 1), 0)]
            net.forward(x)

            def loss():
                return ranking_loss(net.forward(x)[0, 0], pairs).value

            res = ranking_loss(net.forward(x)[0, 0], pairs)
            net.zero_grad()
            dout = np.zeros((1, 1, 2, 2))
            dout[0, 0] = res.gradient
            net.backward(dout)
            bad = check_param_subset(loss, [t for _, t in net.named_params()], rng,
                                     coords_per_tensor=2)
            assert bad is None, f"seed {seed}: {bad}"


class TestL2Loss:
    def test_zero_at_identity(self):
        pred = np.array([[1.0, 2.0]])
        res = l2_regression_loss(pred, pred.copy(), np.ones_like(pred, dtype=bool))
        assert res.value == 0.0
        assert np.all(res.gradient == 0.0)

    def test_single_pixel_closed_form(self):
        res = l2_regression_loss(np.array([[3.0]]), np.array([[1.0]]),
                                 np.array([[True]]))
        assert res.value == 4.0
        assert res.gradient[0, 0] == 4.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        pred = rng.normal(size=(5, 6))
        target = rng.normal(size=(5, 6))
        mask = rng.random((5, 6)) < 0.7
        mask[0, 0] = True
        res = l2_regression_loss(pred, target, mask)
        num = numerical_gradient(
            lambda p: l2_regression_loss(p, target, mask).value, pred.copy()
        )
        assert gradients_close(res.gradient, num)

    def test_masked_pixels_ignored(self):
        pred = np.array([[1.0, 50.0]])
        target = np.array([[1.0, 0.0]])
        mask = np.array([[True, False]])
        assert l2_regression_loss(pred, target, mask).value == 0.0

    def test_zero_valid_error(self):
        with pytest.raises(ValueError):
            l2_regression_loss(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), bool))


def overfit_sample(seed=21, size=32):
    rng = np.random.default_rng(seed)
    img = Image(rng.random((size, size, 3)).astype(np.float32))
    values = np.full((size, size), 4.0, dtype=np.float32)
    values[:, size // 2:] = 16.0
    depth = DepthMap(values, kind="depth")
    return img, depth


class TestTraining:
    def test_zero_learning_rate_is_identity(self):
        net = tiny_net()
        img, _ = overfit_sample()
        pairs = [OrdinalPair((0, 0), (20, 20), 1)]
        before = {n: t.values.copy() for n, t in net.named_params()}
        sched = TrainSchedule(batch_size=1, learning_rate=0.0, total_iterations=5)
        pretrain_ranking(net, [(img, pairs)], sched, seed=1)
        for n, t in net.named_params():
            assert np.array_equal(before[n], t.values), n

    def test_same_seed_identical_trajectories(self):
        img, _ = overfit_sample()
        pairs = [OrdinalPair((0, 0), (20, 20), 1), OrdinalPair((8, 8), (28, 2), -1)]
        sched = TrainSchedule(batch_size=2, learning_rate=1e-4, total_iterations=8)
        h1 = pretrain_ranking(tiny_net(), [(img, pairs)], sched, seed=5)
        h2 = pretrain_ranking(tiny_net(), [(img, pairs)], sched, seed=5)
        assert [r["loss"] for r in h1] == [r["loss"] for r in h2]

    def test_overfit_single_image_ranking(self):
        from reldepth.imagery import SynthSceneSpec, generate_stereogram
        from reldepth.ordinal import PairSampleConfig, sample_pairs

        spec = SynthSceneSpec(width=32, height=32, layer_disparities=(2, 10),
                              texture_density=1.0, d_max=16, seed=300)
        left, _, gt = generate_stereogram(spec)
        sampled = sample_pairs(gt, PairSampleConfig(count=40, eq_threshold=0.5, seed=4))
        pairs = [p for p in sampled if map_pairs_to_grid([p], 8)][:10]
        assert len(pairs) == 10
        net = tiny_net(seed=31)
        sched = TrainSchedule(batch_size=1, learning_rate=5e-4,
                              total_iterations=200, decay_iterations=(150,))
        hist = pretrain_ranking(net, [(left, pairs)], sched, seed=32)
        assert hist[-1]["loss"] < 0.02 * hist[0]["loss"]

    def test_loss_trend_windows_non_increasing(self):
        rng = np.random.default_rng(33)
        img, depth = overfit_sample(33)
        pairs = []
        while len(pairs) < 12:
            a = tuple(int(v) for v in rng.integers(0, 32, 2))
            b = tuple(int(v) for v in rng.integers(0, 32, 2))
            if a != b and (a[1] // 16) != (b[1] // 16):
                vi, vj = depth.values[a], depth.values[b]
                pairs.append(OrdinalPair(a, b, 1 if vi < vj else -1))
        net = tiny_net(seed=34)
        sched = TrainSchedule(batch_size=1, learning_rate=2e-4, total_iterations=200)
        hist = pretrain_ranking(net, [(img, pairs)], sched, seed=35)
        losses = np.array([r["loss"] for r in hist])
        medians = [np.median(losses[i * 50:(i + 1) * 50]) for i in range(4)]
        assert all(m2 <= m1 for m1, m2 in zip(medians, medians[1:]))

    def test_finetune_classification_overfits(self):
        from reldepth.imagery import SynthSceneSpec, disparity_to_depth, generate_stereogram
        from reldepth.metrics import evaluate

        scheme = make_bins(2.0, 40.0, 8)
        gain = info_gain_matrix(8, 2.0)
        data = []
        for s in (40, 41, 42, 43):
            spec = SynthSceneSpec(width=96, height=96, layer_disparities=(2, 10),
                                  texture_density=1.0, d_max=16, seed=s)
            left, _, gt = generate_stereogram(spec)
            data.append((left, disparity_to_depth(gt, 32.0)))
        cfg = NetConfig(stage_widths=(6, 8, 12), stage_blocks=(1, 1, 1),
                        stage_strides=(1, 2, 2), head_widths=(12,),
                        head_mode="classification", head_channels=8, seed=44)
        net = DepthNet(cfg)
        sched = TrainSchedule(batch_size=2, learning_rate=5e-3,
                              total_iterations=500, decay_iterations=(350,))
        hist = finetune_classification(net, data, scheme, gain, sched, seed=45)
        assert hist[-1]["loss"] < 0.5 * hist[0]["loss"]
        rates = [evaluate(predict_depth(net, img, scheme), depth).delta1
                 for img, depth in data]
        assert np.mean(rates) >= 0.90

    def test_alpha_zero_equals_all_ones_gain(self):
        scheme = make_bins(2.0, 40.0, 6)
        from reldepth.binning import InfoGainMatrix
        g1 = info_gain_matrix(6, 0.0)
        g2 = InfoGainMatrix(0.0, np.ones((6, 6)))
        data = [overfit_sample(50)]
        sched = TrainSchedule(batch_size=1, learning_rate=1e-3, total_iterations=10)
        h1 = finetune_classification(tiny_net(seed=51), data, scheme, g1, sched, seed=52)
        h2 = finetune_classification(tiny_net(seed=51), data, scheme, g2, sched, seed=52)
        assert [r["loss"] for r in h1] == [r["loss"] for r in h2]

    def test_fully_masked_sample_contributes_nothing(self):
        scheme = make_bins(2.0, 40.0, 6)
        gain = info_gain_matrix(6, 2.0)
        img, depth = overfit_sample(60)
        masked = DepthMap(depth.values, np.zeros_like(depth.mask), kind="depth")
        net = tiny_net(head_mode="classification", head_channels=6, seed=61)
        sched = TrainSchedule(batch_size=1, learning_rate=1e-3, total_iterations=1)
        # batch of one fully masked sample: loss 0, parameters untouched
        before = {n: t.values.copy() for n, t in net.named_params()}
        hist = finetune_classification(net, [(img, masked)], scheme, gain, sched, seed=62)
        assert hist[0]["loss"] == 0.0
        for n, t in net.named_params():
            assert np.array_equal(before[n], t.values), n

    def test_finetune_regression_runs_and_descends(self):
        data = [overfit_sample(s) for s in (70, 71)]
        net = tiny_net(seed=72)
        sched = TrainSchedule(batch_size=2, learning_rate=5e-3, total_iterations=150)
        hist = finetune_regression(net, data, sched, seed=73)
        assert hist[-1]["loss"] < hist[0]["loss"]

    def test_augmented_finetune_runs(self):
        scheme = make_bins(2.0, 40.0, 6)
        gain = info_gain_matrix(6, 2.0)
        data = [overfit_sample(80)]
        net = tiny_net(seed=81)
        sched = TrainSchedule(batch_size=2, learning_rate=1e-3, total_iterations=5)
        finetune_classification(net, data, scheme, gain, sched, seed=82,
                                augment_cfg=AugmentConfig(scale_range=(1.0, 1.3),
                                                          flip_prob=0.5))

    def test_trainer_rejects_downscale_augment(self):
        with pytest.raises(ValueError):
            AugmentConfig(scale_range=(0.5, 1.0))

    def test_gradient_clipping_bounds_the_step(self):
        img, _ = overfit_sample()
        pairs = [OrdinalPair((0, 0), (20, 20), 0)]
        sched = TrainSchedule(batch_size=1, learning_rate=1.0, total_iterations=1)
        clipped = tiny_net(seed=90)
        free = tiny_net(seed=90)
        pretrain_ranking(clipped, [(img, pairs)], sched, seed=3, clip_norm=1e-3)
        before = dict(tiny_net(seed=90).named_params())
        moved = np.sqrt(sum(
            float(((t.values - before[n].values) ** 2).sum())
            for n, t in clipped.named_params()
        ))
        # one unit-lr step under a 1e-3 norm clip moves at most that far
        assert moved <= 1e-3 + 1e-9
        pretrain_ranking(free, [(img, pairs)], sched, seed=3)
        moved_free = np.sqrt(sum(
            float(((t.values - before[n].values) ** 2).sum())
            for n, t in free.named_params()
        ))
        assert moved_free > moved

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            pretrain_ranking(tiny_net(), [], TrainSchedule(total_iterations=1), seed=0)

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            TrainSchedule(decay_iterations=(5, 5), total_iterations=10)
        with pytest.raises(ValueError):
            TrainSchedule(decay_iterations=(10,), total_iterations=10)
        sched = TrainSchedule(learning_rate=1.0, total_iterations=10,
                              decay_iterations=(2, 6), decay_factor=0.5)
        assert sched.lr_at(0) == 1.0
        assert sched.lr_at(2) == 0.5
        assert sched.lr_at(7) == 0.25


class TestPairMapping:
    def test_coordinates_divided_by_stride(self):
        pairs = [OrdinalPair((9, 17), (25, 3), 1)]
        mapped = map_pairs_to_grid(pairs, 8)
        assert mapped == [OrdinalPair((1, 2), (3, 0), 1)]

    def test_collapsing_pairs_dropped(self):
        pairs = [OrdinalPair((0, 0), (7, 7), 1), OrdinalPair((0, 0), (15, 15), -1)]
        assert map_pairs_to_grid(pairs, 8) == [OrdinalPair((0, 0), (1, 1), -1)]


class TestPrediction:
    def test_uniform_logits_decode_to_first_bin(self):
        scheme = make_bins(1.0, 16.0, 4)
        net = tiny_net(head_mode="classification", head_channels=4)
        net.head.weight.values[...] = 0.0
        net.head.bias.values[...] = 0.0
        img = Image(np.random.default_rng(90).random((16, 16, 3)).astype(np.float32))
        pred = predict_depth(net, img, scheme)
        assert np.allclose(pred.values, np.float32(np.sqrt(scheme.edges[0] * scheme.edges[1])))

    def test_biased_head_decodes_chosen_bin(self):
        scheme = make_bins(1.0, 16.0, 4)
        net = tiny_net(head_mode="classification", head_channels=4)
        net.head.weight.values[...] = 0.0
        net.head.bias.values[...] = 0.0
        net.head.bias.values[2] = 5.0  # label 3 everywhere
        img = Image(np.random.default_rng(91).random((16, 16, 3)).astype(np.float32))
        pred = predict_depth(net, img, scheme)
        want = np.float32(np.sqrt(scheme.edges[2] * scheme.edges[3]))
        assert np.allclose(pred.values, want)
        assert pred.values.shape == (16, 16)

    def test_ranking_head_refuses_metric_decode(self):
        net = tiny_net()
        img = Image(np.zeros((16, 16, 3), dtype=np.float32))
        with pytest.raises(ValueError):
            predict_depth(net, img, make_bins(1.0, 2.0, 2))

    def test_relative_prediction_is_positive_and_reversed(self):
        net = tiny_net()
        img = Image(np.random.default_rng(92).random((16, 16, 3)).astype(np.float32))
        from reldepth.network import predict_scores
        scores = predict_scores(net, img)
        rel = predict_relative(net, img)
        assert rel.values.min() > 0
        # largest score maps to smallest depth-like value
        assert rel.values.shape == (16, 16)

    def test_indivisible_input_rejected(self):
        net = tiny_net()
        with pytest.raises(ValueError):
            net.forward(np.zeros((1, 3, 12, 12)))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = tiny_net(seed=100)
        net.forward(np.random.default_rng(0).random((1, 3, 16, 16)))
        path = tmp_path / "m.ckpt"
        save_checkpoint(net, path, iteration=42)
        loaded, iteration = load_checkpoint(path)
        assert iteration == 42
        assert loaded.config == net.config
        for (na, ta), (nb, tb) in zip(net.named_params(), loaded.named_params()):
            assert na == nb and np.array_equal(ta.values, tb.values)
        for (na, a), (nb, b) in zip(net.named_norms(), loaded.named_norms()):
            assert np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma, b.sigma)
            assert a.calibrated == b.calibrated

    def test_identical_bytes_for_identical_state(self, tmp_path):
        net = tiny_net(seed=101)
        save_checkpoint(net, tmp_path / "a.ckpt", iteration=1)
        save_checkpoint(net, tmp_path / "b.ckpt", iteration=1)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"NOTright" + bytes(32))
        with pytest.raises(ValueError):
            load_checkpoint(p)

    def test_re_head_preserves_trunk(self):
        # the head block is the final conv plus the normalization feeding it;
        # everything upstream must survive the swap untouched
        net = tiny_net(seed=102)
        net.forward(np.random.default_rng(0).random((1, 3, 16, 16)))
        head_side = ("head.", "final.norm")
        trunk_before = {n: t.values.copy() for n, t in net.named_params()
                        if not n.startswith(head_side)}
        net.re_head("classification", 5)
        assert net.config.head_channels == 5
        assert net.head.weight.shape[0] == 5
        assert not net.final_norm.calibrated  # restandardizes on the next batch
        for n, t in net.named_params():
            if not n.startswith(head_side):
                assert np.array_equal(trunk_before[n], t.values), n
