import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from litefbcn.checks import TOLERANCE, layer_checks
from litefbcn.errors import ShapeMismatch, UnrecordedForward, ZeroBatch
from litefbcn.heads import HeadConfig
from litefbcn.model import build_model
from litefbcn.nn import (BackboneSpec, BatchNorm, Conv2D, Dense, DepthwiseConv2D, GlobalAvgPool, Param, ParamStore,
                         ReLU, Sequential, batchnorm_forward, build_micronet, conv2d_forward, conv_output_size,
                         count_params, dense_forward, depthwise_conv2d_forward, estimate_flops, global_average_pool,
                         grad_check, jitter_batchnorm)
from litefbcn.tensor import matmul, reduce

SMALL = BackboneSpec.from_widths((6, 6, 2), [4, 4], [1, 2])


def naive_conv(x, w, b, stride, pad_top, pad_left, out_h, out_w):
    n, h, wd, c = x.shape
    kh, kw, _, k = w.shape
    out = np.zeros((n, out_h, out_w, k))
    for ni in range(n):
        for i in range(out_h):
            for j in range(out_w):
                for kk in range(k):
                    s = b[kk]
                    for di in range(kh):
                        for dj in range(kw):
                            for ci in range(c):
                                r, q = i * stride + di - pad_top, j * stride + dj - pad_left
                                if 0 <= r < h and 0 <= q < wd:
                                    s += x[ni, r, q, ci] * w[di, dj, ci, kk]
                    out[ni, i, j, kk] = s
    return out


class TestConv:
    def test_identity_1x1(self, rng):
        x = rng.standard_normal((2, 4, 4, 3))
        w = np.eye(3)[None, None]
        assert_allclose(conv2d_forward(x, w, np.zeros(3)), x, rtol=0, atol=0)

    def test_depthwise_interior_sum(self):
        x = np.full((1, 5, 5, 2), 1.5)
        out = depthwise_conv2d_forward(x, np.ones((3, 3, 2, 1)), padding="valid")
        assert out.shape == (1, 3, 3, 2)
        assert_allclose(out, 9 * 1.5)

    def test_against_seven_loops_valid(self, rng):
        x = rng.standard_normal((1, 5, 5, 2))
        w = rng.standard_normal((3, 3, 2, 3))
        b = rng.standard_normal(3)
        got = conv2d_forward(x, w, b, 1, "valid")
        assert_allclose(got, naive_conv(x, w, b, 1, 0, 0, 3, 3), rtol=1e-6)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_against_seven_loops_same(self, rng, stride):
        x = rng.standard_normal((2, 5, 6, 2))
        w = rng.standard_normal((3, 3, 2, 3))
        b = np.zeros(3)
        got = conv2d_forward(x, w, b, stride, "same")
        oh, ow = conv_output_size(5, 3, stride, "same"), conv_output_size(6, 3, stride, "same")
        top = max((oh - 1) * stride + 3 - 5, 0) // 2
        left = max((ow - 1) * stride + 3 - 6, 0) // 2
        assert_allclose(got, naive_conv(x, w, b, stride, top, left, oh, ow), rtol=1e-6, atol=1e-12)

    def test_depthwise_matches_per_channel_conv(self, rng):
        x = rng.standard_normal((2, 6, 6, 3))
        w = rng.standard_normal((3, 3, 3, 1))
        got = depthwise_conv2d_forward(x, w, stride=2)
        for c in range(3):
            ref = conv2d_forward(x[..., c:c + 1], w[:, :, c:c + 1, :], stride=2)
            assert_allclose(got[..., c:c + 1], ref, rtol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeMismatch):
            conv2d_forward(np.ones((1, 4, 4, 3)), np.ones((3, 3, 2, 1)))

    @given(st.integers(1, 64), st.sampled_from([1, 2]), st.sampled_from([1, 3]))
    def test_same_padding_law(self, size, stride, k):
        x = np.zeros((1, size, size, 1))
        out = conv2d_forward(x, np.zeros((k, k, 1, 1)), stride=stride, padding="same")
        assert out.shape[1:3] == (-(-size // stride),) * 2

    @given(st.integers(3, 40), st.sampled_from([1, 2]))
    def test_valid_padding_law(self, size, stride):
        out = conv2d_forward(np.zeros((1, size, size, 1)), np.zeros((3, 3, 1, 1)), stride=stride, padding="valid")
        assert out.shape[1] == (size - 3) // stride + 1

    def test_layer_backward_needs_forward(self):
        with pytest.raises(UnrecordedForward):
            Conv2D(2, 2).backward(np.zeros((1, 3, 3, 2)))


class TestBatchNorm:
    def test_train_standardizes(self, rng):
        x = rng.normal(3, 2, (64, 5))
        out, _, _ = batchnorm_forward(x, np.ones(5), np.zeros(5), np.zeros(5), np.ones(5), "train")
        assert_allclose(out.mean(axis=0), 0, atol=1e-5)
        assert_allclose(out.var(axis=0), 1, atol=1e-5)

    def test_infer_identity(self, rng):
        x = rng.standard_normal((4, 3, 3, 2))
        out, _, _ = batchnorm_forward(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), "infer")
        assert_allclose(out, x / np.sqrt(1 + 1e-5), rtol=1e-12)

    def test_constant_batch(self):
        out, _, _ = batchnorm_forward(np.full((8, 3), 7.0), np.ones(3), np.zeros(3), np.zeros(3), np.ones(3))
        assert np.all(np.isfinite(out))
        assert_array_equal(out, 0)

    def test_running_update(self, rng):
        x = rng.normal(2, 3, (50, 4))
        _, m, v = batchnorm_forward(x, np.ones(4), np.zeros(4), np.zeros(4), np.ones(4), "train")
        assert_allclose(m, 0.1 * x.mean(axis=0))
        assert_allclose(v, 0.9 + 0.1 * x.var(axis=0))

    def test_layer_matches_function(self, rng):
        x = rng.standard_normal((6, 2, 2, 3))
        bn = BatchNorm(3, dtype=np.float64)
        out = bn.forward(x, train=True)
        ref, m, v = batchnorm_forward(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3))
        assert_allclose(out, ref)
        assert_allclose(bn.running_mean.value, m)
        assert_allclose(bn.running_var.value, v)

    def test_zero_batch(self):
        with pytest.raises(ZeroBatch):
            BatchNorm(3).forward(np.zeros((0, 3)), train=True)


class TestDenseAndPool:
    def test_dense_identity(self, rng):
        x = rng.standard_normal((3, 4))
        assert_array_equal(dense_forward(x, np.eye(4), np.zeros(4)), x)

    def test_dense_example(self):
        assert_allclose(dense_forward(np.array([[1.0, 2.0]]), np.array([[1.0], [1.0]]), np.array([0.5])), [[3.5]])

    def test_dense_matches_matmul_add(self, rng):
        x, w, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3)), rng.standard_normal(3)
        ref = matmul(x, w) + np.broadcast_to(b, (5, 3))
        assert_allclose(dense_forward(x, w, b), ref, rtol=1e-12)

    def test_dense_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            dense_forward(np.ones((2, 3)), np.ones((4, 1)))

    def test_gap(self, rng):
        assert_allclose(global_average_pool(np.full((2, 3, 3, 4), -1.25)), -1.25)
        assert_allclose(global_average_pool(np.array([1.0, 3.0]).reshape(1, 2, 1, 1)), [[2.0]])
        x = rng.standard_normal((2, 4, 5, 3))
        assert_allclose(global_average_pool(x), reduce("mean", x, (1, 2)), rtol=1e-12)


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self, rng):
        model = build_model(SMALL, HeadConfig("LiteFBCN", gamma=2, num_classes=3), dtype=np.float64)
        model.forward(rng.standard_normal((2, 6, 6, 2)), train=True)
        model.params.zero_grad()
        model.backward(np.zeros((2, 3)))
        for name, p in model.params.trainable():
            assert not p.grad.any(), name

    def test_dense_closed_form(self, rng):
        layer = Dense(4, 3, dtype=np.float64, rng=rng)
        x = rng.standard_normal((5, 4))
        g = rng.standard_normal((5, 3))
        layer.forward(x)
        dx = layer.backward(g)
        assert_allclose(layer.weight.grad, x.T @ g)
        assert_allclose(layer.bias.grad, g.sum(axis=0))
        assert_allclose(dx, g @ layer.weight.value.T)

    def test_relu_mask(self):
        relu = ReLU()
        relu.forward(np.array([-1.0, 0.0, 2.0]))
        assert_array_equal(relu.backward(np.ones(3)), [0, 0, 1])

    def test_every_layer_kind_in_isolation(self):
        errors = layer_checks(seed=3)
        assert {"Conv2D", "DepthwiseConv2D", "Dense", "BatchNorm", "ReLU", "GlobalAvgPool"} <= set(errors)
        for kind, err in errors.items():
            assert err < TOLERANCE, (kind, err)


class TestGradCheck:
    def _model(self, variant="LiteFBCN", seed=0, **kw):
        model = build_model(SMALL, HeadConfig(variant, num_classes=3, **kw), seed=seed)
        return jitter_batchnorm(model, seed)

    def test_full_litefbcn(self, rng):
        model = self._model(gamma=2)
        x = rng.standard_normal((4, 6, 6, 2))
        rep = grad_check(model, x, [0, 1, 2, 0])
        assert rep.n_checked == min(200, count_params(model)["trainable"])
        assert rep.passed(1e-4), rep.per_param
        assert set(rep.per_kind) == {"Conv2D", "DepthwiseConv2D", "BatchNorm", "ChannelReducer", "Dense"}

    def test_model_dtype_restored(self, rng):
        model = self._model(gamma=2)
        before = model.params.state()
        grad_check(model, rng.standard_normal((2, 6, 6, 2)), [0, 1], n_samples=20)
        assert model.dtype == np.float32
        for name, value in model.params.state().items():
            assert value.tobytes() == before[name].tobytes(), name

    def test_zero_classifier_symmetric_input(self, rng):
        model = self._model(gamma=2)
        model.head.classifier.weight.value[:] = 0
        model.head.classifier.bias.value[:] = 0
        half = rng.standard_normal((3, 6, 3, 2))
        x = np.concatenate([half, half[:, :, ::-1]], axis=2)
        assert_allclose(model.predict_proba(x), 1 / 3, rtol=1e-6)
        assert grad_check(model, x, [0, 1, 2]).passed(1e-4)

    def test_coarse_step_error_grows(self, rng):
        x = rng.standard_normal((3, 6, 6, 2))
        fine = grad_check(self._model(gamma=2), x, [0, 1, 2], h=1e-5).max_rel_error
        coarse = grad_check(self._model(gamma=2), x, [0, 1, 2], h=1e-1).max_rel_error
        assert coarse > 10 * fine
        assert coarse > 1e-4

    def test_negative_control(self, rng):
        rep = grad_check(self._model("BaselineGAP"), rng.standard_normal((3, 6, 6, 2)), [0, 1, 2], corrupt=True)
        assert not rep.passed(1e-4)
        assert rep.max_rel_error > 0.1

    def test_deterministic(self, rng):
        x = rng.standard_normal((2, 6, 6, 2))
        a = grad_check(self._model("FastBCNN"), x, [0, 1], n_samples=50)
        b = grad_check(self._model("FastBCNN"), x, [0, 1], n_samples=50)
        assert a.per_param == b.per_param and a.n_kinks == b.n_kinks


class TestMicronet:
    def test_seed_determinism(self):
        _, a = build_micronet(BackboneSpec.desk_default(), seed=5)
        _, b = build_micronet(BackboneSpec.desk_default(), seed=5)
        assert a.names() == b.names()
        for (_, p), (_, q) in zip(a, b):
            assert p.value.tobytes() == q.value.tobytes()

    def test_different_seeds_differ(self):
        _, a = build_micronet(SMALL, seed=0)
        _, b = build_micronet(SMALL, seed=1)
        assert a["0_conv2d.weight"].value.tobytes() != b["0_conv2d.weight"].value.tobytes()

    def test_desk_default_output(self, rng):
        spec = BackboneSpec.desk_default()
        net, _ = build_micronet(spec)
        out = net.forward(rng.standard_normal((2, 32, 32, 1)).astype(np.float32))
        assert out.shape == (2, 4, 4, 64)
        assert spec.output_shape() == net.output_shape((32, 32, 1)) == (4, 4, 64)

    def test_identity_backbone(self, rng):
        net, store = build_micronet(BackboneSpec.identity((8, 8, 4)))
        x = rng.standard_normal((2, 8, 8, 4))
        assert_array_equal(net.forward(x), x)
        assert len(store) == 0

    def test_init_values(self):
        _, store = build_micronet(SMALL, seed=0)
        assert_array_equal(store["1_batchnorm.gamma"].value, 1)
        assert_array_equal(store["1_batchnorm.beta"].value, 0)
        assert_array_equal(store["1_batchnorm.running_var"].value, 1)
        w = store["0_conv2d.weight"].value
        assert np.abs(w).max() <= np.sqrt(6 / (3 * 3 * 2))

    def test_convs_have_no_bias(self):
        net, _ = build_micronet(SMALL)
        for layer in net.layers:
            if isinstance(layer, Conv2D):
                assert layer.bias is None

    def test_spec_json_field_names(self):
        net, _ = build_micronet(SMALL)
        doc = json.loads(json.dumps(net.spec()))
        conv = doc["layers"][0]
        assert set(conv) == {"kind", "kernel", "stride", "padding", "channels", "has_bias"}
        assert BackboneSpec.from_dict(SMALL.to_dict()) == SMALL


class TestParamStore:
    def test_flags_exclusive(self):
        with pytest.raises(ValueError):
            Param(np.zeros(2), trainable=True, running=True)

    def test_unique_names(self):
        store = ParamStore()
        store.add("w", Param(np.zeros(1)))
        with pytest.raises(KeyError):
            store.add("w", Param(np.zeros(1)))

    def test_stable_order(self):
        a = build_model(SMALL, HeadConfig("LiteFBCN", gamma=2, num_classes=3))
        b = build_model(SMALL, HeadConfig("LiteFBCN", gamma=2, num_classes=3))
        assert a.params.names() == b.params.names()


class TestCounting:
    def test_dense(self):
        assert count_params(Dense(10, 5))["total"] == 55

    def test_batchnorm(self):
        c = count_params(BatchNorm(16))
        assert (c["trainable"], c["running"], c["total"]) == (32, 32, 64)

    def test_structure_only(self, rng):
        model = build_model(SMALL, HeadConfig("FastBCNN", num_classes=3))
        before = count_params(model)
        for _, p in model.params:
            p.value = rng.standard_normal(p.shape).astype(np.float32)
        assert count_params(model) == before

    @given(st.integers(9, 64), st.integers(9, 64))
    def test_depthwise_separable_lighter(self, c_in, c_out):
        standard = count_params(Conv2D(c_in, c_out, (3, 3), has_bias=False))["total"]
        separable = Sequential([DepthwiseConv2D(c_in, (3, 3), has_bias=False),
                                Conv2D(c_in, c_out, (1, 1), has_bias=False)])
        assert count_params(separable)["total"] < standard


def counted_flops(layer, in_shape):
    """Multiply/add counter: runs a scalar loop model of each layer and tallies operations."""
    ops = 0
    if isinstance(layer, DepthwiseConv2D):
        ho, wo, c = layer.output_shape(in_shape)
        kh, kw = layer.kernel
        for _ in range(ho * wo * c):
            for _ in range(kh * kw):
                ops += 2
            ops += layer.bias is not None
    elif isinstance(layer, Conv2D):
        ho, wo, k = layer.output_shape(in_shape)
        kh, kw = layer.kernel
        for _ in range(ho * wo * k):
            for _ in range(kh * kw * layer.in_channels):
                ops += 2
            ops += layer.bias is not None
    elif isinstance(layer, Dense):
        for _ in range(layer.out_features):
            for _ in range(layer.in_features):
                ops += 2
            ops += layer.bias is not None
    elif isinstance(layer, BatchNorm):
        for _ in range(int(np.prod(in_shape))):
            ops += 2  # scale, shift with folded inference constants
    elif isinstance(layer, ReLU):
        ops += int(np.prod(in_shape))
    elif isinstance(layer, GlobalAvgPool):
        h, w, c = in_shape
        ops += h * w * c + c
    return ops


class TestFlops:
    def test_pointwise_formula(self):
        conv = Conv2D(8, 4, (1, 1), has_bias=True)
        assert conv.flops((4, 4, 8)) == 1024 + 64
        assert Conv2D(8, 4, (1, 1), has_bias=False).flops((4, 4, 8)) == 1024

    def test_gap_formula(self):
        assert GlobalAvgPool().flops((4, 4, 8)) == 128 + 8

    def test_depthwise_formula(self):
        assert DepthwiseConv2D(8, has_bias=False).flops((4, 4, 8)) == 2 * 16 * 8 * 9

    def test_dense_formula(self):
        assert Dense(10, 5).flops((10,)) == 2 * 50 + 5

    def test_backbone_matches_counter(self):
        spec = BackboneSpec.from_widths((8, 8, 3), [4, 8, 8], [1, 2, 1])
        net, _ = build_micronet(spec)
        shape = spec.input_shape
        expected = 0
        for layer in net.layers:
            expected += counted_flops(layer, shape)
            shape = layer.output_shape(shape)
        model = build_model(spec, HeadConfig("BaselineGAP", num_classes=3))
        report = estimate_flops(model, spec.input_shape)
        backbone_total = sum(r["flops"] for r in report["per_layer"] if r["layer"].startswith("backbone."))
        assert backbone_total == expected
        head = [r for r in report["per_layer"] if r["layer"].startswith("head.")]
        assert [r["kind"] for r in head] == ["GlobalAvgPool", "Dense", "Softmax"]
        assert head[0]["flops"] == counted_flops(GlobalAvgPool(), (4, 4, 8))
        assert head[1]["flops"] == counted_flops(Dense(8, 3), (8,))
        assert report["total"] == sum(r["flops"] for r in report["per_layer"])
