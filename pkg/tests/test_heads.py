import numpy as np
import pytest

from densemask import nn
from densemask import transforms as T
from densemask.core import FeatureMap, Repr, Units
from densemask.gradcheck import network_grad_errors, numeric_grad, rel_error
from densemask.harness import ExperimentConfig, train
from densemask.heads import (
    PRIOR_PROB,
    HeadKind,
    NetConfig,
    Params,
    conv_reshape,
    forward,
    init_params,
    mask_head_node,
    run_box_head,
    run_cls_head,
    run_head,
)
from densemask.losses import mask_bce
from densemask.transforms import Interp

TINY = dict(channels=4, stem_channels=4, tower_depth=2, num_classes=2)


def conv2d_loop(x, w, b):
    N, C, H, W = x.shape
    O, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((N, O, H, W))
    for n in range(N):
        for o in range(O):
            for i in range(H):
                for j in range(W):
                    out[n, o, i, j] = np.sum(xp[n, :, i:i + k, j:j + k] * w[o]) + b[o]
    return out


class TestPrimitives:
    @pytest.mark.parametrize("k", [1, 3])
    def test_conv_matches_loop(self, rng, k):
        x = rng.normal(size=(2, 3, 5, 6))
        w = rng.normal(size=(4, 3, k, k))
        b = rng.normal(size=4)
        out = nn.conv2d(nn.leaf(x), nn.leaf(w), nn.leaf(b)).value
        np.testing.assert_allclose(out, conv2d_loop(x, w, b), rtol=1e-12, atol=1e-12)

    def test_stride2_keeps_phase_zero(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        np.testing.assert_array_equal(nn.stride2(nn.leaf(x)).value[0, 0], [[0, 2], [8, 10]])

    def test_upsample_hw_top_left_origin(self):
        x = np.array([3.0, 7.0]).reshape(1, 1, 1, 2)
        out = nn.upsample_hw(nn.leaf(x), 2).value
        np.testing.assert_array_equal(out[0, 0, 0], [3.0, 5.0, 7.0, 7.0])

    @pytest.mark.parametrize("op", ["conv", "relu", "stride2", "upsample", "shift", "upsample_vu", "swap"])
    def test_node_gradients(self, rng, op):
        x = rng.normal(size=(2, 3, 3, 4, 4))
        w = rng.normal(size=(2, 3, 3, 3))
        b = rng.normal(size=2)
        build = {
            "conv": lambda X: nn.conv2d(X, nn.leaf(w), nn.leaf(b)),
            "relu": nn.relu,
            "stride2": nn.stride2,
            "upsample": lambda X: nn.upsample_hw(X, 2),
            "shift": lambda X: nn.shift_vu(X, 1, 1),
            "upsample_vu": lambda X: nn.upsample_vu(X, 2),
            "swap": lambda X: nn.swap_align2nat(X, 2),
        }[op]
        if op in ("conv", "relu", "stride2", "upsample"):
            x = x[:, 0].copy()
        y = None

        def f():
            return float(np.sum(build(nn.leaf(x)).value * y))

        node = nn.leaf(x)
        out = build(node)
        y = rng.normal(size=out.shape)
        nn.backprop([(out, y)])
        assert rel_error(node.grad, numeric_grad(f, x)) < 1e-6

    def test_sigmoid(self):
        np.testing.assert_allclose(nn.sigmoid(np.array([0.0, 2.0, -40.0])),
                                   [0.5, 1 / (1 + np.exp(-2.0)), 1 / (1 + np.exp(40.0))], rtol=1e-12)


class TestSGD:
    def test_plain_descent(self):
        p = {"w": np.array([1.0, 2.0])}
        nn.sgd_step(p, {"w": np.array([0.5, -1.0])}, {}, lr=0.1, momentum=0.0)
        np.testing.assert_allclose(p["w"], [0.95, 2.1])

    def test_two_momentum_steps_by_hand(self):
        p, vel = {"w": np.array([1.0])}, {}
        nn.sgd_step(p, {"w": np.array([2.0])}, vel, lr=0.1, momentum=0.9)
        # v = 2, w = 1 - 0.2 = 0.8
        nn.sgd_step(p, {"w": np.array([1.0])}, vel, lr=0.1, momentum=0.9)
        # v = 0.9*2 + 1 = 2.8, w = 0.8 - 0.28 = 0.52
        np.testing.assert_allclose(p["w"], [0.52], rtol=1e-14)
        np.testing.assert_allclose(vel["w"], [2.8], rtol=1e-14)

    def test_zero_lr(self):
        p = {"w": np.array([1.0, -1.0])}
        nn.sgd_step(p, {"w": np.array([3.0, 4.0])}, {}, lr=0.0, momentum=0.9)
        np.testing.assert_array_equal(p["w"], [1.0, -1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nn.sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, {}, 0.1, 0.9)


class TestConvReshape:
    def test_channel_counts(self):
        assert NetConfig(head=HeadKind.SIMPLE_NATURAL, window_sizes=(15,)).conv_channels(15) == 225
        assert NetConfig(head=HeadKind.UPSCALE_ALIGNED, lam=5, window_sizes=(15,)).conv_channels(15) == 9

    def test_identity_weights(self, rng):
        fm = FeatureMap(rng.normal(size=(6, 3, 4)), 2.0)
        t = conv_reshape(fm, np.eye(6), np.zeros(6), (3, 2))
        assert t.shape == (3, 2, 3, 4)
        assert t.units == Units(2.0, 2.0)
        np.testing.assert_array_equal(t.data.reshape(6, 3, 4), fm.data)

    def test_factor_mismatch(self, rng):
        fm = FeatureMap(rng.normal(size=(4, 3, 3)), 1.0)
        with pytest.raises(ValueError):
            conv_reshape(fm, np.eye(4)[:5] if False else np.ones((5, 4)), np.zeros(5), (2, 2))


class TestHeads:
    def fm(self, rng, C=4):
        return FeatureMap(rng.normal(size=(C, 6, 6)), 2.0)

    def test_upscale_aligned_lambda_one_is_simple_aligned(self, rng):
        a = NetConfig(head=HeadKind.UPSCALE_ALIGNED, lam=1, window_sizes=(5,), **TINY)
        b = NetConfig(head=HeadKind.SIMPLE_ALIGNED, window_sizes=(5,), **TINY)
        params = init_params(a, 1)
        fm = self.fm(rng)
        assert run_head(a, fm, params) == run_head(b, fm, params)

    @pytest.mark.parametrize("kind,lam", [(HeadKind.SIMPLE_NATURAL, 1), (HeadKind.SIMPLE_ALIGNED, 1),
                                          (HeadKind.UPSCALE_NATURAL, 3), (HeadKind.UPSCALE_ALIGNED, 3)])
    def test_baseline_units_equal(self, rng, kind, lam):
        cfg = NetConfig(head=kind, lam=lam, window_sizes=(6,), **TINY)
        out = run_head(cfg, self.fm(rng), init_params(cfg, 0))
        assert out.shape == (6, 6, 6, 6)
        assert out.units.sigma_vu == out.units.sigma_hw
        assert out.repr is Repr.NATURAL

    def test_head_definitions(self, rng):
        fm = self.fm(rng)
        for kind, lam in [(HeadKind.SIMPLE_ALIGNED, 1), (HeadKind.UPSCALE_NATURAL, 2),
                          (HeadKind.UPSCALE_ALIGNED, 2), (HeadKind.SIMPLE_NATURAL, 1)]:
            cfg = NetConfig(head=kind, lam=lam, window_sizes=(4,), tower_depth=0, channels=4)
            params = init_params(cfg, 2)
            c = 4 // lam
            base = conv_reshape(fm, params["mask.out0.w"], params["mask.out0.b"], (c, c),
                                Repr.ALIGNED, sigma_vu=lam * 2.0)
            expect = {
                HeadKind.SIMPLE_NATURAL: lambda: base.data,
                HeadKind.SIMPLE_ALIGNED: lambda: T.align2nat(base).data,
                HeadKind.UPSCALE_NATURAL: lambda: T.up_bilinear_vu(base, lam).data,
                HeadKind.UPSCALE_ALIGNED: lambda: T.up_align2nat(base, lam).data,
            }[kind]()
            np.testing.assert_array_equal(run_head(cfg, fm, params).data, expect)

    def test_bipyramid_head_uses_swap(self, rng):
        cfg = NetConfig(head=HeadKind.BIPYRAMID, window_sizes=(3,), tower_depth=0, channels=4)
        params = init_params(cfg, 2)
        fm = self.fm(rng)
        base = conv_reshape(fm, params["mask.out0.w"], params["mask.out0.b"], (3, 3),
                            Repr.ALIGNED, sigma_vu=4.0)
        out = run_head(cfg, fm, params, level=1)
        assert out.shape == (6, 6, 3, 3)
        assert out.units == Units(2.0, 4.0)
        np.testing.assert_array_equal(out.data, T.swap_align2nat(base, 2).data)

    def test_cls_and_box_shapes(self, rng):
        cfg = NetConfig(window_sizes=(3, 5), **TINY)
        params = init_params(cfg, 0)
        fm = self.fm(rng)
        assert run_cls_head(cfg, fm, params).shape == (2 * 2, 6, 6)
        assert run_box_head(cfg, fm, params).shape == (2 * 4, 6, 6)

    def test_initial_prior(self, rng):
        cfg = NetConfig(**TINY)
        params = init_params(cfg, 0)
        np.testing.assert_allclose(nn.sigmoid(params["cls.out.b"]), PRIOR_PROB)

    def test_zero_weight_cls_head(self, rng):
        cfg = NetConfig(**TINY)
        params = {k: np.zeros_like(v) if k.startswith("cls.") else v for k, v in init_params(cfg, 0).items()}
        np.testing.assert_array_equal(nn.sigmoid(run_cls_head(cfg, self.fm(rng), params)), 0.5)

    def test_init_deterministic(self):
        cfg = NetConfig(**TINY)
        a, b = init_params(cfg, 7), init_params(cfg, 7)
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert not np.array_equal(a["stem0.w"], init_params(cfg, 8)["stem0.w"])

    def test_lambda_must_divide_window(self):
        with pytest.raises(ValueError):
            NetConfig(head=HeadKind.UPSCALE_ALIGNED, lam=4, window_sizes=(6,))


HEAD_CASES = [
    (HeadKind.SIMPLE_NATURAL, 1, (3,)),
    (HeadKind.SIMPLE_ALIGNED, 1, (3,)),
    (HeadKind.UPSCALE_NATURAL, 3, (6,)),
    (HeadKind.UPSCALE_ALIGNED, 3, (6,)),
    (HeadKind.BIPYRAMID, 1, (3, 5)),
]


@pytest.mark.parametrize("kind,lam,sizes", HEAD_CASES, ids=[c[0].value for c in HEAD_CASES])
def test_network_gradients(rng, kind, lam, sizes):
    cfg = NetConfig(head=kind, lam=lam, window_sizes=sizes, **TINY)
    err = network_grad_errors(cfg, rng.normal(size=(2, 3, 8, 8)), rng)
    assert err["params"] < 1e-4
    assert err["input"] < 1e-4


@pytest.mark.parametrize("kind,lam,sizes", HEAD_CASES, ids=[c[0].value for c in HEAD_CASES])
def test_features_to_mask_loss_gradient(rng, kind, lam, sizes):
    cfg = NetConfig(head=kind, lam=lam, window_sizes=sizes, **TINY)
    params = init_params(cfg, 1)
    feat = rng.normal(size=(1, 4, 6, 6))
    level = 1 if kind is HeadKind.BIPYRAMID else 0
    out_shape = mask_head_node(Params(params), cfg, nn.leaf(feat), level, 0).shape
    targets = rng.uniform(size=(out_shape[3] * out_shape[4],) + out_shape[1:3])

    def windows(v):
        return v[0].transpose(2, 3, 0, 1).reshape(-1, *v.shape[1:3])

    def loss():
        node = mask_head_node(Params(params), cfg, nn.leaf(feat), level, 0)
        return mask_bce(windows(node.value), targets)[0]

    P = Params(params)
    x = nn.leaf(feat)
    node = mask_head_node(P, cfg, x, level, 0)
    _, g = mask_bce(windows(node.value), targets)
    V, U, H, W = node.shape[1:]
    nn.backprop([(node, g.reshape(H, W, V, U).transpose(2, 3, 0, 1)[None])])
    assert rel_error(x.grad, numeric_grad(loss, feat)) < 1e-4
    name = "mask.t0.w"
    coords = list(rng.choice(params[name].size, 20, replace=False))
    num = numeric_grad(loss, params[name], coords=coords).reshape(-1)[coords]
    assert rel_error(P.grads()[name].reshape(-1)[coords], num) < 1e-4


def test_weights_shared_across_levels(rng):
    cfg = NetConfig(head=HeadKind.SIMPLE_ALIGNED, window_sizes=(3,), levels=2, **TINY)
    params = init_params(cfg, 0)
    P = Params(params)
    outs = forward(P, cfg, rng.normal(size=(1, 3, 8, 8)))
    # same storage: an in-place change is visible through the shared node
    params["mask.out0.w"][0, 0, 0, 0] += 1.0
    assert P["mask.out0.w"].value is params["mask.out0.w"]
    # the shared node collects gradient from both levels
    seeds0 = [(outs[0].mask[0], np.ones(outs[0].mask[0].shape))]
    seeds1 = [(outs[1].mask[0], np.ones(outs[1].mask[0].shape))]

    def grad_of(seeds_fn):
        P2 = Params(init_params(cfg, 0))
        o = forward(P2, cfg, np.random.default_rng(5).normal(size=(1, 3, 8, 8)))
        nn.backprop(seeds_fn(o))
        return P2.grads()["mask.out0.w"]

    both = grad_of(lambda o: [(o[0].mask[0], np.ones(o[0].mask[0].shape)), (o[1].mask[0], np.ones(o[1].mask[0].shape))])
    g0 = grad_of(lambda o: [(o[0].mask[0], np.ones(o[0].mask[0].shape))])
    g1 = grad_of(lambda o: [(o[1].mask[0], np.ones(o[1].mask[0].shape))])
    np.testing.assert_allclose(both, g0 + g1, rtol=1e-12, atol=1e-12)
    assert seeds0 and seeds1


def test_training_is_bit_deterministic():
    cfg = ExperimentConfig(net=NetConfig(**dict(TINY, num_classes=3)), n_train=4, n_val=2, epochs=2, batch_size=2)
    a, b = train(cfg), train(cfg)
    assert a.losses == b.losses
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
