import numpy as np
import pytest

from densemask import nn
from densemask import transforms as T
from densemask.bipyramid import (
    BipyramidSpec,
    aligned_level_units,
    build_bipyramid,
    convert_fpn_maps,
    level_shape,
    naive_bipyramid,
    random_level_inputs,
)
from densemask.core import FeatureMap, Repr, StructuredTensor, Units
from densemask.transforms import Interp


class TestLevelShape:
    def test_k5_window(self):
        spec = BipyramidSpec((15, 15), (64, 64), 6, 1.0)
        shape, _ = level_shape(spec, 5)
        assert shape[:2] == (480, 480)

    def test_k0_unchanged(self):
        spec = BipyramidSpec((15, 15), (64, 64), 3, 2.0)
        assert level_shape(spec, 0) == ((15, 15, 64, 64), Units(2.0, 2.0))

    def test_k3(self):
        spec = BipyramidSpec((15, 15), (64, 64), 4, 1.0)
        shape, units = level_shape(spec, 3)
        assert shape == (120, 120, 8, 8)
        assert np.prod(shape) == 15 * 15 * 64 * 64
        assert units == Units(1.0, 8.0)

    def test_out_of_range(self):
        spec = BipyramidSpec((3, 3), (8, 8), 2, 1.0)
        with pytest.raises(IndexError):
            level_shape(spec, 2)

    def test_indivisible(self):
        with pytest.raises(ValueError):
            BipyramidSpec((3, 3), (6, 6), 3, 1.0)


class TestBuild:
    def test_single_level_is_align2nat(self, rng):
        t = StructuredTensor(rng.normal(size=(3, 3, 4, 4)), Repr.ALIGNED, Units(1, 1))
        (out,) = build_bipyramid([t])
        assert out == T.align2nat(t)

    @pytest.mark.parametrize("interp", list(Interp))
    def test_three_levels_vs_naive(self, rng, interp):
        per_level = random_level_inputs(rng, 3, 3, 8, 8, 3)
        fused = build_bipyramid(per_level, interp)
        for f, n in zip(fused, naive_bipyramid(per_level, interp)):
            assert f == n

    def test_shapes_units_and_counts(self, rng):
        spec = BipyramidSpec((3, 5), (8, 8), 3, 1.0)
        per_level = random_level_inputs(rng, 3, 5, 8, 8, 3)
        for k, t in enumerate(build_bipyramid(per_level)):
            shape, units = level_shape(spec, k)
            assert t.shape == shape
            assert t.units == units
            assert t.size == 3 * 5 * 8 * 8

    def test_aligned_units(self):
        assert aligned_level_units(2.0, 2) == Units(8.0, 2.0)

    def test_wrong_units_rejected(self, rng):
        bad = StructuredTensor(rng.normal(size=(3, 3, 4, 4)), Repr.ALIGNED, Units(1, 1))
        with pytest.raises(ValueError):
            build_bipyramid([bad, bad])


class TestConvertFPN:
    def maps(self, rng, C=3, H=8, levels=3):
        finest = FeatureMap(rng.normal(size=(C, H, H)), 2.0)
        maps = [FeatureMap(rng.normal(size=(C, H >> k, H >> k)), 2.0 * 2 ** k) for k in range(levels)]
        return maps, finest

    def test_level_zero(self, rng):
        maps, finest = self.maps(rng)
        w = rng.normal(size=(3, 3, 3, 3))
        b = rng.normal(size=3)
        out = convert_fpn_maps(maps, finest, w, b)[0]
        x = nn.leaf((maps[0].data + finest.data)[None])
        ref = nn.relu(nn.conv2d(x, nn.leaf(w), nn.leaf(b))).value[0]
        np.testing.assert_allclose(out.data, ref, rtol=1e-13)

    def test_constant_maps_identity_conv(self):
        C, H = 2, 4
        w = np.zeros((C, C, 3, 3))
        w[np.arange(C), np.arange(C), 1, 1] = 1.0
        finest = FeatureMap(np.stack([np.full((H, H), 1.0), np.full((H, H), -3.0)]), 1.0)
        maps = [FeatureMap(np.full((C, H >> k, H >> k), 0.5), 2.0 ** k) for k in range(2)]
        for out in convert_fpn_maps(maps, finest, w):
            np.testing.assert_array_equal(out.data[0], 1.5)
            np.testing.assert_array_equal(out.data[1], 0.0)
            assert out.stride == 1.0

    def test_two_level_composition(self, rng):
        maps, finest = self.maps(rng, levels=2)
        w = rng.normal(size=(3, 3, 3, 3))
        out = convert_fpn_maps(maps, finest, w)
        # straight-line reference: top-left-origin bilinear upsample with edge clamp
        m = maps[1].data
        n = m.shape[-1]
        src = np.clip(np.arange(2 * n) / 2, 0, n - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n - 1)
        f = src - i0
        rows = m[:, i0] * (1 - f)[None, :, None] + m[:, i1] * f[None, :, None]
        up = rows[:, :, i0] * (1 - f) + rows[:, :, i1] * f
        ref = nn.relu(nn.conv2d(nn.leaf((up + finest.data)[None]), nn.leaf(w), nn.leaf(np.zeros(3)))).value[0]
        np.testing.assert_allclose(out[1].data, ref, rtol=1e-12, atol=1e-12)

    def test_fused_or_unfused_add_order(self, rng):
        maps, finest = self.maps(rng, levels=2)
        w = rng.normal(size=(3, 3, 3, 3))
        a = convert_fpn_maps(maps, finest, w)[1].data
        # adding the finest map before upsampling a coarse copy of it changes nothing at level 0
        up = nn.upsample_hw(nn.leaf(maps[1].data[None]), 2).value[0]
        b = nn.relu(nn.conv2d(nn.leaf((finest.data + up)[None]), nn.leaf(w), nn.leaf(np.zeros(3)))).value[0]
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("bad", ["channels", "shape", "stride", "weights"])
    def test_mismatch_errors(self, rng, bad):
        maps, finest = self.maps(rng, levels=2)
        w = rng.normal(size=(3, 3, 3, 3))
        if bad == "channels":
            maps[1] = FeatureMap(rng.normal(size=(2, 4, 4)), 4.0)
        elif bad == "shape":
            maps[1] = FeatureMap(rng.normal(size=(3, 3, 4)), 4.0)
        elif bad == "stride":
            maps[1] = FeatureMap(rng.normal(size=(3, 4, 4)), 3.0)
        else:
            w = w[:, :, :1, :1]
        with pytest.raises(ValueError):
            convert_fpn_maps(maps, finest, w)
