import numpy as np
import pytest

from terrascout.errors import BadMagic, ShapeMismatch, UnsupportedVersion
from terrascout.patches import FaceMap, PatchKey, RawPatch
from terrascout.refiner import (CROP, PROV_INTERPOLATED, PROV_REFINED,
                                ArchDescriptor, WeightBundle, conv2d,
                                default_descriptor, identity_descriptor,
                                load_weights, random_weights, refine_batch,
                                save_weights)


def conv_oracle(x, w, b, stride, padding):
    """Direct six-nested-loop cross-correlation in float64."""
    ci, h, wd = x.shape
    co, _ci, kh, kw = w.shape
    xp = np.pad(x.astype(np.float64),
                ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for yy in range(ho):
            for xx in range(wo):
                acc = 0.0
                for c in range(ci):
                    for dy in range(kh):
                        for dx in range(kw):
                            acc += xp[c, yy * stride + dy,
                                      xx * stride + dx] * float(w[o, c, dy,
                                                                  dx])
                out[o, yy, xx] = acc + float(b[o])
    return out


def make_raw(rng, key=None, with_rgb=True):
    key = key or PatchKey(0, 0, (320.0, 320.0), 100.0)
    return RawPatch(
        key=key,
        hm_nn=rng.normal(0, 0.1, (96, 96)).astype(np.float32),
        hm_lin=rng.normal(0, 0.1, (96, 96)).astype(np.float32),
        rgb_nn=rng.random((96, 96, 3)).astype(np.float32)
        if with_rgb else None,
        rgb_lin=rng.random((96, 96, 3)).astype(np.float32)
        if with_rgb else None,
        face_map=FaceMap(96, np.zeros((96, 96), np.int32)),
        chunk_point_count=25)


def small_descriptor():
    """Tiny descriptor with the full topology, for fast tests."""
    from terrascout.refiner import ConvLayer, Upsample2

    def enc(c_in):
        return [ConvLayer(c_in, 4, 3, 2, 1, "lrelu"),
                ConvLayer(4, 8, 3, 2, 1, "lrelu"),
                ConvLayer(8, 8, 3, 2, 1, "lrelu")]

    def dec():
        return [Upsample2(), ConvLayer(8, 8, 3, 1, 1, "lrelu"),
                Upsample2(), ConvLayer(8, 8, 3, 1, 1, "lrelu"),
                Upsample2(), ConvLayer(8, 8, 3, 1, 1, "lrelu")]

    stages = {
        "enc_hm_nn": enc(1), "enc_hm_lin": enc(1),
        "enc_rgb_nn": enc(3), "enc_rgb_lin": enc(3),
        "merge": [ConvLayer(32, 16, 1, 1, 0, "lrelu"),
                  ConvLayer(16, 8, 1, 1, 0, "lrelu")],
        "dec_height": dec(), "dec_color": dec(),
        "fuse": [ConvLayer(24, 8, 3, 1, 1, "lrelu"),
                 ConvLayer(8, 4, 3, 1, 1, "linear")],
    }
    d = ArchDescriptor(identity=False, stages=stages)
    d.declared_params = d.parameter_count()
    return d


def measure_amortized(bundle, raw, k, window_s=0.35, rounds=4):
    """Median per-sample latency over equal sustained wall-time windows.

    Short single calls ride CPU burst frequencies on shared hosts, so
    per-call timing systematically flatters small batches; equal-duration
    interleaved windows compare sizes under the same sustained regime.
    """
    import time

    refine_batch([raw] * k, bundle)  # warm up
    samples = []
    for _ in range(rounds):
        t0 = time.perf_counter()
        done = 0
        while time.perf_counter() - t0 < window_s:
            refine_batch([raw] * k, bundle)
            done += k
        samples.append((time.perf_counter() - t0) / done)
    samples.sort()
    return samples[len(samples) // 2]


def pointwise_descriptor():
    """All-1x1 topology; batch working set stays cache-resident, which
    makes per-call overhead visible for latency measurements."""
    from terrascout.refiner import ConvLayer, Upsample2

    def enc(c_in):
        return [ConvLayer(c_in, 4, 1, 2, 0, "lrelu"),
                ConvLayer(4, 8, 1, 2, 0, "lrelu"),
                ConvLayer(8, 8, 1, 2, 0, "lrelu")]

    def dec():
        return [Upsample2(), ConvLayer(8, 8, 1, 1, 0, "lrelu"),
                Upsample2(), ConvLayer(8, 8, 1, 1, 0, "lrelu"),
                Upsample2(), ConvLayer(8, 8, 1, 1, 0, "lrelu")]

    stages = {
        "enc_hm_nn": enc(1), "enc_hm_lin": enc(1),
        "enc_rgb_nn": enc(3), "enc_rgb_lin": enc(3),
        "merge": [ConvLayer(32, 16, 1, 1, 0, "lrelu"),
                  ConvLayer(16, 8, 1, 1, 0, "lrelu")],
        "dec_height": dec(), "dec_color": dec(),
        "fuse": [ConvLayer(24, 8, 1, 1, 0, "lrelu"),
                 ConvLayer(8, 4, 1, 1, 0, "linear")],
    }
    d = ArchDescriptor(identity=False, stages=stages)
    d.declared_params = d.parameter_count()
    return d


class TestConv2d:
    def test_ones_kernel_sums(self):
        x = np.ones((1, 3, 3), np.float32)
        w = np.ones((1, 1, 3, 3), np.float32)
        out = conv2d(x, w, np.zeros(1, np.float32))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 9.0

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 8, 8)).astype(np.float32)
        w = np.zeros((2, 2, 3, 3), np.float32)
        w[0, 0, 1, 1] = 1.0
        w[1, 1, 1, 1] = 1.0
        out = conv2d(x, w, np.zeros(2, np.float32), padding=1)
        assert np.allclose(out, x, atol=1e-6)

    def test_matches_loop_oracle(self, rng):
        for _ in range(8):
            ci = int(rng.integers(1, 4))
            co = int(rng.integers(1, 5))
            k = int(rng.choice([1, 3, 5]))
            s = int(rng.choice([1, 2]))
            p = int(rng.choice([0, 1, 2]))
            h = int(rng.integers(k, 12))
            x = rng.normal(size=(ci, h, h)).astype(np.float32)
            w = rng.normal(size=(co, ci, k, k)).astype(np.float32)
            b = rng.normal(size=co).astype(np.float32)
            got = conv2d(x, w, b, stride=s, padding=p)
            want = conv_oracle(x, w, b, s, p)
            assert got.shape == want.shape
            assert np.abs(got - want).max() < 1e-5

    def test_shape_mismatch(self, rng):
        x = rng.normal(size=(3, 8, 8)).astype(np.float32)
        w = rng.normal(size=(4, 2, 3, 3)).astype(np.float32)
        with pytest.raises(ShapeMismatch):
            conv2d(x, w, np.zeros(4, np.float32))


class TestDescriptor:
    def test_default_parameter_count_near_2_5m(self):
        count = default_descriptor().parameter_count()
        assert 2_250_000 <= count <= 2_750_000

    def test_text_round_trip(self):
        desc = default_descriptor()
        again = ArchDescriptor.from_text(desc.to_text())
        assert again.to_text() == desc.to_text()

    def test_identity_round_trip(self):
        text = identity_descriptor().to_text()
        assert ArchDescriptor.from_text(text).identity

    def test_bad_stage_wiring_rejected(self):
        desc = small_descriptor()
        desc.stages["merge"][0].c_in = 99
        with pytest.raises(ShapeMismatch):
            ArchDescriptor.from_text(desc.to_text())


class TestWeightBundle:
    def test_save_load_round_trip(self, tmp_path, rng):
        desc = small_descriptor()
        bundle = random_weights(desc, seed=3)
        path = tmp_path / "w.lswb"
        save_weights(str(path), bundle)
        loaded = load_weights(str(path))
        assert loaded.parameter_count == bundle.parameter_count
        assert loaded.descriptor.to_text() == desc.to_text()
        for name, tensor in bundle.tensors.items():
            assert np.array_equal(loaded.tensors[name], tensor)

    def test_declared_count_checked(self, tmp_path):
        desc = small_descriptor()
        bundle = random_weights(desc)
        path = tmp_path / "w.lswb"
        save_weights(str(path), bundle)
        raw = bytearray(path.read_bytes())
        # truncate one tensor by shrinking the file
        path.write_bytes(bytes(raw[:-200]))
        with pytest.raises(ShapeMismatch):
            load_weights(str(path))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "w.lswb"
        path.write_bytes(b"")
        with pytest.raises(BadMagic):
            load_weights(str(path))
        path.write_bytes(b"NOPE" + b"\0" * 64)
        with pytest.raises(BadMagic):
            load_weights(str(path))

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "w.lswb"
        path.write_bytes(b"LSWB" + (99).to_bytes(4, "little") +
                         (0).to_bytes(4, "little"))
        with pytest.raises(UnsupportedVersion):
            load_weights(str(path))


class TestRefineBatch:
    def test_output_dims(self, rng):
        bundle = random_weights(small_descriptor(), seed=1)
        out = refine_batch([make_raw(rng)], bundle)[0]
        assert out.heights_rel.shape == (64, 64)
        assert out.rgb.shape == (64, 64, 3)
        assert out.provenance == PROV_REFINED

    def test_batch_invariance_bit_exact(self, rng):
        bundle = random_weights(small_descriptor(), seed=2)
        a = make_raw(rng)
        b = make_raw(rng)
        solo = refine_batch([a], bundle)[0]
        batched = refine_batch([a, b], bundle)[0]
        assert np.array_equal(solo.heights_rel, batched.heights_rel)
        assert np.array_equal(solo.rgb, batched.rgb)

    def test_identical_inputs_identical_outputs(self, rng):
        bundle = random_weights(small_descriptor(), seed=2)
        raw = make_raw(rng)
        outs = refine_batch([raw] * 4, bundle)
        for o in outs[1:]:
            assert np.array_equal(outs[0].heights_rel, o.heights_rel)

    def test_cz_shift_moves_output_exactly(self, rng):
        bundle = random_weights(small_descriptor(), seed=4)
        raw1 = make_raw(rng, key=PatchKey(0, 0, (320.0, 320.0), 100.0))
        raw2 = RawPatch(key=PatchKey(0, 0, (320.0, 320.0), 164.0),
                        hm_nn=raw1.hm_nn, hm_lin=raw1.hm_lin,
                        rgb_nn=raw1.rgb_nn, rgb_lin=raw1.rgb_lin,
                        face_map=raw1.face_map,
                        chunk_point_count=raw1.chunk_point_count)
        out1 = refine_batch([raw1], bundle)[0]
        out2 = refine_batch([raw2], bundle)[0]
        assert np.array_equal(out2.hm, out1.hm + 64.0)

    def test_crop_is_center(self, rng):
        raw = make_raw(rng)
        ident = WeightBundle(1, {}, identity_descriptor())
        out = refine_batch([raw], ident)[0]
        want = raw.hm_lin[CROP:CROP + 64, CROP:CROP + 64] * np.float32(480.0)
        assert np.array_equal(out.heights_rel, want.astype(np.float32))

    def test_colorless_inputs(self, rng):
        bundle = random_weights(small_descriptor(), seed=5)
        out = refine_batch([make_raw(rng, with_rgb=False)], bundle)[0]
        assert out.rgb is None
        assert np.isfinite(out.heights_rel).all()

    def test_colors_clamped(self, rng):
        bundle = random_weights(small_descriptor(), seed=6)
        out = refine_batch([make_raw(rng)], bundle)[0]
        assert out.rgb.min() >= 0.0
        assert out.rgb.max() <= 1.0

    def test_nonfinite_fallback(self, rng):
        desc = small_descriptor()
        bundle = random_weights(desc, seed=7)
        bundle.tensors["fuse.1.bias"][:] = np.nan
        raw = make_raw(rng)
        out = refine_batch([raw], bundle)[0]
        assert out.provenance == PROV_INTERPOLATED
        want = raw.hm_lin[CROP:CROP + 64, CROP:CROP + 64] * np.float32(480.0)
        assert np.array_equal(out.heights_rel, want.astype(np.float32))

    def test_batching_amortizes(self, rng):
        bundle = random_weights(pointwise_descriptor(), seed=8)
        raw = make_raw(rng)
        one = measure_amortized(bundle, raw, 1)
        ten = measure_amortized(bundle, raw, 10)
        assert ten < one, f"batch 10 {ten * 1e3:.2f} ms/patch, " \
                          f"batch 1 {one * 1e3:.2f} ms/patch"
