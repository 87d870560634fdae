"""Heightmap refinement network: descriptor-driven CNN inference in numpy.

Topology is fixed (four input encoders, a two-step position-wise
fully-connected merge, separate height/color decoders, one skip
connection concatenating the original inputs, and a fusing stack that
reduces to 1 height + 3 color channels before a center crop); the
descriptor carried inside every weight bundle pins the layer sizes so
this runtime and the trainer cannot drift.

All math is float32. Batching amortizes per-call work (weight packing,
staging copies); samples are processed independently so results are
bit-identical regardless of batch composition.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, ShapeMismatch, UnsupportedVersion
from .patches import OUTPUT_RES, PAD_RADIUS, RASTER_RES, PatchKey, RawPatch

log = logging.getLogger(__name__)

MAGIC = b"LSWB"
BUNDLE_VERSION = 1

STAGES = ("enc_hm_nn", "enc_hm_lin", "enc_rgb_nn", "enc_rgb_lin",
          "merge", "dec_height", "dec_color", "fuse")
ENC_IN = {"enc_hm_nn": 1, "enc_hm_lin": 1, "enc_rgb_nn": 3, "enc_rgb_lin": 3}

CROP = (RASTER_RES - OUTPUT_RES) // 2  # 16 texels of context per side

# im2col block budget; keeps the gather + GEMM working set cache-resident
_CONV_BLOCK_BYTES = 8 << 20

PROV_INTERPOLATED = "interpolated-only"
PROV_REFINED = "refined"
PROV_BAKED = "fullres-baked"


@dataclass
class ConvLayer:
    c_in: int
    c_out: int
    kernel: int
    stride: int
    padding: int
    activation: str  # "lrelu" or "linear"


class Upsample2:
    """Nearest-neighbor x2 upsampling; no parameters."""


@dataclass
class ArchDescriptor:
    identity: bool
    stages: dict[str, list]
    declared_params: int | None = None

    def parameter_count(self) -> int:
        total = 0
        for layers in self.stages.values():
            for layer in layers:
                if isinstance(layer, ConvLayer):
                    total += layer.c_out * layer.c_in * layer.kernel ** 2
                    total += layer.c_out
        return total

    def to_text(self) -> str:
        lines = ["arch 1"]
        if self.identity:
            lines.append("identity")
        else:
            lines.append(f"params {self.parameter_count()}")
            for name in STAGES:
                lines.append(f"stage {name}")
                for layer in self.stages[name]:
                    if isinstance(layer, Upsample2):
                        lines.append("up2")
                    else:
                        lines.append(
                            f"conv {layer.c_in} {layer.c_out} {layer.kernel}"
                            f" {layer.stride} {layer.padding}"
                            f" {layer.activation}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ArchDescriptor":
        lines = [ln.strip() for ln in text.splitlines()
                 if ln.strip() and not ln.startswith("#")]
        if not lines or not lines[0].startswith("arch "):
            raise ShapeMismatch("descriptor missing arch line")
        if lines[0] != "arch 1":
            raise UnsupportedVersion(f"descriptor {lines[0]!r}")
        if len(lines) > 1 and lines[1] == "identity":
            return cls(identity=True, stages={})
        stages: dict[str, list] = {}
        declared = None
        current: list | None = None
        for ln in lines[1:]:
            parts = ln.split()
            if parts[0] == "params":
                declared = int(parts[1])
            elif parts[0] == "stage":
                current = stages.setdefault(parts[1], [])
            elif parts[0] == "up2":
                current.append(Upsample2())
            elif parts[0] == "conv":
                current.append(ConvLayer(int(parts[1]), int(parts[2]),
                                         int(parts[3]), int(parts[4]),
                                         int(parts[5]), parts[6]))
            else:
                raise ShapeMismatch(f"unknown descriptor line {ln!r}")
        desc = cls(identity=False, stages=stages, declared_params=declared)
        desc.validate()
        return desc

    def validate(self):
        if self.identity:
            return
        missing = [s for s in STAGES if s not in self.stages]
        if missing:
            raise ShapeMismatch(f"descriptor missing stages {missing}")
        for name, c_in in ENC_IN.items():
            if self._stage_in(name) != c_in:
                raise ShapeMismatch(f"{name} must take {c_in} channels")
        enc_out = {n: self._stage_out(n) for n in ENC_IN}
        merged_in = sum(enc_out.values())
        if self._stage_in("merge") != merged_in:
            raise ShapeMismatch(
                f"merge expects {self._stage_in('merge')} channels, "
                f"encoders produce {merged_in}")
        for dec in ("dec_height", "dec_color"):
            if self._stage_in(dec) != self._stage_out("merge"):
                raise ShapeMismatch(f"{dec} input != merge output")
        skip_in = 8 + self._stage_out("dec_height") + \
            self._stage_out("dec_color")
        if self._stage_in("fuse") != skip_in:
            raise ShapeMismatch(
                f"fuse expects {self._stage_in('fuse')}, skip concat "
                f"gives {skip_in}")
        if self._stage_out("fuse") != 4:
            raise ShapeMismatch("fuse must emit 4 channels (1 h + 3 rgb)")
        # spatial bookkeeping: encoder downsampling must be undone by up2
        size = RASTER_RES
        for layer in self.stages["enc_hm_nn"]:
            size = (size + 2 * layer.padding - layer.kernel) \
                // layer.stride + 1
        for layer in self.stages["merge"]:
            size = (size + 2 * layer.padding - layer.kernel) \
                // layer.stride + 1
        for layer in self.stages["dec_height"]:
            if isinstance(layer, Upsample2):
                size *= 2
            else:
                size = (size + 2 * layer.padding - layer.kernel) \
                    // layer.stride + 1
        if size != RASTER_RES:
            raise ShapeMismatch(
                f"decoder output {size}x{size}, expected {RASTER_RES}")
        if self.declared_params is not None and \
                self.declared_params != self.parameter_count():
            raise ShapeMismatch(
                f"declared {self.declared_params} params, layers define "
                f"{self.parameter_count()}")

    def _convs(self, stage: str) -> list[ConvLayer]:
        return [l for l in self.stages[stage] if isinstance(l, ConvLayer)]

    def _stage_in(self, stage: str) -> int:
        return self._convs(stage)[0].c_in

    def _stage_out(self, stage: str) -> int:
        return self._convs(stage)[-1].c_out

    def tensor_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for name in STAGES:
            for li, layer in enumerate(self.stages[name]):
                if isinstance(layer, ConvLayer):
                    shapes[f"{name}.{li}.weight"] = \
                        (layer.c_out, layer.c_in, layer.kernel, layer.kernel)
                    shapes[f"{name}.{li}.bias"] = (layer.c_out,)
        return shapes


def default_descriptor() -> ArchDescriptor:
    """Default sizes tuned to ~2.4M learnable parameters."""
    def enc(c_in):
        return [ConvLayer(c_in, 48, 3, 2, 1, "lrelu"),
                ConvLayer(48, 96, 3, 2, 1, "lrelu"),
                ConvLayer(96, 192, 3, 2, 1, "lrelu")]

    def dec():
        return [Upsample2(), ConvLayer(320, 96, 3, 1, 1, "lrelu"),
                Upsample2(), ConvLayer(96, 64, 3, 1, 1, "lrelu"),
                Upsample2(), ConvLayer(64, 32, 3, 1, 1, "lrelu")]

    stages = {
        "enc_hm_nn": enc(1),
        "enc_hm_lin": enc(1),
        "enc_rgb_nn": enc(3),
        "enc_rgb_lin": enc(3),
        "merge": [ConvLayer(768, 768, 1, 1, 0, "lrelu"),
                  ConvLayer(768, 320, 1, 1, 0, "lrelu")],
        "dec_height": dec(),
        "dec_color": dec(),
        "fuse": [ConvLayer(72, 64, 3, 1, 1, "lrelu"),
                 ConvLayer(64, 32, 3, 1, 1, "lrelu"),
                 ConvLayer(32, 4, 3, 1, 1, "linear")],
    }
    desc = ArchDescriptor(identity=False, stages=stages)
    desc.declared_params = desc.parameter_count()
    return desc


def identity_descriptor() -> ArchDescriptor:
    """Pass-through refiner: center crop of the linear interpolation."""
    return ArchDescriptor(identity=True, stages={})


@dataclass
class WeightBundle:
    format_version: int
    tensors: dict[str, np.ndarray]
    descriptor: ArchDescriptor

    @property
    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def validate(self):
        if self.descriptor.identity:
            if self.tensors:
                raise ShapeMismatch("identity bundles carry no tensors")
            return
        expected = self.descriptor.tensor_shapes()
        for name, shape in expected.items():
            t = self.tensors.get(name)
            if t is None:
                raise ShapeMismatch(f"missing tensor {name}")
            if tuple(t.shape) != shape:
                raise ShapeMismatch(
                    f"tensor {name} has shape {t.shape}, expected {shape}")
        extra = set(self.tensors) - set(expected)
        if extra:
            raise ShapeMismatch(f"unexpected tensors {sorted(extra)}")
        if self.descriptor.declared_params is not None and \
                self.parameter_count != self.descriptor.declared_params:
            raise ShapeMismatch("parameter count mismatch")


def save_weights(path: str, bundle: WeightBundle):
    with open(path, "wb") as fp:
        fp.write(MAGIC)
        fp.write(struct.pack("<II", BUNDLE_VERSION, len(bundle.tensors)))
        for name, tensor in bundle.tensors.items():
            data = np.ascontiguousarray(tensor, dtype="<f4")
            nb = name.encode()
            fp.write(struct.pack("<H", len(nb)))
            fp.write(nb)
            fp.write(struct.pack("<B", data.ndim))
            fp.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fp.write(data.tobytes())
        desc = bundle.descriptor.to_text().encode()
        fp.write(struct.pack("<I", len(desc)))
        fp.write(desc)


def load_weights(path: str) -> WeightBundle:
    with open(path, "rb") as fp:
        blob = fp.read()
    if blob[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r} magic")
    version, n_tensors = struct.unpack_from("<II", blob, 4)
    if version != BUNDLE_VERSION:
        raise UnsupportedVersion(f"weight bundle version {version}")
    off = 12
    tensors = {}
    try:
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + name_len].decode()
            off += name_len
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
            if arr.size != count:
                raise ShapeMismatch(f"tensor {name} truncated")
            off += 4 * count
            tensors[name] = arr.reshape(dims).copy()
        (desc_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        desc_text = blob[off:off + desc_len].decode()
        if len(blob[off:off + desc_len]) != desc_len:
            raise ShapeMismatch("descriptor truncated")
    except struct.error as exc:
        raise ShapeMismatch(f"bundle truncated: {exc}") from exc
    bundle = WeightBundle(format_version=version, tensors=tensors,
                          descriptor=ArchDescriptor.from_text(desc_text))
    bundle.validate()
    return bundle


def random_weights(descriptor: ArchDescriptor, seed: int = 0) -> WeightBundle:
    """He-style random init; used for untrained-inference tests."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in descriptor.tensor_shapes().items():
        if name.endswith("weight"):
            fan_in = int(np.prod(shape[1:]))
            tensors[name] = rng.normal(
                0, np.sqrt(2.0 / fan_in), shape).astype(np.float32)
        else:
            tensors[name] = np.zeros(shape, dtype=np.float32)
    bundle = WeightBundle(BUNDLE_VERSION, tensors, descriptor)
    bundle.validate()
    return bundle


def _conv_batched(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                  stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation over a B x C_in x H x W batch.

    One im2col + one stacked matmul per layer, so per-call dispatch work
    is shared by the whole batch; numpy's stacked matmul runs one
    identically-shaped GEMM per sample, which keeps each sample's result
    independent of who else is in the batch (bit for bit).
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatch("expected BCHW input and OIKK kernel")
    bsz, c_in, h, w = x.shape
    c_out, c_in2, kh, kw = weight.shape
    if c_in2 != c_in:
        raise ShapeMismatch(f"kernel wants {c_in2} channels, input has "
                            f"{c_in}")
    if bias.shape != (c_out,):
        raise ShapeMismatch("bias length != output channels")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding),
                       (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeMismatch("kernel larger than padded input")
    flat = weight.reshape(c_out, c_in * kh * kw)

    if kh == kw == 1:
        # pointwise: the column matrix is the (strided) input itself
        cols = x[:, :, ::stride, ::stride].reshape(bsz, c_in, ho * wo) \
            if stride == 1 else np.ascontiguousarray(
                x[:, :, ::stride, ::stride]).reshape(bsz, c_in, ho * wo)
        out = np.matmul(flat, cols) + bias[:, None]
        return out.reshape(bsz, c_out, ho, wo)

    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw),
                                                       axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # B,C,ho,wo,kh,kw
    # feature-major column matrix: the innermost copied axis is the image
    # row, so the gather runs in long contiguous strips; samples are
    # processed in blocks that bound the im2col working set (per-sample
    # results do not depend on the blocking)
    per_sample = c_in * kh * kw * ho * wo * 4
    block = max(1, _CONV_BLOCK_BYTES // per_sample)
    out = np.empty((bsz, c_out, ho * wo), dtype=np.float32)
    for s in range(0, bsz, block):
        chunk = windows[s:s + block]
        cols = np.ascontiguousarray(chunk.transpose(0, 1, 4, 5, 2, 3)) \
            .reshape(len(chunk), c_in * kh * kw, ho * wo)
        out[s:s + block] = np.matmul(flat, cols) + bias[:, None]
    return out.reshape(bsz, c_out, ho, wo)


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
           stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation of one C_in x H x W input with C_out filters."""
    if x.ndim != 3:
        raise ShapeMismatch("conv2d expects CHW input")
    return _conv_batched(x[None], weight, bias, stride, padding)[0]


def _lrelu(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, x, np.float32(0.01) * x)


def _upsample2(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=2).repeat(2, axis=3)


class _Forward:
    """Weights packed once per call; layers run once per batch."""

    def __init__(self, bundle: WeightBundle):
        self.desc = bundle.descriptor
        self.params = {}
        for name in STAGES:
            layers = []
            for li, layer in enumerate(self.desc.stages[name]):
                if isinstance(layer, Upsample2):
                    layers.append(("up2", None, None, None))
                else:
                    w = np.ascontiguousarray(
                        bundle.tensors[f"{name}.{li}.weight"],
                        dtype=np.float32)
                    b = bundle.tensors[f"{name}.{li}.bias"].astype(
                        np.float32)
                    layers.append(("conv", layer, w, b))
            self.params[name] = layers

    def _stage(self, name: str, x: np.ndarray) -> np.ndarray:
        for kind, layer, w, b in self.params[name]:
            if kind == "up2":
                x = _upsample2(x)
            else:
                x = _conv_batched(x, w, b, stride=layer.stride,
                                  padding=layer.padding)
                if layer.activation == "lrelu":
                    x = _lrelu(x)
        return x

    def run(self, inputs: np.ndarray) -> np.ndarray:
        """inputs: B x 8 x 96 x 96 (hm_nn, hm_lin, rgb_nn, rgb_lin)."""
        feats = [self._stage("enc_hm_nn", inputs[:, 0:1]),
                 self._stage("enc_hm_lin", inputs[:, 1:2]),
                 self._stage("enc_rgb_nn", inputs[:, 2:5]),
                 self._stage("enc_rgb_lin", inputs[:, 5:8])]
        merged = self._stage("merge", np.concatenate(feats, axis=1))
        dec_h = self._stage("dec_height", merged)
        dec_c = self._stage("dec_color", merged)
        fused = self._stage("fuse",
                            np.concatenate([inputs, dec_h, dec_c], axis=1))
        return fused  # B x 4 x 96 x 96


@dataclass
class RefinedPatch:
    """Renderable 64x64 textured heightmap in model space."""
    key: PatchKey
    heights_rel: np.ndarray        # (64,64) float32, meters above c_z
    rgb: np.ndarray | None         # (64,64,3) float32 in [0,1]
    provenance: str

    @property
    def hm(self) -> np.ndarray:
        """Absolute heights, meters (float64 so c_z shifts stay exact)."""
        return self.heights_rel.astype(np.float64) + self.key.c_z


def _staging_copy(raws: list[RawPatch]) -> np.ndarray:
    """Contiguous batch assembly (colorless inputs become zero planes)."""
    batch = np.zeros((len(raws), 8, RASTER_RES, RASTER_RES),
                     dtype=np.float32)
    for i, raw in enumerate(raws):
        batch[i, 0] = raw.hm_nn
        batch[i, 1] = raw.hm_lin
        if raw.rgb_nn is not None:
            batch[i, 2:5] = raw.rgb_nn.transpose(2, 0, 1)
            batch[i, 5:8] = raw.rgb_lin.transpose(2, 0, 1)
    return batch


def _crop(arr: np.ndarray) -> np.ndarray:
    return arr[..., CROP:CROP + OUTPUT_RES, CROP:CROP + OUTPUT_RES]


def refine_batch(raws: list[RawPatch],
                 weights: WeightBundle) -> list[RefinedPatch]:
    """Run the refinement network over a batch of raw patches.

    Output heights are denormalized against each patch's c_z; colors are
    clamped to [0,1]. A non-finite network output downgrades that patch
    to its interpolated raster instead of failing the batch.
    """
    if not raws:
        raise ShapeMismatch("refine_batch requires a non-empty batch")
    for raw in raws:
        if raw.hm_nn.shape != (RASTER_RES, RASTER_RES):
            raise ShapeMismatch(
                f"raw patch raster is {raw.hm_nn.shape}, expected "
                f"{(RASTER_RES, RASTER_RES)}")

    if weights.descriptor.identity:
        out = []
        for raw in raws:
            rgb = _crop(raw.rgb_lin.transpose(2, 0, 1)).transpose(1, 2, 0) \
                if raw.rgb_lin is not None else None
            out.append(RefinedPatch(
                key=raw.key,
                heights_rel=(_crop(raw.hm_lin) *
                             np.float32(PAD_RADIUS)).astype(np.float32),
                rgb=np.clip(rgb, 0.0, 1.0) if rgb is not None else None,
                provenance=PROV_REFINED))
        return out

    forward = _Forward(weights)
    batch = _staging_copy(raws)
    fused_batch = forward.run(batch)
    out = []
    for i, raw in enumerate(raws):
        cropped = _crop(fused_batch[i])
        if not np.isfinite(cropped).all():
            log.warning("non-finite activation for patch (%d,%d); keeping "
                        "interpolated raster", raw.key.i, raw.key.j)
            rgb = _crop(raw.rgb_lin.transpose(2, 0, 1)).transpose(1, 2, 0) \
                if raw.rgb_lin is not None else None
            out.append(RefinedPatch(
                key=raw.key,
                heights_rel=(_crop(raw.hm_lin) *
                             np.float32(PAD_RADIUS)).astype(np.float32),
                rgb=rgb, provenance=PROV_INTERPOLATED))
            continue
        heights_rel = (cropped[0] * np.float32(PAD_RADIUS)).astype(
            np.float32)
        rgb = None
        if raw.rgb_nn is not None:
            rgb = np.clip(cropped[1:4].transpose(1, 2, 0), 0.0, 1.0)
        out.append(RefinedPatch(key=raw.key, heights_rel=heights_rel,
                                rgb=rgb, provenance=PROV_REFINED))
    return out
