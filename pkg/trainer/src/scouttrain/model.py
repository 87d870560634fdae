"""Refiner network as a torch module, built from the descriptor text.

The descriptor grammar and the LSWB bundle layout are the shared
contract with the viewer runtime (see the core's docs/wire.md); this
module parses and emits both without importing the viewer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

STAGES = ("enc_hm_nn", "enc_hm_lin", "enc_rgb_nn", "enc_rgb_lin",
          "merge", "dec_height", "dec_color", "fuse")
RASTER_RES = 96
OUTPUT_RES = 64
CROP = (RASTER_RES - OUTPUT_RES) // 2
MAGIC = b"LSWB"
BUNDLE_VERSION = 1


@dataclass
class LayerSpec:
    kind: str                       # "conv" | "up2"
    c_in: int = 0
    c_out: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    activation: str = "lrelu"


@dataclass
class Descriptor:
    stages: dict[str, list[LayerSpec]] = field(default_factory=dict)

    def parameter_count(self) -> int:
        total = 0
        for layers in self.stages.values():
            for sp in layers:
                if sp.kind == "conv":
                    total += sp.c_out * (sp.c_in * sp.kernel ** 2 + 1)
        return total

    def to_text(self) -> str:
        lines = ["arch 1", f"params {self.parameter_count()}"]
        for name in STAGES:
            lines.append(f"stage {name}")
            for sp in self.stages[name]:
                if sp.kind == "up2":
                    lines.append("up2")
                else:
                    lines.append(f"conv {sp.c_in} {sp.c_out} {sp.kernel} "
                                 f"{sp.stride} {sp.padding} "
                                 f"{sp.activation}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Descriptor":
        stages: dict[str, list[LayerSpec]] = {}
        current = None
        for ln in text.splitlines():
            ln = ln.strip()
            if not ln or ln.startswith("#") or ln.startswith("arch") or \
                    ln.startswith("params"):
                continue
            parts = ln.split()
            if parts[0] == "stage":
                current = stages.setdefault(parts[1], [])
            elif parts[0] == "up2":
                current.append(LayerSpec(kind="up2"))
            elif parts[0] == "conv":
                current.append(LayerSpec(
                    kind="conv", c_in=int(parts[1]), c_out=int(parts[2]),
                    kernel=int(parts[3]), stride=int(parts[4]),
                    padding=int(parts[5]), activation=parts[6]))
            else:
                raise ValueError(f"bad descriptor line {ln!r}")
        missing = [s for s in STAGES if s not in stages]
        if missing:
            raise ValueError(f"descriptor missing stages {missing}")
        return cls(stages=stages)


def default_trainer_descriptor(width: int = 1) -> Descriptor:
    """Same shape family as the shipped runtime default; width scales
    channel counts down for fast test models."""
    def c(n):
        return max(4, n // width)

    def enc(c_in):
        return [LayerSpec("conv", c_in, c(48), 3, 2, 1),
                LayerSpec("conv", c(48), c(96), 3, 2, 1),
                LayerSpec("conv", c(96), c(192), 3, 2, 1)]

    def dec(c_in):
        return [LayerSpec("up2"), LayerSpec("conv", c_in, c(96), 3, 1, 1),
                LayerSpec("up2"), LayerSpec("conv", c(96), c(64), 3, 1, 1),
                LayerSpec("up2"), LayerSpec("conv", c(64), c(32), 3, 1, 1)]

    merged = 4 * c(192)
    out = c(320)
    return Descriptor(stages={
        "enc_hm_nn": enc(1), "enc_hm_lin": enc(1),
        "enc_rgb_nn": enc(3), "enc_rgb_lin": enc(3),
        "merge": [LayerSpec("conv", merged, merged, 1, 1, 0),
                  LayerSpec("conv", merged, out, 1, 1, 0)],
        "dec_height": dec(out), "dec_color": dec(out),
        "fuse": [LayerSpec("conv", 8 + 2 * c(32), c(64), 3, 1, 1),
                 LayerSpec("conv", c(64), c(32), 3, 1, 1),
                 LayerSpec("conv", c(32), 4, 3, 1, 1, "linear")],
    })


class _Stage(nn.Module):
    def __init__(self, specs: list[LayerSpec]):
        super().__init__()
        self.specs = specs
        self.convs = nn.ModuleDict()
        for li, sp in enumerate(specs):
            if sp.kind == "conv":
                self.convs[str(li)] = nn.Conv2d(
                    sp.c_in, sp.c_out, sp.kernel, stride=sp.stride,
                    padding=sp.padding)

    def forward(self, x):
        for li, sp in enumerate(self.specs):
            if sp.kind == "up2":
                x = torch.nn.functional.interpolate(x, scale_factor=2,
                                                    mode="nearest")
            else:
                x = self.convs[str(li)](x)
                if sp.activation == "lrelu":
                    x = torch.nn.functional.leaky_relu(x, 0.01)
        return x


class RefinerNet(nn.Module):
    """Four encoders -> two-step merge -> two decoders -> skip + fuse."""

    def __init__(self, descriptor: Descriptor):
        super().__init__()
        self.descriptor = descriptor
        self.stages = nn.ModuleDict(
            {name: _Stage(descriptor.stages[name]) for name in STAGES})

    def forward(self, x):
        """x: (B, 8, 96, 96) -> (B, 4, 64, 64)."""
        feats = [self.stages["enc_hm_nn"](x[:, 0:1]),
                 self.stages["enc_hm_lin"](x[:, 1:2]),
                 self.stages["enc_rgb_nn"](x[:, 2:5]),
                 self.stages["enc_rgb_lin"](x[:, 5:8])]
        merged = self.stages["merge"](torch.cat(feats, dim=1))
        dec_h = self.stages["dec_height"](merged)
        dec_c = self.stages["dec_color"](merged)
        fused = self.stages["fuse"](torch.cat([x, dec_h, dec_c], dim=1))
        return fused[:, :, CROP:CROP + OUTPUT_RES, CROP:CROP + OUTPUT_RES]

    def named_bundle_tensors(self):
        for name, stage in self.stages.items():
            for li, conv in stage.convs.items():
                yield f"{name}.{li}.weight", conv.weight
                yield f"{name}.{li}.bias", conv.bias


def export_bundle(path: str, model: RefinerNet):
    """Write weights + descriptor in the LSWB interchange format."""
    tensors = list(model.named_bundle_tensors())
    with open(path, "wb") as fp:
        fp.write(MAGIC)
        fp.write(struct.pack("<II", BUNDLE_VERSION, len(tensors)))
        for name, tensor in tensors:
            data = np.ascontiguousarray(
                tensor.detach().cpu().numpy(), dtype="<f4")
            nb = name.encode()
            fp.write(struct.pack("<H", len(nb)))
            fp.write(nb)
            fp.write(struct.pack("<B", data.ndim))
            fp.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fp.write(data.tobytes())
        desc = model.descriptor.to_text().encode()
        fp.write(struct.pack("<I", len(desc)))
        fp.write(desc)


def import_bundle(path: str) -> RefinerNet:
    """Load an LSWB bundle back into a torch model (resume, inspection)."""
    with open(path, "rb") as fp:
        blob = fp.read()
    if blob[:4] != MAGIC:
        raise ValueError("bad bundle magic")
    version, n_tensors = struct.unpack_from("<II", blob, 4)
    if version != BUNDLE_VERSION:
        raise ValueError(f"unsupported bundle version {version}")
    off = 12
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode()
        off += name_len
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        count = int(np.prod(dims))
        tensors[name] = np.frombuffer(
            blob, dtype="<f4", count=count, offset=off).reshape(dims).copy()
        off += 4 * count
    (desc_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    model = RefinerNet(Descriptor.from_text(blob[off:off + desc_len]
                                            .decode()))
    with torch.no_grad():
        for name, param in model.named_bundle_tensors():
            param.copy_(torch.from_numpy(tensors[name]))
    return model
