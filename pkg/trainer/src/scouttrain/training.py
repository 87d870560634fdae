"""Masked, clipped-MSE training loop and bundle export."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .model import Descriptor, RefinerNet, export_bundle

log = logging.getLogger(__name__)

OPTIMIZER_DEFAULTS = dict(lr=1e-4, betas=(0.9, 0.999), eps=1e-5,
                          weight_decay=1e-2, amsgrad=False)
SCHEDULER_MILESTONES = [25, 50]
SCHEDULER_GAMMA = 0.1
DEFAULT_EPOCHS = 75


def masked_clipped_mse(pred: torch.Tensor, target: torch.Tensor,
                       mask: torch.Tensor) -> torch.Tensor:
    """Per-element squared error clipped to [0,1]; masked elements
    contribute exactly zero; heightmap and texture halves averaged."""
    se = torch.clamp((pred - target) ** 2, 0.0, 1.0) * mask
    h_loss = se[:, 0:1].mean()
    c_loss = se[:, 1:4].mean()
    return (h_loss + c_loss) / 2


def make_optimizer(model: torch.nn.Module,
                   lr: float | None = None) -> torch.optim.AdamW:
    params = dict(OPTIMIZER_DEFAULTS)
    if lr is not None:
        params["lr"] = lr
    return torch.optim.AdamW(model.parameters(), **params)


def make_scheduler(optimizer) -> torch.optim.lr_scheduler.MultiStepLR:
    return torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=SCHEDULER_MILESTONES, gamma=SCHEDULER_GAMMA)


def init_height_passthrough(model: RefinerNet):
    """Start the height head as an exact copy of the linear raster.

    Two dedicated channels carry +h and -h through the fuse stack; with
    leaky-ReLU slope s after k layers, (lrelu^k(h) - lrelu^k(-h)) equals
    h * (1 + s^k), so the final tap divides by that factor. Everything
    else keeps its random init, but the height output row is zeroed so
    the network output starts exactly at the interpolated baseline and
    learns residual corrections from there.
    """
    convs = model.stages["fuse"].convs
    keys = sorted(convs.keys(), key=int)
    slope = 0.01
    hm_lin_channel = 1
    with torch.no_grad():
        first = convs[keys[0]]
        c = first.kernel_size[0] // 2
        for row, sign in ((0, 1.0), (1, -1.0)):
            first.weight[row].zero_()
            first.weight[row, hm_lin_channel, c, c] = sign
            first.bias[row] = 0.0
        for key in keys[1:-1]:
            conv = convs[key]
            c = conv.kernel_size[0] // 2
            for row in (0, 1):
                conv.weight[row].zero_()
                conv.weight[row, row, c, c] = 1.0
                conv.bias[row] = 0.0
            conv.weight[2:, 0:2].zero_()  # no crosstalk out of the pair
        last = convs[keys[-1]]
        c = last.kernel_size[0] // 2
        gain = 1.0 / (1.0 + slope ** (len(keys) - 1))
        last.weight[0].zero_()
        last.weight[0, 0, c, c] = gain
        last.weight[0, 1, c, c] = -gain
        last.bias[0] = 0.0
        last.weight[1:, 0:2].zero_()  # color rows ignore the pair


@dataclass
class TrainResult:
    model: RefinerNet
    initial_loss: float
    final_loss: float
    curve: list


def train(inputs: np.ndarray, targets: np.ndarray, masks: np.ndarray,
          descriptor: Descriptor, epochs: int = DEFAULT_EPOCHS,
          batch_size: int = 64, seed: int = 0,
          checkpoint_path: str | None = None,
          max_steps: int | None = None, lr: float | None = None,
          use_scheduler: bool = True,
          passthrough_init: bool = True) -> TrainResult:
    """Train the refiner; aborts (with checkpoint) if the loss diverges.

    lr/use_scheduler override the recipe defaults for sanity harnesses
    (overfit probes); production runs keep the defaults.
    """
    torch.manual_seed(seed)
    model = RefinerNet(descriptor)
    if passthrough_init:
        init_height_passthrough(model)
    optimizer = make_optimizer(model, lr=lr)
    scheduler = make_scheduler(optimizer) if use_scheduler else None
    x = torch.from_numpy(inputs)
    y = torch.from_numpy(targets)
    m = torch.from_numpy(masks)
    n = len(x)
    if n == 0:
        raise ValueError("empty training set")

    with torch.no_grad():
        initial = float(masked_clipped_mse(model(x[: min(n, 64)]),
                                           y[: min(n, 64)],
                                           m[: min(n, 64)]))
    curve = []
    rng = np.random.default_rng(seed)
    steps = 0
    final = initial
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            optimizer.zero_grad()
            loss = masked_clipped_mse(model(x[idx]), y[idx], m[idx])
            if not torch.isfinite(loss):
                if checkpoint_path:
                    export_bundle(checkpoint_path, model)
                raise FloatingPointError(
                    f"loss diverged at epoch {epoch}; checkpoint saved")
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
            final = epoch_losses[-1]
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        if scheduler is not None:
            scheduler.step()
        curve.append(float(np.mean(epoch_losses)))
        log.info("epoch %d loss %.6f lr %.2e", epoch, curve[-1],
                 optimizer.param_groups[0]["lr"])
        if max_steps is not None and steps >= max_steps:
            break
    model.eval()
    return TrainResult(model=model, initial_loss=initial, final_loss=final,
                       curve=curve)
