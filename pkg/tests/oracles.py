"""Reference computations shared by several test modules."""
import numpy as np
import torch

from shpose.model import ModelConfig, build_model
from shpose.training.loop import total_loss

MICRO = dict(num_stacks=1, hourglass_order=1, channels=8, num_joints=2, input_side=32, heatmap_side=8)


def finite_difference_check(upsample_mode, per_tensor=6, h=1e-5, floor=1e-6, seed=0):
    """Worst relative error between autograd and central differences.

    Runs in float64 on a micro model in training mode. Some batch-norm
    shifts have a gradient that is structurally zero (the next layer is
    another normalization), so the denominator has an absolute ``floor``.
    """
    cfg = ModelConfig(upsample_mode=upsample_mode, **MICRO)
    model = build_model(cfg, seed=seed, dtype=torch.float64)
    model.train()
    gen = torch.Generator().manual_seed(seed + 1)
    x = torch.rand(2, 3, 32, 32, generator=gen, dtype=torch.float64)
    y = torch.rand(2, 2, 8, 8, generator=gen, dtype=torch.float64)
    total_loss(model(x), y).backward()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in model.named_parameters():
        flat = p.data.view(-1)
        picks = rng.choice(flat.numel(), min(per_tensor, flat.numel()), replace=False)
        for i in picks:
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + h
                up = total_loss(model(x), y).item()
                flat[i] = old - h
                down = total_loss(model(x), y).item()
                flat[i] = old
            numeric = (up - down) / (2 * h)
            analytic = p.grad.view(-1)[i].item()
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, rel)
    return worst


def random_deconv_specs(count, seed=0):
    """Valid (input, stride, kernel, padding) tuples with a positive output side."""
    rng = np.random.default_rng(seed)
    specs = []
    while len(specs) < count:
        n = int(rng.integers(1, 17))
        s = int(rng.integers(1, 5))
        k = int(rng.integers(1, 8))
        p = int(rng.integers(0, k))
        if s * (n - 1) + k - 2 * p > 0:
            specs.append((n, s, k, p))
    return specs


def realized_deconv_side(n, s, k, p):
    layer = torch.nn.ConvTranspose2d(1, 1, k, stride=s, padding=p)
    with torch.no_grad():
        return layer(torch.zeros(1, 1, n, n)).shape[-1]


class PlantedHeatmapModel(torch.nn.Module):
    """Stand-in network that emits ideal Gaussian heatmaps for known joints.

    ``planted`` holds joint positions in network-input pixels; the forward
    pass ignores the image and renders targets at those positions.
    """

    def __init__(self, config=None, sigma=2.0):
        super().__init__()
        self.config = config or ModelConfig(num_stacks=1, channels=4)
        self.sigma = sigma
        self.anchor = torch.nn.Parameter(torch.zeros(1, dtype=torch.float64))
        self.planted = None

    def forward(self, x):
        from shpose.heatmap import GaussianSpec, KeypointSet, render_targets

        cfg = self.config
        scale = cfg.heatmap_side / cfg.input_side
        kps = KeypointSet.all_visible(np.asarray(self.planted) * scale)
        hm = render_targets(kps, cfg.heatmap_side, cfg.heatmap_side, GaussianSpec(self.sigma))
        return [torch.from_numpy(np.repeat(hm[None], x.shape[0], axis=0))]
