"""Write the AlexNet-architecture test fixtures.

Outputs (in the given directory):
  alexnet.mrpw             AlexNet `features` stack, seeded random weights
  golden.png               the 3x64x64 golden test image
  alexnet_golden_64.mrpw   torch activations of golden.png at x1
  alexnet_golden_128.mrpw  torch activations of golden.png upscaled x2

The weights are a deterministic He-normal initialisation, not ImageNet
weights. They exercise exactly the same architecture, so the golden check is
a cross-implementation test of the forward pass. Pass --pretrained to export
torchvision's ImageNet weights instead (needs them in the torch cache).

Usage: python tools/make_alexnet_fixture.py fixtures/ [--pretrained]
"""

import argparse
import os

import numpy as np
import torch
import torch.nn.functional as F
import torchvision
from PIL import Image

import mrpw

MEAN = [0.485, 0.456, 0.406]
STD = [0.229, 0.224, 0.225]
# ReLU outputs following each of the five conv layers
TAPS = {1, 4, 7, 9, 11}


def build(pretrained: bool):
    torch.manual_seed(0)
    if pretrained:
        net = torchvision.models.alexnet(weights="IMAGENET1K_V1").features
    else:
        net = torchvision.models.alexnet(weights=None).features
        for m in net:
            if isinstance(m, torch.nn.Conv2d):
                torch.nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
                torch.nn.init.uniform_(m.bias, -0.05, 0.05)
    return net.eval()


def manifest_for(net, pretrained: bool) -> tuple:
    layers, entries = [], []
    for i, m in enumerate(net):
        name = f"features.{i}"
        if isinstance(m, torch.nn.Conv2d):
            layers.append({
                "name": name, "kind": "conv",
                "weight": f"{name}.weight", "bias": f"{name}.bias",
                "in_channels": m.in_channels, "out_channels": m.out_channels,
                "kernel": list(m.kernel_size), "stride": m.stride[0], "padding": m.padding[0],
            })
            entries.append((f"{name}.weight", m.weight.detach().numpy()))
            entries.append((f"{name}.bias", m.bias.detach().numpy()))
        elif isinstance(m, torch.nn.ReLU):
            layers.append({"name": name, "kind": "relu"})
        elif isinstance(m, torch.nn.MaxPool2d):
            layers.append({"name": name, "kind": "maxpool", "size": m.kernel_size, "stride": m.stride})
        else:
            raise SystemExit(f"unsupported layer {m!r}")
        layers[-1]["tap"] = i in TAPS
    manifest = {
        "backbone": "alexnet",
        "input_channels": 3,
        "mean": MEAN,
        "std": STD,
        "layers": layers,
        "source": {
            "framework": f"torch {torch.__version__}, torchvision {torchvision.__version__}",
            "weights": "IMAGENET1K_V1" if pretrained else "kaiming_normal(seed=0)",
        },
    }
    return manifest, entries


def golden_image() -> np.ndarray:
    """Smooth shading, hard edges and fine texture, 64x64 RGB uint8."""
    rng = np.random.default_rng(20240611)
    y, x = np.mgrid[0:64, 0:64] / 63.0
    img = np.stack([0.3 + 0.5 * x, 0.2 + 0.6 * y, 0.6 - 0.3 * x * y], axis=-1)
    disk = (x - 0.35) ** 2 + (y - 0.4) ** 2 < 0.06
    img[disk] = [0.9, 0.35, 0.2]
    square = (np.abs(x - 0.72) < 0.14) & (np.abs(y - 0.7) < 0.12)
    img[square] = [0.15, 0.25, 0.7]
    stripes = (np.sin(40 * x + 10 * y) > 0.6) & (y < 0.25)
    img[stripes] *= 0.5
    img += rng.normal(0, 0.03, img.shape)
    return (np.clip(img, 0, 1) * 255).round().astype(np.uint8)


def taps(net, x):
    out = []
    for i, m in enumerate(net):
        x = m(x)
        if i in TAPS:
            out.append(x[0].detach().numpy())
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("--pretrained", action="store_true")
    args = ap.parse_args()
    os.makedirs(args.out_dir, exist_ok=True)

    net = build(args.pretrained)
    manifest, entries = manifest_for(net, args.pretrained)
    mrpw.write(os.path.join(args.out_dir, "alexnet.mrpw"), manifest, entries)

    pixels = golden_image()
    Image.fromarray(pixels).save(os.path.join(args.out_dir, "golden.png"))
    raw = torch.from_numpy(pixels.astype(np.float32) / 255.0).permute(2, 0, 1).unsqueeze(0)
    mean = torch.tensor(MEAN).view(1, 3, 1, 1)
    std = torch.tensor(STD).view(1, 3, 1, 1)

    with torch.no_grad():
        for size, img in [(64, raw), (128, F.interpolate(raw, scale_factor=2, mode="bilinear", align_corners=False))]:
            blocks = taps(net, (img - mean) / std)
            golden = [("golden/input", raw[0].numpy())]
            golden += [(f"golden/block{b + 1}", a) for b, a in enumerate(blocks)]
            meta = {"backbone": "alexnet", "golden": True, "input_size": size,
                    "resolution": "x1" if size == 64 else "x2"}
            mrpw.write(os.path.join(args.out_dir, f"alexnet_golden_{size}.mrpw"), meta, golden)
            shapes = ", ".join(str(tuple(a.shape)) for a in blocks)
            print(f"golden {size}: {shapes}; max {[float(np.abs(a).max()) for a in blocks]}")


if __name__ == "__main__":
    main()
