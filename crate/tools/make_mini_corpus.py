"""Generate the 60-triplet mini 2AFC corpus (10 per category).

Each triplet is a procedural 64x64 reference plus two synthetic distortions of
that category at random strengths s0 and s1. The judge is the share of five
simulated raters who pick p1, round(5 * s0 / (s0 + s1)) / 5: the more
distorted p0 is, the more raters prefer p1.

Judges are written as one-element float32 .npy files for traditional,
superres and color, and as plain text for the other categories, so both
loader paths are exercised.

Usage: python tools/make_mini_corpus.py fixtures/mini2afc
"""

import io
import os
import sys

import numpy as np
from PIL import Image
from scipy import ndimage

SIZE = 64
PER_CATEGORY = 10
NPY_CATEGORIES = {"traditional", "superres", "color"}


def reference(rng) -> np.ndarray:
    y, x = np.mgrid[0:SIZE, 0:SIZE] / (SIZE - 1)
    base = rng.uniform(0.1, 0.9, 3)
    grad = rng.uniform(-0.4, 0.4, (3, 2))
    img = base + grad[:, 0] * x[..., None] + grad[:, 1] * y[..., None]
    for _ in range(rng.integers(2, 6)):
        cx, cy, r = rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.05, 0.3)
        mask = (x - cx) ** 2 + (y - cy) ** 2 < r * r
        img[mask] = rng.uniform(0, 1, 3)
    freq, angle = rng.uniform(8, 30), rng.uniform(0, np.pi)
    wave = np.sin(freq * (np.cos(angle) * x + np.sin(angle) * y))
    img += 0.08 * wave[..., None]
    img += rng.normal(0, 0.02, img.shape)
    return np.clip(img, 0, 1)


def blur(img, sigma):
    return ndimage.gaussian_filter(img, sigma=(sigma, sigma, 0), mode="reflect")


def jpeg(img, quality):
    buf = io.BytesIO()
    Image.fromarray(to_u8(img)).save(buf, format="JPEG", quality=int(quality))
    return np.asarray(Image.open(buf).convert("RGB"), dtype=np.float64) / 255.0


def resample(img, factor, method):
    small = max(4, int(round(SIZE / factor)))
    pil = Image.fromarray(to_u8(img))
    pil = pil.resize((small, small), Image.BILINEAR).resize((SIZE, SIZE), method)
    return np.asarray(pil, dtype=np.float64) / 255.0


def motion_blur(img, length, angle):
    k = np.zeros((length, length))
    k[length // 2, :] = 1.0
    k = ndimage.rotate(k, angle, reshape=False, order=1)
    k /= k.sum()
    return np.stack([ndimage.convolve(img[..., c], k, mode="reflect") for c in range(3)], -1)


def hue_shift(img, amount):
    gray = img.mean(-1, keepdims=True)
    rot = np.roll(img, 1, axis=-1)
    return gray + (1 - amount) * (img - gray) + amount * (rot - gray)


def ghost(img, shift):
    a = np.roll(img, shift, axis=1)
    b = np.roll(img, -shift, axis=0)
    return 0.5 * a + 0.5 * b


def distort(category, img, s, rng):
    """Apply a category-flavoured distortion of strength s in [0.1, 1]."""
    kind = rng.integers(0, 3)
    if category == "traditional":
        if kind == 0:
            return img + rng.normal(0, 0.15 * s, img.shape)
        if kind == 1:
            return jpeg(img, 60 - 55 * s)
        return (img - 0.5) * (1 - 0.7 * s) + 0.5 + 0.2 * s
    if category == "cnn":
        smooth = blur(img, 0.5 + 1.5 * s)
        levels = int(round(16 - 12 * s))
        return np.round(smooth * levels) / levels + rng.normal(0, 0.02 * s, img.shape)
    if category == "superres":
        method = [Image.NEAREST, Image.BILINEAR, Image.BICUBIC][kind]
        return resample(img, 1.2 + 3.0 * s, method)
    if category == "deblur":
        length = 3 + 2 * int(round(4 * s))
        out = motion_blur(img, length, rng.uniform(0, 180))
        return out + 0.6 * s * (out - blur(out, 1.0))
    if category == "color":
        if kind == 0:
            return hue_shift(img, 0.6 * s)
        gains = 1 + rng.uniform(-0.5, 0.5, 3) * s
        return img * gains
    if category == "frameinterp":
        shift = 1 + int(round(3 * s))
        return ghost(img, shift) if kind else 0.5 * img + 0.5 * ghost(img, shift)
    raise ValueError(category)


def to_u8(img):
    return (np.clip(img, 0, 1) * 255).round().astype(np.uint8)


def save_npy_f32(path, value):
    np.save(path, np.array([value], dtype=np.float32))


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "fixtures/mini2afc"
    rng = np.random.default_rng(2022)
    for category in ["traditional", "cnn", "superres", "deblur", "color", "frameinterp"]:
        for sub in ["ref", "p0", "p1", "judge"]:
            os.makedirs(os.path.join(out, category, sub), exist_ok=True)
        for i in range(PER_CATEGORY):
            stem = f"{i:06d}"
            ref = reference(rng)
            s0, s1 = rng.uniform(0.1, 1.0, 2)
            p0 = distort(category, ref, s0, rng)
            p1 = distort(category, ref, s1, rng)
            judge = round(5 * s0 / (s0 + s1)) / 5
            for sub, img in [("ref", ref), ("p0", p0), ("p1", p1)]:
                Image.fromarray(to_u8(img)).save(os.path.join(out, category, sub, stem + ".png"))
            jdir = os.path.join(out, category, "judge")
            if category in NPY_CATEGORIES:
                save_npy_f32(os.path.join(jdir, stem + ".npy"), judge)
            else:
                with open(os.path.join(jdir, stem + ".txt"), "w") as f:
                    f.write(f"{judge}\n")


if __name__ == "__main__":
    main()
