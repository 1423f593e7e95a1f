"""Regenerate the natural-image fixtures under tests/fixtures/.

Needs scikit-image (for its bundled sample photographs).  Output is
deterministic; the committed files were produced by this script.

    python scripts/make_fixtures.py [--out tests/fixtures]
"""
import argparse
from pathlib import Path

import numpy as np
import skimage.data

from cfevid.geometry import Clip, write_cfvr

# (image, top, left) of the first 64x64 window; later frames pan down 1 px and right 2 px
CLIPS = [
    ("astronaut", 40, 180),
    ("coffee", 150, 200),
    ("chelsea", 60, 120),
    ("rocket", 150, 250),
    ("immunohistochemistry", 200, 200),
    ("cat", 100, 200),
]
ATTACK_IMAGES = ["astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry", "retina"]


def panning_clip(image: np.ndarray, top: int, left: int, frames: int = 8, size: int = 64) -> Clip:
    return Clip(np.stack([image[top + i:top + i + size, left + 2 * i:left + 2 * i + size]
                          for i in range(frames)]))


def attack_frames(size: int = 128, per_image: int = 4) -> Clip:
    """Half-resolution crops along each image's anti-diagonal."""
    out = []
    for name in ATTACK_IMAGES:
        im = getattr(skimage.data, name)()[::2, ::2, :3]
        h, w = im.shape[:2]
        for k in range(per_image):
            y = (h - size) * k // per_image
            x = (w - size) * (per_image - 1 - k) // per_image
            out.append(im[y:y + size, x:x + size])
    return Clip(np.stack(out))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=Path(__file__).resolve().parent.parent / "tests" / "fixtures")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, top, left in CLIPS:
        im = getattr(skimage.data, name)()[..., :3]
        write_cfvr(panning_clip(im, top, left), out / f"nat_{name}.cfvr")
    write_cfvr(attack_frames(), out / "attack_frames.cfvr")
    print(f"wrote {len(CLIPS) + 1} fixtures to {out}")


if __name__ == "__main__":
    main()
