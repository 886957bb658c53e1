"""Regenerate the PPM fixtures from scikit-image's bundled sample images.

Each fixture is a center crop, box-downsampled by an integer factor.
"""

from pathlib import Path

import numpy as np
from skimage import data

from inrstream.imageio import encode_ppm

HERE = Path(__file__).parent

# name -> (loader, crop side before downsampling, output side)
FIXTURES = {
    "astronaut64": ("astronaut", 256, 64),
    "astronaut32": ("astronaut", 256, 32),
    "coffee32": ("coffee", 256, 32),
    "chelsea32": ("chelsea", 256, 32),
}


def crop_down(img, side, out):
    h, w = img.shape[:2]
    top, left = (h - side) // 2, (w - side) // 2
    img = img[top:top + side, left:left + side, :3].astype(np.float64)
    f = side // out
    img = img.reshape(out, f, out, f, 3).mean(axis=(1, 3))
    return np.floor(img + 0.5).astype(np.uint8)


def main():
    for name, (src, side, out) in FIXTURES.items():
        px = crop_down(getattr(data, src)(), side, out)
        (HERE / f"{name}.ppm").write_bytes(encode_ppm(px))
        print(name, px.shape)


if __name__ == "__main__":
    main()
