"""Regenerates the vendored fixtures under data/.

Fashion-MNIST subset: read from the MIT-licensed `fashion-mnist` npm
package (src/clothes/<label>.json, 8-bit pixels, one file per class).
The first 400 images of every class form the training split and the next
100 the test split, interleaved by class. Written as gzipped IDX.

Grayscale images: public-domain / CC0 sample images bundled with
scikit-image, converted to 256x256 8-bit PGM.

    python3 tools/make_fixtures.py <npm package dir>
"""

import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np
from skimage import color, data, transform

ROOT = Path(__file__).resolve().parent.parent
TRAIN_PER_CLASS = 400
TEST_PER_CLASS = 100

TEST_IMAGES = ["camera", "moon", "coins", "chelsea"]
TRAIN_IMAGES = ["astronaut", "coffee", "rocket", "brick", "grass", "gravel", "motorcycle_left", "hubble_deep_field"]


def write_idx(prefix, images, labels):
    with gzip.GzipFile(prefix + "-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(np.asarray(images, dtype=np.uint8).tobytes())
    with gzip.GzipFile(prefix + "-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def fashion(package):
    per_class = []
    for label in range(10):
        rows = json.loads((Path(package) / "src" / "clothes" / f"{label}.json").read_text())["data"]
        rows = [r for r in rows if len(r) == 784]
        per_class.append(rows)
    out = ROOT / "data" / "fashion-mnist-subset"
    for name, lo, hi in [("train", 0, TRAIN_PER_CLASS), ("test", TRAIN_PER_CLASS, TRAIN_PER_CLASS + TEST_PER_CLASS)]:
        images, labels = [], []
        for i in range(lo, hi):
            for label in range(10):
                images.append(per_class[label][i])
                labels.append(label)
        write_idx(str(out / name), images, labels)


def write_pgm(path, img):
    img = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    path.write_bytes(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]) + img.tobytes())


def grayscale():
    for split, names in [("test", TEST_IMAGES), ("train", TRAIN_IMAGES)]:
        for name in names:
            img = data.stereo_motorcycle()[0] if name == "motorcycle_left" else getattr(data, name)()
            if img.ndim == 3:
                img = color.rgb2gray(img[..., :3])
            img = img.astype(float)
            if img.max() > 1.0:
                img = img / 255.0
            side = min(img.shape)
            y0, x0 = (img.shape[0] - side) // 2, (img.shape[1] - side) // 2
            img = transform.resize(img[y0:y0 + side, x0:x0 + side], (256, 256), anti_aliasing=True)
            write_pgm(ROOT / "data" / "images" / split / f"{name}.pgm", img)


if __name__ == "__main__":
    fashion(sys.argv[1])
    grayscale()
