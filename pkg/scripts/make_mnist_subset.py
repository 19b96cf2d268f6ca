"""Write the 5000-sample MNIST subset shipped with mlxtend as gzipped IDX files.

    pip download mlxtend==0.23.1 --no-deps -d /tmp/mlx
    python scripts/make_mnist_subset.py /tmp/mlx/mlxtend-0.23.1-py3-none-any.whl data/mnist5k

The source CSV is sorted by label, so rows are shuffled with a fixed seed
before the first 4000 become the train pair and the last 1000 the test pair.
"""

import argparse
import gzip
import io
import struct
import zipfile
from pathlib import Path

import numpy as np

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def write_idx_images(path, images):
    n, rows, cols = images.shape
    header = struct.pack(">IIII", 0x00000803, n, rows, cols)
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(header + images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    header = struct.pack(">II", 0x00000801, len(labels))
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(header + labels.astype(np.uint8).tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("source", help="mlxtend wheel or mnist_5k.csv.gz")
    parser.add_argument("out_dir")
    parser.add_argument("--n-train", type=int, default=4000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    src = Path(args.source)
    if src.suffix == ".whl":
        raw = zipfile.ZipFile(src).read(CSV_MEMBER)
    else:
        raw = src.read_bytes()
    table = np.loadtxt(io.StringIO(gzip.decompress(raw).decode()), delimiter=",")
    images = table[:, :-1].reshape(-1, 28, 28)
    labels = table[:, -1].astype(int)
    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k = args.n_train
    write_idx_images(out / "train-images-idx3-ubyte.gz", images[:k])
    write_idx_labels(out / "train-labels-idx1-ubyte.gz", labels[:k])
    write_idx_images(out / "t10k-images-idx3-ubyte.gz", images[k:])
    write_idx_labels(out / "t10k-labels-idx1-ubyte.gz", labels[k:])
    print(f"wrote {k} train / {len(labels) - k} test samples to {out}")


if __name__ == "__main__":
    main()
