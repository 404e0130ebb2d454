"""Build an MNIST-layout IDX data directory from the npm ``mnist`` / ``fashion-mnist`` packages.

Those packages ship per-class JSON files (``src/digits/<c>.json`` holding a
flat list of [0,1] pixels, ``src/clothes/<c>.json`` holding rows of 0-255
bytes). Use this when the original IDX archives cannot be downloaded:

    npm pack mnist@1.1.0 fashion-mnist@1.1.0
    tar xzf mnist-1.1.0.tgz -C mn; tar xzf fashion-mnist-1.1.0.tgz -C fm
    python scripts/npm_json_to_idx.py --mnist mn/package/src/digits \
        --fashion fm/package/src/clothes --out data

MNIST classes are split per class into train/test by ``--train-frac`` and
each split is shuffled with a fixed seed. FashionMNIST contributes
``--fashion-per-class`` images per class to ``data/fashion/t10k-*``.
"""

import argparse
import json
import os

import numpy as np

from bnnood.datasets import MNIST_FILES, ImageSet, save_idx


def _digits(path):
    with open(path) as fh:
        flat = np.asarray(json.load(fh)["data"], dtype=np.float64)
    return np.rint(flat.reshape(-1, 784) * 255.0) / 255.0


def _clothes(path, limit):
    with open(path) as fh:
        rows = json.load(fh)["data"][:limit]
    return np.asarray(rows, dtype=np.float64) / 255.0


def _write(directory, split, images, labels, rng):
    order = rng.permutation(labels.size)
    os.makedirs(directory, exist_ok=True)
    names = MNIST_FILES[split]
    save_idx(ImageSet(images[order], labels[order]), os.path.join(directory, names[0]),
             os.path.join(directory, names[1]))
    print(f"{directory}: {split} {labels.size} images")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mnist", required=True)
    ap.add_argument("--fashion")
    ap.add_argument("--out", default="data")
    ap.add_argument("--train-frac", type=float, default=0.7)
    ap.add_argument("--fashion-per-class", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)
    rng = np.random.default_rng(a.seed)
    parts = {"train": ([], []), "test": ([], [])}
    for c in range(10):
        imgs = _digits(os.path.join(a.mnist, f"{c}.json"))
        k = int(round(a.train_frac * imgs.shape[0]))
        for split, block in (("train", imgs[:k]), ("test", imgs[k:])):
            parts[split][0].append(block)
            parts[split][1].append(np.full(block.shape[0], c))
    for split, (ims, labs) in parts.items():
        _write(os.path.join(a.out, "mnist"), split, np.vstack(ims), np.concatenate(labs), rng)
    if a.fashion:
        ims, labs = [], []
        for c in range(10):
            block = _clothes(os.path.join(a.fashion, f"{c}.json"), a.fashion_per_class)
            ims.append(block)
            labs.append(np.full(block.shape[0], c))
        _write(os.path.join(a.out, "fashion"), "test", np.vstack(ims), np.concatenate(labs), rng)


if __name__ == "__main__":
    main()
