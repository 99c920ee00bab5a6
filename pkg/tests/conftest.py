"""Shared helpers: synthetic samples and tiny on-disk dataset trees."""

import numpy as np

from ikshana.autograd import Tensor
from ikshana.data import Sample


def toy_samples(count, res=(8, 16), classes=20, seed=0):
    """In-memory random Samples, already network-shaped."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        img = rng.standard_normal((1, 3, *res)).astype(np.float32)
        tgt = rng.integers(0, classes, (1, *res), dtype=np.int64)
        out.append(Sample(Tensor(img), tgt))
    return out


def make_cityscapes_tree(root, folds={"train": 4, "val": 2}):
    from PIL import Image

    rng = np.random.default_rng(0)
    for fold, count in folds.items():
        for city in ["aaatown", "zzzburg"]:
            img_dir = root / "leftImg8bit" / fold / city
            lbl_dir = root / "gtFine" / fold / city
            img_dir.mkdir(parents=True, exist_ok=True)
            lbl_dir.mkdir(parents=True, exist_ok=True)
            for i in range(count):
                stem = f"{city}_{i:06d}_000019"
                img = rng.integers(0, 255, (16, 32, 3)).astype(np.uint8)
                lbl = rng.integers(0, 34, (16, 32)).astype(np.uint8)
                Image.fromarray(img).save(img_dir / f"{stem}_leftImg8bit.png")
                Image.fromarray(lbl).save(lbl_dir / f"{stem}_gtFine_labelIds.png")


def make_camvid_tree(root, folds={"train": 5, "val": 2, "test": 3}):
    from PIL import Image

    rng = np.random.default_rng(1)
    for fold, count in folds.items():
        (root / fold).mkdir(parents=True, exist_ok=True)
        (root / f"{fold}annot").mkdir(parents=True, exist_ok=True)
        for i in range(count):
            img = rng.integers(0, 255, (12, 16, 3)).astype(np.uint8)
            lbl = rng.integers(0, 32, (12, 16)).astype(np.uint8)
            Image.fromarray(img).save(root / fold / f"frame_{i:04d}.png")
            Image.fromarray(lbl).save(root / f"{fold}annot" / f"frame_{i:04d}.png")
