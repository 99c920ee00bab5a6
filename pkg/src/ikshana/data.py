"""Dataset plumbing: label remapping, preprocessing, deterministic splits,
and directory scanning for the two road-scene datasets.

Label maps ship as text tables (raw_id, train_id, name per line) so the
class grouping is auditable. Subset splitting uses an explicit 64-bit PRNG
(splitmix64) driving a Fisher-Yates shuffle, so the same seed yields the
same subsets on every platform and numpy version.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .ops import bilinear_resize

__all__ = [
    "LabelMap", "Sample", "load_label_map", "remap_labels", "preprocess",
    "nearest_resize", "seeded_split", "SplitMix64", "scan_dataset",
    "label_path_for", "write_index", "read_index", "load_sample",
    "LazyDataset", "IMAGENET_MEAN", "IMAGENET_STD", "CLASS_NAMES",
]

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# Train-class display names in train-id order (index 0 is background/void);
# the evaluation report lists ids 1..K-1 in exactly this order.
CLASS_NAMES = {
    "cityscapes": (
        "background", "road", "sidewalk", "building", "wall", "fence",
        "pole", "traffic light", "traffic sign", "vegetation", "terrain",
        "sky", "person", "rider", "car", "truck", "bus", "train",
        "motorcycle", "bicycle"),
    "camvid": (
        "void", "sky", "building", "pole", "road", "pavement", "tree",
        "sign symbol", "fence", "car", "pedestrian", "bicyclist"),
}


@dataclass(frozen=True)
class LabelMap:
    """Total mapping from dataset-native ids to dense training ids."""
    name: str
    table: dict
    num_train_classes: int
    background: int = 0
    class_names: tuple = ()

    def __post_init__(self):
        ids = set(self.table.values())
        if ids != set(range(self.num_train_classes)):
            raise ValueError(
                f"train ids not dense in [0, {self.num_train_classes}): {sorted(ids)}")


def load_label_map(name_or_path) -> LabelMap:
    """Load a packaged map ("cityscapes", "camvid") or a TSV file path."""
    name = str(name_or_path)
    if name in CLASS_NAMES:
        ref = importlib.resources.files("ikshana.labelmaps") / f"{name}.tsv"
        text = ref.read_text()
        class_names = CLASS_NAMES[name]
    else:
        path = Path(name_or_path)
        if not path.exists():
            raise ValueError(f"unknown label map {name!r} and no such file")
        text = path.read_text()
        name = path.stem
        class_names = ()
    table = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValueError(f"{name}:{lineno}: expected raw_id<TAB>train_id<TAB>name")
        raw, train = int(fields[0]), int(fields[1])
        if raw in table:
            raise ValueError(f"{name}:{lineno}: duplicate raw id {raw}")
        table[raw] = train
    if not table:
        raise ValueError(f"label map {name!r} is empty")
    k = max(table.values()) + 1
    if not class_names:
        class_names = tuple(f"class{i}" for i in range(k))
    return LabelMap(name, table, k, background=0, class_names=class_names)


def remap_labels(raw: np.ndarray, label_map: LabelMap) -> np.ndarray:
    """Elementwise table lookup; any id outside the table is an error."""
    raw = np.asarray(raw)
    if not np.issubdtype(raw.dtype, np.integer):
        raise ValueError("label image must be integer-valued")
    lo = min(label_map.table)
    hi = max(label_map.table)
    if raw.size and (raw.min() < lo or raw.max() > hi):
        bad = np.unique(raw[(raw < lo) | (raw > hi)])
        raise ValueError(f"unknown raw label ids {bad.tolist()} for map {label_map.name!r}")
    lut = np.full(hi - lo + 1, -1, dtype=np.int64)
    for r, t in label_map.table.items():
        lut[r - lo] = t
    out = lut[raw.astype(np.int64) - lo]
    if out.size and out.min() < 0:
        bad = np.unique(raw[out < 0])
        raise ValueError(f"unknown raw label ids {bad.tolist()} for map {label_map.name!r}")
    return out


def nearest_resize(labels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor label resize; never invents new values."""
    h, w = labels.shape[-2:]
    rows = np.minimum((np.arange(out_h) + 0.5) * (h / out_h), h - 1).astype(np.intp)
    cols = np.minimum((np.arange(out_w) + 0.5) * (w / out_w), w - 1).astype(np.intp)
    return labels[..., rows[:, None], cols[None, :]]


@dataclass
class Sample:
    """One network-ready (image, target) pair."""
    image: Tensor          # (1, 3, h, w) float32, normalized
    target: np.ndarray     # (1, h, w) int64 train ids
    image_path: str = ""
    label_path: str = ""


def preprocess(image: np.ndarray, target: np.ndarray, out_res, label_map: LabelMap,
               image_path: str = "", label_path: str = "") -> Sample:
    """Resize and normalize one raw pair into a Sample.

    The image is resized bilinearly and normalized with the ImageNet
    channel statistics; labels are resized nearest-neighbor (class ids must
    not blend) and remapped to train ids. No augmentation of any kind.
    """
    out_h, out_w = out_res
    if out_h < 1 or out_w < 1:
        raise ValueError("output resolution must be positive")
    image = np.asarray(image)
    target = np.asarray(target)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (h, w, 3) image, got {image.shape}")
    if target.shape != image.shape[:2]:
        raise ValueError(
            f"image {image.shape[:2]} and label {target.shape} sizes differ")
    if image.dtype == np.uint8:
        image = image.astype(np.float32) / 255.0
    else:
        image = image.astype(np.float32)
    chw = np.ascontiguousarray(image.transpose(2, 0, 1))[None]
    resized = bilinear_resize(Tensor(chw), out_h, out_w).data
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)[None, :, None, None]
    std = np.asarray(IMAGENET_STD, dtype=np.float32)[None, :, None, None]
    normalized = (resized - mean) / std
    labels = remap_labels(nearest_resize(target, out_h, out_w), label_map)
    return Sample(Tensor(normalized), labels[None], image_path, label_path)


class SplitMix64:
    """splitmix64 PRNG: tiny, seedable, identical everywhere."""

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def shuffle(self, items: list) -> list:
        """In-place Fisher-Yates, high index down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


def seeded_split(items, sizes, seed: int = 42, mode: str = "nested"):
    """Deterministic subsets of ``items``.

    nested: one seeded shuffle, each subset is a prefix, so smaller subsets
    are contained in larger ones (the ablation-series convention).
    partition: consecutive disjoint chunks of the same shuffle.
    """
    items = list(items)
    sizes = [int(s) for s in sizes]
    if any(s <= 0 for s in sizes):
        raise ValueError("subset sizes must be positive")
    n = len(items)
    if mode == "nested":
        if max(sizes, default=0) > n:
            raise ValueError(f"subset size {max(sizes)} exceeds population {n}")
    elif mode == "partition":
        if sum(sizes) > n:
            raise ValueError(f"sizes sum to {sum(sizes)} > population {n}")
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    shuffled = SplitMix64(seed).shuffle(items)
    if mode == "nested":
        return [shuffled[:s] for s in sizes]
    out = []
    offset = 0
    for s in sizes:
        out.append(shuffled[offset:offset + s])
        offset += s
    return out


# -- directory layouts ---------------------------------------------------

def label_path_for(image_relpath: str, layout: str) -> str:
    """Derive the label file path from an image path, per layout."""
    p = Path(image_relpath)
    if layout == "cityscapes":
        name = p.name
        if "_leftImg8bit" not in name:
            raise ValueError(f"not a cityscapes image name: {name}")
        gt_name = name.replace("_leftImg8bit", "_gtFine_labelIds")
        parts = list(p.parts)
        try:
            i = parts.index("leftImg8bit")
        except ValueError:
            raise ValueError(f"no leftImg8bit component in {image_relpath!r}") from None
        parts[i] = "gtFine"
        return str(Path(*parts[:-1]) / gt_name)
    if layout == "camvid":
        # <fold>/<name>.png -> <fold>annot/<name>.png
        parts = list(p.parts)
        if len(parts) < 2:
            raise ValueError(f"camvid image path needs a fold directory: {image_relpath!r}")
        parts[-2] = parts[-2] + "annot"
        return str(Path(*parts))
    raise ValueError(f"unknown layout {layout!r}")


def scan_dataset(root, layout: str, fold: str):
    """Ordered (image, label) relative path pairs for one fold.

    cityscapes: leftImg8bit/<fold>/<city>/*_leftImg8bit.png with labels
    under gtFine/. camvid: <fold>/*.png with labels in <fold>annot/.
    Pairs are sorted lexicographically by image path; an image without its
    label file, or an empty fold, is an error.
    """
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"dataset root {root} does not exist")
    if layout == "cityscapes":
        base = root / "leftImg8bit" / fold
        images = sorted(base.rglob("*_leftImg8bit.png")) if base.is_dir() else []
    elif layout == "camvid":
        base = root / fold
        images = sorted(base.glob("*.png")) if base.is_dir() else []
    else:
        raise ValueError(f"unknown layout {layout!r}")
    if not images:
        raise ValueError(f"no {layout} images for fold {fold!r} under {root}")
    pairs = []
    for img in images:
        rel = img.relative_to(root).as_posix()
        lbl = label_path_for(rel, layout)
        if not (root / lbl).is_file():
            raise ValueError(f"label file missing for {rel}: expected {lbl}")
        pairs.append((rel, lbl))
    return pairs


def write_index(path, image_relpaths) -> None:
    """One relative image path per line."""
    Path(path).write_text("".join(f"{p}\n" for p in image_relpaths))


def read_index(path):
    lines = Path(path).read_text().splitlines()
    return [ln.strip() for ln in lines if ln.strip()]


def load_sample(root, image_relpath: str, layout: str, out_res,
                label_map: LabelMap) -> Sample:
    """Read one pair from disk and preprocess it."""
    from PIL import Image

    root = Path(root)
    lbl_rel = label_path_for(image_relpath, layout)
    with Image.open(root / image_relpath) as im:
        image = np.asarray(im.convert("RGB"))
    with Image.open(root / lbl_rel) as lm:
        labels = np.asarray(lm)
    if labels.ndim != 2:
        raise ValueError(f"label image {lbl_rel} is not single-channel")
    return preprocess(image, labels.astype(np.int64), out_res, label_map,
                      image_path=image_relpath, label_path=lbl_rel)


class LazyDataset:
    """Sequence of Samples loaded from disk on access."""

    def __init__(self, root, image_relpaths, layout: str, out_res,
                 label_map: LabelMap):
        self.root = Path(root)
        self.paths = list(image_relpaths)
        self.layout = layout
        self.out_res = tuple(out_res)
        self.label_map = label_map

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, i: int) -> Sample:
        return load_sample(self.root, self.paths[i], self.layout,
                           self.out_res, self.label_map)
