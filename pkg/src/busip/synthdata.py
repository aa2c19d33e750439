"""Synthetic SAR-like chips, folder-per-class ingestion and two-view augmentation.

Each class is a fixed layout of anisotropic Gaussian scatterers; every sample
jitters the layout, then multiplies by unit-mean exponential speckle
(single-look intensity) and clips to ``[0, 1]``.

On-disk layout::

    root/
      manifest.json        generator settings and per-class blob layouts
      split.json           {"train": [...], "test": [...]}, paths relative to root
      class_00/000000.png  16-bit grayscale
      class_01/...
"""
import json
import math
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import DatasetError
from .geometry import compose_affine, invert_affine, warp_map

MANIFEST_FORMAT = "busip.synthetic/1"


@dataclass
class Blob:
    center: tuple  # fractional (x, y) in [0, 1]
    amplitude: float
    sigma_major: float  # pixels
    sigma_minor: float  # pixels
    orientation: float  # radians


@dataclass
class BlobClassSpec:
    class_id: int
    blobs: list = field(default_factory=list)
    center_jitter: float = 0.02  # radius, fraction of the image size
    amplitude_jitter: float = 0.2  # relative

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        blobs = [Blob(**{**b, "center": tuple(b["center"])}) for b in d["blobs"]]
        return cls(class_id=d["class_id"], blobs=blobs, center_jitter=d["center_jitter"],
                   amplitude_jitter=d["amplitude_jitter"])


def draw_class_spec(rng, class_id, min_blobs=4, max_blobs=8):
    blobs = []
    for _ in range(int(rng.integers(min_blobs, max_blobs + 1))):
        major = float(rng.uniform(1.5, 4.0))
        blobs.append(Blob(center=(float(rng.uniform(0.2, 0.8)), float(rng.uniform(0.2, 0.8))),
                          amplitude=float(rng.uniform(0.3, 1.0)),
                          sigma_major=major,
                          sigma_minor=float(rng.uniform(0.6, 1.0) * major),
                          orientation=float(rng.uniform(0.0, math.pi))))
    return BlobClassSpec(class_id=class_id, blobs=blobs)


def pixel_center(center, size):
    return center[0] * (size - 1), center[1] * (size - 1)


def render_blobs(blobs, size):
    """Sum of anisotropic Gaussians on a ``size x size`` grid (float64)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size))
    for b in blobs:
        cx, cy = pixel_center(b.center, size)
        c, s = math.cos(b.orientation), math.sin(b.orientation)
        dx, dy = xx - cx, yy - cy
        along = dx * c + dy * s
        across = -dx * s + dy * c
        img += b.amplitude * np.exp(-0.5 * ((along / b.sigma_major) ** 2 + (across / b.sigma_minor) ** 2))
    return img


def jitter_blobs(spec, rng):
    out = []
    for b in spec.blobs:
        r = spec.center_jitter * math.sqrt(rng.uniform())
        a = rng.uniform(0, 2 * math.pi)
        center = (b.center[0] + r * math.cos(a), b.center[1] + r * math.sin(a))
        amp = b.amplitude * rng.uniform(1 - spec.amplitude_jitter, 1 + spec.amplitude_jitter)
        out.append(Blob(center, float(amp), b.sigma_major, b.sigma_minor, b.orientation))
    return out


def speckle(rng, shape):
    """Unit-mean multiplicative speckle (exponential, gamma shape 1)."""
    return rng.exponential(1.0, size=shape)


def render_sample(spec, size, rng, use_speckle=True):
    """One noisy chip in ``[0, 1]`` and the jittered blobs that produced it."""
    blobs = jitter_blobs(spec, rng)
    img = render_blobs(blobs, size)
    peak = img.max()
    if peak > 1.0:
        img /= peak
    if use_speckle:
        img = img * speckle(rng, img.shape)
    return np.clip(img, 0.0, 1.0), blobs


def write_png16(path, img):
    arr = np.round(np.clip(img, 0.0, 1.0) * 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)


def read_png(path):
    """Grayscale PNG scaled to ``[0, 1]`` as float32 (8- or 16-bit)."""
    try:
        with Image.open(path) as im:
            if im.mode == "L":
                return np.asarray(im, dtype=np.float32) / 255.0
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                return np.asarray(im, dtype=np.float32) / 65535.0
            return np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc


def class_dir_name(class_id):
    return f"class_{class_id:02d}"


def gen_synthetic(out, num_classes=4, per_class=200, size=64, seed=0, use_speckle=True,
                  force=False, test_per_class=0):
    """Write a folder-per-class synthetic dataset and return its manifest.

    ``per_class`` samples per class go to the train split and
    ``test_per_class`` more to the test split. Class layouts depend only on
    ``seed``; sample ``i`` of class ``c`` uses its own stream ``(seed, c, i)``.
    """
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise DatasetError(f"output directory {out} exists and is not empty (use force)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)

    spec_rng = np.random.default_rng([seed])
    specs = [draw_class_spec(spec_rng, c) for c in range(num_classes)]
    split = {"train": [], "test": []}
    for spec in specs:
        cdir = out / class_dir_name(spec.class_id)
        cdir.mkdir()
        for i in range(per_class + test_per_class):
            rng = np.random.default_rng([seed, spec.class_id, i])
            img, _ = render_sample(spec, size, rng, use_speckle)
            name = f"{i:06d}.png"
            write_png16(cdir / name, img)
            split["train" if i < per_class else "test"].append(f"{cdir.name}/{name}")

    manifest = {
        "format": MANIFEST_FORMAT,
        "seed": seed,
        "size": size,
        "num_classes": num_classes,
        "per_class": per_class,
        "test_per_class": test_per_class,
        "speckle": use_speckle,
        "classes": [{"name": class_dir_name(s.class_id), **s.to_dict()} for s in specs],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    (out / "split.json").write_text(json.dumps(split, indent=1))
    return manifest


class ImageDataset:
    """In-memory grayscale dataset; iterating yields ``(image, label)``."""

    def __init__(self, images, labels, class_names, paths=()):
        self.images = images  # float32 (N, H, W)
        self.labels = labels  # int64 (N,)
        self.class_names = list(class_names)
        self.paths = list(paths)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return self.images[i], int(self.labels[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def num_classes(self):
        return len(self.class_names)

    def tensors(self):
        return torch.from_numpy(self.images), torch.from_numpy(self.labels)


def _class_folders(root):
    folders = sorted(p for p in root.iterdir() if p.is_dir())
    if not folders:
        raise DatasetError(f"no class folders under {root}")
    return folders


def read_split(root, split_manifest=None):
    root = Path(root)
    path = Path(split_manifest) if split_manifest else root / "split.json"
    split = json.loads(path.read_text())
    overlap = set(split.get("train", [])) & set(split.get("test", []))
    if overlap:
        raise DatasetError(f"train and test splits overlap in {len(overlap)} files, "
                           f"e.g. {sorted(overlap)[0]}")
    return split


def load_dataset(root, split_manifest=None, subset=None, size=None, seed=None):
    """Load a folder-per-class PNG dataset.

    With ``subset`` set, only files listed under that key of the split
    manifest (default ``root/split.json``) are read. Files are enumerated in
    sorted order; a ``seed`` shuffles that order deterministically. ``size``
    resizes every image to ``size x size`` with bilinear interpolation.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    folders = _class_folders(root)
    class_names = [f.name for f in folders]
    wanted = None
    if subset is not None:
        wanted = set(read_split(root, split_manifest).get(subset, []))

    paths, labels = [], []
    for label, folder in enumerate(folders):
        files = sorted(folder.glob("*.png"))
        if not files:
            raise DatasetError(f"empty class folder {folder}")
        for f in files:
            if wanted is None or f.relative_to(root).as_posix() in wanted:
                paths.append(f)
                labels.append(label)
    if not paths:
        raise DatasetError(f"no images selected under {root} (subset={subset})")

    order = np.arange(len(paths))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(paths))
    images = []
    for i in order:
        img = read_png(paths[i])
        if size is not None and img.shape != (size, size):
            t = torch.from_numpy(img)[None, None]
            img = torch.nn.functional.interpolate(t, size=(size, size), mode="bilinear",
                                                  align_corners=False)[0, 0].numpy()
        images.append(img)
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise DatasetError(f"images have mixed sizes {sorted(shapes)}; pass size= to resize")
    return ImageDataset(np.stack(images).astype(np.float32),
                        np.asarray(labels, dtype=np.int64)[order],
                        class_names, [paths[i] for i in order])


# -- two-view augmentation ---------------------------------------------------

@dataclass
class AugmentRanges:
    max_angle: float = 30.0  # degrees
    max_shift: float = 0.1  # fraction of the image size
    flip_p: float = 0.5
    scale: tuple = (0.9, 1.1)


@dataclass
class AugmentedPair:
    I1: torch.Tensor
    I2: torch.Tensor
    A1: torch.Tensor  # (2, 3), canonical -> view 1
    A2: torch.Tensor
    label: int | None = None

    @property
    def warp2to1(self):
        return compose_affine(self.A1, invert_affine(self.A2))

    @property
    def warp1to2(self):
        return compose_affine(self.A2, invert_affine(self.A1))


def random_affine(rng, ranges=AugmentRanges()):
    """Rotation, isotropic scale, optional horizontal flip and translation."""
    angle = math.radians(rng.uniform(-ranges.max_angle, ranges.max_angle))
    scale = rng.uniform(*ranges.scale)
    flip = rng.uniform() < ranges.flip_p
    # a shift of f * size is 2 * f in normalized units
    shift = 2 * ranges.max_shift * rng.uniform(-1.0, 1.0, size=2)
    c, s = math.cos(angle), math.sin(angle)
    M = scale * np.array([[c, -s], [s, c]]) @ np.diag([-1.0 if flip else 1.0, 1.0])
    return np.concatenate([M, shift[:, None]], axis=1)


def warp_images(images, A):
    """Warp ``(B, H, W)`` images by canonical->view maps ``A`` (zero padding)."""
    warped, _ = warp_map(images.unsqueeze(-1), A.to(images.dtype))
    return warped[..., 0]


def augment_batch(images, rng, ranges=AugmentRanges()):
    """Two independent geometric views of every image plus their affine maps."""
    B = images.shape[0]
    A1 = torch.tensor(np.stack([random_affine(rng, ranges) for _ in range(B)]), dtype=images.dtype)
    A2 = torch.tensor(np.stack([random_affine(rng, ranges) for _ in range(B)]), dtype=images.dtype)
    return warp_images(images, A1), warp_images(images, A2), A1, A2


def two_view_augment(image, seed, ranges=AugmentRanges(), label=None):
    image = torch.as_tensor(np.asarray(image))
    rng = np.random.default_rng(seed)
    I1, I2, A1, A2 = augment_batch(image[None], rng, ranges)
    return AugmentedPair(I1[0], I2[0], A1[0], A2[0], label)
