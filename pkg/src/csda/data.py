"""Synthetic turbine-blade scenes, PNG I/O, normalization and augmentation.

Each scene is a sky/landscape background with one elongated light-gray blade.
A longitudinal half of the blade can be put in shadow, which makes it darker
than the background: the intensity inversion that defeats plain RGB
thresholding.
"""

import csv
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np
from PIL import Image

MIN_BLADE_FRACTION = 0.05
MAX_BLADE_FRACTION = 0.7
CROP_RATIO = 0.875
_MAX_TRIES = 50


@dataclass(frozen=True)
class SceneParams:
    image_size: int = 64
    blade_width_range: tuple = (0.14, 0.32)  # root width as a fraction of image_size
    blade_angle_range: tuple = (0.0, 180.0)  # degrees
    background_texture_scale: float = 8.0  # pixels per texture cell
    shadow_probability: float = 0.6
    shadow_strength_range: tuple = (0.25, 0.55)  # brightness factor of the shaded half
    noise_sigma: float = 0.02
    scene_family_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.shadow_probability <= 1.0:
            raise ValueError("shadow_probability must lie in [0, 1]")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    seed: int
    family_id: int = 0

    @property
    def blade_fraction(self):
        return float(self.mask.mean())


def _family_palette(family_id):
    rng = np.random.default_rng([7919, family_id])
    sky_top = np.array([0.20, 0.32, 0.55]) + rng.uniform(-0.08, 0.08, 3)
    sky_bottom = np.array([0.45, 0.52, 0.62]) + rng.uniform(-0.08, 0.06, 3)
    ground = np.array([0.22, 0.34, 0.16]) + rng.uniform(-0.08, 0.12, 3)
    horizon = rng.uniform(0.55, 0.9)
    texture = rng.uniform(0.04, 0.1)
    return sky_top, sky_bottom, ground, horizon, texture


def _smooth_noise(rng, size, cell):
    cells = max(2, int(np.ceil(size / cell)) + 1)
    coarse = rng.standard_normal((cells, cells))
    return resize(coarse[..., None], size, "bilinear")[..., 0]


def _background(rng, params):
    n = params.image_size
    sky_top, sky_bottom, ground, horizon, texture = _family_palette(params.scene_family_id)
    rows = np.linspace(0.0, 1.0, n)[:, None, None]
    img = sky_top + (sky_bottom - sky_top) * rows
    img = np.broadcast_to(img, (n, n, 3)).copy()
    tilt = rng.uniform(-0.15, 0.15)
    level = horizon + rng.uniform(-0.1, 0.1)
    yy, xx = np.mgrid[0:n, 0:n] / n
    land = yy > level + tilt * (xx - 0.5)
    img[land] = ground * rng.uniform(0.8, 1.2)
    cloud = _smooth_noise(rng, n, params.background_texture_scale)
    img += texture * cloud[..., None] * np.array([1.0, 1.0, 0.9])
    return np.clip(img, 0.0, 0.62)


def _blade(rng, params):
    """Quadrilateral blade mask plus the signed offset from its long axis."""
    n = params.image_size
    angle = np.deg2rad(rng.uniform(*params.blade_angle_range))
    direction = np.array([np.cos(angle), np.sin(angle)])
    normal = np.array([-direction[1], direction[0]])
    center = rng.uniform(0.3, 0.7, 2) * n
    root_half = rng.uniform(*params.blade_width_range) * n / 2
    tip_half = root_half * rng.uniform(0.25, 0.5)
    length = n * rng.uniform(0.8, 1.6)
    root = center - direction * length / 2
    yy, xx = np.mgrid[0:n, 0:n] + 0.5
    rel = np.stack([xx - root[0], yy - root[1]], axis=-1)
    along = rel @ direction
    across = rel @ normal
    t = np.clip(along / length, 0.0, 1.0)
    half = root_half + (tip_half - root_half) * t
    inside = (along >= 0) & (along <= length) & (np.abs(across) <= half)
    return inside, across, t


def generate(params, seed):
    """Deterministic synthetic scene for ``(params, seed)``."""
    rng = np.random.default_rng([seed, params.scene_family_id])
    n = params.image_size
    for _ in range(_MAX_TRIES):
        inside, across, t = _blade(rng, params)
        frac = inside.mean()
        if MIN_BLADE_FRACTION <= frac <= MAX_BLADE_FRACTION:
            break
    else:
        raise RuntimeError(f"could not place a blade for seed {seed}")
    img = _background(rng, params)
    base = rng.uniform(0.82, 0.95)
    tint = rng.uniform(-0.02, 0.02, 3)
    blade = np.clip(base + tint + 0.04 * (t[..., None] - 0.5), 0.0, 1.0)
    if rng.random() < params.shadow_probability:
        factor = rng.uniform(*params.shadow_strength_range)
        side = 1.0 if rng.random() < 0.5 else -1.0
        shaded = side * across > 0
        blade = np.where(shaded[..., None], blade * factor, blade)
    img = np.where(inside[..., None], blade, img)
    img = img + rng.normal(0.0, params.noise_sigma, img.shape)
    img = np.clip(img, 0.0, 1.0)
    return Sample(img, inside.astype(np.uint8), seed, params.scene_family_id)


# --- preprocessing ---------------------------------------------------------


def normalize(image):
    """Per-channel min-max scaling into [0, 1]; constant channels become zero."""
    img = np.asarray(image, dtype=np.float64)
    lo = img.min(axis=(0, 1))
    hi = img.max(axis=(0, 1))
    span = hi - lo
    flat = span <= 0
    if np.any(flat):
        warnings.warn(f"normalize: constant channel(s) {np.flatnonzero(flat).tolist()} mapped to 0")
    out = (img - lo) / np.where(flat, 1.0, span)
    out[..., flat] = 0.0
    return out


def resize(image, size, method="bilinear"):
    """Resize (H, W, C) to ``size`` x ``size`` (or (h, w)) with half-pixel centers."""
    arr = np.asarray(image)
    if isinstance(size, int):
        size = (size, size)
    h, w = arr.shape[:2]
    oh, ow = size
    if (oh, ow) == (h, w):
        return arr.copy()
    if method == "nearest":
        ri = np.minimum(((np.arange(oh) + 0.5) * h / oh).astype(int), h - 1)
        ci = np.minimum(((np.arange(ow) + 0.5) * w / ow).astype(int), w - 1)
        return arr[ri][:, ci]
    if method != "bilinear":
        raise ValueError(f"unknown resize method {method!r}")

    def axis(out_n, in_n):
        src = np.clip((np.arange(out_n) + 0.5) * in_n / out_n - 0.5, 0, in_n - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, in_n - 1)
        return i0, i1, src - i0

    r0, r1, fr = axis(oh, h)
    c0, c1, fc = axis(ow, w)
    a = arr.astype(np.float64)
    top = a[r0][:, c0] * (1 - fc)[None, :, None] + a[r0][:, c1] * fc[None, :, None]
    bot = a[r1][:, c0] * (1 - fc)[None, :, None] + a[r1][:, c1] * fc[None, :, None]
    return top * (1 - fr)[:, None, None] + bot * fr[:, None, None]


def augment(sample, seed, hflip=None, vflip=None, crop=True):
    """Random flips and an 87.5% crop resized back to the original size.

    ``hflip``/``vflip`` force the flip decision when not None.
    """
    rng = np.random.default_rng(seed)
    img, mask = sample.image, sample.mask
    do_h = rng.random() < 0.5 if hflip is None else hflip
    do_v = rng.random() < 0.5 if vflip is None else vflip
    if do_h:
        img, mask = img[:, ::-1], mask[:, ::-1]
    if do_v:
        img, mask = img[::-1], mask[::-1]
    if crop:
        h, w = mask.shape
        ch, cw = int(round(h * CROP_RATIO)), int(round(w * CROP_RATIO))
        for _ in range(10):
            top = rng.integers(0, h - ch + 1)
            left = rng.integers(0, w - cw + 1)
            sub = mask[top : top + ch, left : left + cw]
            if 0.02 <= sub.mean() <= 0.8:
                img = resize(img[top : top + ch, left : left + cw], (h, w), "bilinear")
                mask = resize(sub[..., None], (h, w), "nearest")[..., 0]
                break
    return Sample(np.ascontiguousarray(img), np.ascontiguousarray(mask), sample.seed, sample.family_id)


# --- PNG I/O ---------------------------------------------------------------


def to_uint8(image):
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, array, mask=False):
    """Write an image in [0, 1] as 8-bit RGB/gray, or a binary mask as {0, 255}."""
    arr = np.asarray(array)
    if mask:
        data = np.where(arr > 0, 255, 0).astype(np.uint8)
    else:
        data = to_uint8(arr)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    try:
        Image.fromarray(data).save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def load_png(path, mask=False):
    """Read an 8-bit RGB image into [0, 1] floats, or a gray mask into {0, 1}."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            data = np.asarray(im)
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    if mask:
        if mode not in ("L", "1"):
            raise ValueError(f"{path}: expected an 8-bit gray mask, got mode {mode}")
        return (data > 127).astype(np.uint8)
    if mode != "RGB":
        raise ValueError(f"{path}: expected 8-bit RGB, got mode {mode}")
    return data.astype(np.float64) / 255.0


# --- datasets --------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    seed: int
    family_id: int
    split: str


def make_manifest(n_train, n_val, n_test, seed=0, train_families=(0, 1, 2, 3), test_families=(4, 5)):
    """Seeds and family ids for a dataset; test families never occur in train/val."""
    if set(train_families) & set(test_families):
        raise ValueError("train and test scene families must be disjoint")
    rng = np.random.default_rng([seed, 104729])
    entries = []
    for split, count, fams in (
        ("train", n_train, train_families),
        ("val", n_val, train_families),
        ("test", n_test, test_families),
    ):
        for i in range(count):
            fam = int(fams[i % len(fams)])
            entries.append(ManifestEntry(int(rng.integers(0, 2**31 - 1)), fam, split))
    return entries


def write_manifest(path, entries):
    with open(path, "w", newline="") as fh:
        for e in entries:
            fh.write(f"{e.seed},{e.family_id},{e.split}\n")


def read_manifest(path):
    with open(path, newline="") as fh:
        return [ManifestEntry(int(s), int(f), sp.strip()) for s, f, sp in csv.reader(fh) if s]


def _workers():
    try:
        return max(1, int(os.environ.get("CSDA_THREADS", "1")))
    except ValueError:
        return 1


def generate_dataset(entries, params=None):
    """Generate every manifest entry in order; parallelism capped by ``CSDA_THREADS``."""
    params = params or SceneParams()

    def one(e):
        return generate(replace(params, scene_family_id=e.family_id), e.seed)

    n = _workers()
    if n == 1:
        return [one(e) for e in entries]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(one, entries))


def scene_params_lines(params):
    out = []
    for f in fields(params):
        v = getattr(params, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(float(x)) for x in v)
        out.append(f"{f.name} = {v}")
    return out


def parse_scene_params(lines):
    kw = {}
    types = {f.name: f.type for f in fields(SceneParams)}
    for line in lines:
        if "=" not in line:
            continue
        k, _, v = (s.strip() for s in line.partition("="))
        if k not in types:
            continue
        default = getattr(SceneParams(), k)
        if isinstance(default, tuple):
            kw[k] = tuple(float(x) for x in v.split(","))
        elif isinstance(default, int):
            kw[k] = int(v)
        else:
            kw[k] = float(v)
    return SceneParams(**kw)


def save_dataset(directory, entries, params=None):
    """Write PNGs, ``manifest.csv`` and ``scene.cfg`` under ``directory``."""
    params = params or SceneParams()
    os.makedirs(os.path.join(directory, "images"), exist_ok=True)
    os.makedirs(os.path.join(directory, "masks"), exist_ok=True)
    samples = generate_dataset(entries, params)
    for i, s in enumerate(samples):
        name = f"{i:05d}.png"
        save_png(os.path.join(directory, "images", name), s.image)
        save_png(os.path.join(directory, "masks", name), s.mask, mask=True)
    write_manifest(os.path.join(directory, "manifest.csv"), entries)
    with open(os.path.join(directory, "scene.cfg"), "w") as fh:
        fh.write("\n".join(scene_params_lines(params)) + "\n")
    return samples


def load_dataset(directory):
    """Load a dataset written by :func:`save_dataset`.

    Returns:
        dict split -> list of Sample (8-bit quantized images).
    """
    entries = read_manifest(os.path.join(directory, "manifest.csv"))
    out = {"train": [], "val": [], "test": []}
    for i, e in enumerate(entries):
        name = f"{i:05d}.png"
        img = load_png(os.path.join(directory, "images", name))
        mask = load_png(os.path.join(directory, "masks", name), mask=True)
        out.setdefault(e.split, []).append(Sample(img, mask, e.seed, e.family_id))
    return out


def split_samples(entries, samples):
    out = {"train": [], "val": [], "test": []}
    for e, s in zip(entries, samples):
        out.setdefault(e.split, []).append(s)
    return out
