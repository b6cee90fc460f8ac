"""Dataset preparation for pre-upsampled single-image super-resolution.

Images are handled as 2-D float64 luminance arrays in [0, 1].  A training
pair is ``(x, y)`` where ``y`` is an HR crop and ``x`` is the same crop
bicubically downscaled by the scale factor and upscaled back, so both have
the same shape.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")
MANIFEST_VERSION = 1


class DataError(Exception):
    pass


# --------------------------------------------------------------------------
# decoding and colour
# --------------------------------------------------------------------------

def rgb_to_y(img):
    """8-bit RGB (h, w, 3) or grayscale (h, w) -> BT.601 luma in [0, 1].

    Grayscale input is taken as luminance already and only rescaled.
    """
    a = np.asarray(img)
    if a.ndim == 2:
        return a.astype(np.float64) / 255.0
    if a.ndim != 3 or a.shape[2] != 3:
        raise DataError(f"unsupported image layout {a.shape}; expected (h, w) or (h, w, 3)")
    rgb = a.astype(np.float64) / 255.0
    y = 16.0 + 65.481 * rgb[..., 0] + 128.553 * rgb[..., 1] + 24.966 * rgb[..., 2]
    return y / 255.0


def load_image_y(path):
    try:
        with Image.open(path) as im:
            if im.mode == "P":
                im = im.convert("RGB")
            if im.mode not in ("L", "RGB"):
                raise DataError(f"{path}: unsupported image mode {im.mode}")
            arr = np.asarray(im)
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return rgb_to_y(arr)


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"image directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def save_gray_png(values, path):
    """Write an array in [0, 1] as an 8-bit grayscale PNG (round half up)."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    px = np.floor(v * 255.0 + 0.5).astype(np.uint8)
    try:
        Image.fromarray(px, mode="L").save(path)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    return px


# --------------------------------------------------------------------------
# bicubic resampling
# --------------------------------------------------------------------------

A_COEF = -0.5


def cubic(t, a=A_COEF):
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def resize_matrix(n_in, n_out, scale, antialias=True):
    """Dense (n_out, n_in) interpolation matrix along one axis.

    Output sample ``i`` sits at input coordinate ``(i + 0.5)/scale - 0.5``.
    When shrinking with ``antialias`` the kernel is stretched by ``1/scale``.
    Taps falling outside the image are clamped to the nearest edge pixel and
    each row is normalised to sum to 1.
    """
    stretch = 1.0 / scale if (antialias and scale < 1.0) else 1.0
    half = 2.0 * stretch
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        u = (i + 0.5) / scale - 0.5
        left = int(math.floor(u - half))
        taps = np.arange(left, int(math.ceil(u + half)) + 1)
        wts = cubic((u - taps) / stretch)
        wts /= wts.sum()
        for j, wt in zip(np.clip(taps, 0, n_in - 1), wts):
            m[i, j] += wt
    return m


def bicubic_resize(img, factor, out_shape=None, antialias=True, clamp=True):
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if out_shape is None:
        # tolerance guards float factors like 1/3 * 3
        out_shape = (math.ceil(h * factor - 1e-9), math.ceil(w * factor - 1e-9))
    oh, ow = out_shape
    if oh < 1 or ow < 1:
        raise DataError(f"resizing {h}x{w} by {factor} gives degenerate size {oh}x{ow}")
    out = resize_matrix(h, oh, factor, antialias) @ img @ resize_matrix(w, ow, factor, antialias).T
    return np.clip(out, 0.0, 1.0) if clamp else out


# --------------------------------------------------------------------------
# pairs, augmentation, patches
# --------------------------------------------------------------------------

@dataclass
class TrainingPair:
    id: str
    x: np.ndarray
    y: np.ndarray
    scale: int

    def __post_init__(self):
        if self.x.shape != self.y.shape:
            raise DataError(f"pair {self.id}: x shape {self.x.shape} != y shape {self.y.shape}")


def modcrop(img, scale):
    h, w = img.shape
    hh, ww = h - h % scale, w - w % scale
    top, left = (h - hh) // 2, (w - ww) // 2
    return img[top:top + hh, left:left + ww]


def degrade(hr, scale):
    """Bicubic down by ``scale`` then back up: the network's input for ``hr``."""
    h, w = hr.shape
    if scale == 1:
        return hr.copy()
    lr = bicubic_resize(hr, 1.0 / scale, out_shape=(h // scale, w // scale))
    return bicubic_resize(lr, float(scale), out_shape=(h, w))


def make_pair(hr, scale, pair_id=""):
    hr = np.asarray(hr, dtype=np.float64)
    if min(hr.shape) < scale:
        raise DataError(f"image {hr.shape} smaller than scale {scale}")
    y = modcrop(hr, scale)
    return TrainingPair(pair_id, degrade(y, scale), y.copy(), scale)


@dataclass(frozen=True)
class AugmentSpec:
    rotations: tuple = (90, 180, 270)
    flip: bool = True
    scales: tuple = (1.0, 0.7, 0.5)

    def __post_init__(self):
        if not self.scales:
            raise ValueError("augmentation needs at least one scale")
        bad = [r for r in self.rotations if r not in (90, 180, 270)]
        if bad:
            raise ValueError(f"rotations must be among 90/180/270, got {bad}")

    @property
    def variants_per_image(self):
        return len(self.scales) * (1 + len(self.rotations)) * (2 if self.flip else 1)


NO_AUGMENT = AugmentSpec(rotations=(), flip=False, scales=(1.0,))


def augment(hr, spec):
    """Ordered ``(tag, image)`` variants; the untouched image comes first."""
    out = []
    for s in spec.scales:
        base = hr if s == 1.0 else bicubic_resize(hr, s)
        turned = [(0, base)] + [(r, np.rot90(base, r // 90)) for r in spec.rotations]
        flips = (0, 1) if spec.flip else (0,)
        for f in flips:
            for r, im in turned:
                tag = f"s{s:g}r{r}f{f}"
                out.append((tag, np.ascontiguousarray(im[:, ::-1] if f else im)))
    return out


def grid_positions(n, size, stride):
    return list(range(0, n - size + 1, stride))


def extract_patches(pair, size, stride):
    h, w = pair.y.shape
    if size > h or size > w:
        raise DataError(f"patch size {size} exceeds image {h}x{w}")
    patches = []
    for r in grid_positions(h, size, stride):
        for c in grid_positions(w, size, stride):
            patches.append(
                TrainingPair(
                    f"{pair.id}:{r}_{c}",
                    pair.x[r:r + size, c:c + size].copy(),
                    pair.y[r:r + size, c:c + size].copy(),
                    pair.scale,
                )
            )
    return patches


def parse_patch_id(pid):
    """``source:s0.7r90f1:row_col`` -> dict of its parts."""
    source, tag, coords = pid.rsplit(":", 2)
    s_part, rest = tag[1:].split("r", 1)
    rot, flip = rest.split("f")
    row, col = coords.split("_")
    return {
        "source": source,
        "scale": float(s_part),
        "rotation": int(rot),
        "flip": bool(int(flip)),
        "row": int(row),
        "col": int(col),
    }


def patch_count(shape, scale, spec, size, stride):
    """Patches produced from one source image, without touching pixels."""
    h, w = shape
    total = 0
    for s in spec.scales:
        sh = h if s == 1.0 else math.ceil(h * s - 1e-9)
        sw = w if s == 1.0 else math.ceil(w * s - 1e-9)
        n_rot = 1 + len(spec.rotations)
        n_transposed = sum(1 for r in spec.rotations if r in (90, 270))
        per_orient = []
        for hh, ww, k in ((sh, sw, n_rot - n_transposed), (sw, sh, n_transposed)):
            hh, ww = hh - hh % scale, ww - ww % scale
            if hh < size or ww < size:
                continue
            per_orient.append(k * len(grid_positions(hh, size, stride)) * len(grid_positions(ww, size, stride)))
        total += sum(per_orient) * (2 if spec.flip else 1)
    return total


# --------------------------------------------------------------------------
# manifest + packed archive
# --------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    version: int
    scale: int
    patch_size: int
    stride: int
    augment: dict
    seed: int
    archive: str
    checksum: str
    sources: list = field(default_factory=list)
    ids: list = field(default_factory=list)
    offsets: list = field(default_factory=list)


@dataclass
class Dataset:
    ids: list
    x: np.ndarray  # (n, 1, p, p)
    y: np.ndarray
    scale: int

    def __len__(self):
        return len(self.ids)

    @classmethod
    def from_pairs(cls, pairs):
        if not pairs:
            raise DataError("no training pairs")
        ids = [p.id for p in pairs]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate pair ids")
        x = np.stack([p.x for p in pairs])[:, None]
        y = np.stack([p.y for p in pairs])[:, None]
        return cls(ids, np.ascontiguousarray(x), np.ascontiguousarray(y), pairs[0].scale)


def image_pairs(path, scale, spec, size, stride):
    hr = load_image_y(path)
    pairs = []
    for tag, img in augment(hr, spec):
        if min(img.shape) < scale:
            continue
        pair = make_pair(img, scale, f"{path.stem}:{tag}")
        if min(pair.y.shape) < size:
            continue
        pairs.extend(extract_patches(pair, size, stride))
    return pairs


def build_manifest(image_dir, out_dir, scale, spec=NO_AUGMENT, patch_size=41, stride=41, seed=0):
    """Write ``patches.bin`` and ``manifest.json`` under ``out_dir``.

    Patches are stored as ``x`` then ``y``, each little-endian float64, in an
    order permuted by ``seed``.  Output bytes depend only on the inputs.
    """
    paths = list_images(image_dir)
    if not paths:
        raise DataError(f"no images (png/ppm/pgm) in {image_dir}")
    pairs = []
    for p in paths:
        pairs.extend(image_pairs(p, scale, spec, patch_size, stride))
    if not pairs:
        raise DataError(f"no image in {image_dir} yields a {patch_size}x{patch_size} patch")
    order = np.random.default_rng(seed).permutation(len(pairs))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    archive = out_dir / "patches.bin"
    digest = hashlib.sha256()
    ids, offsets = [], []
    pos = 0
    with open(archive, "wb") as fh:
        for k in order:
            pr = pairs[k]
            chunk = np.ascontiguousarray(pr.x, "<f8").tobytes() + np.ascontiguousarray(pr.y, "<f8").tobytes()
            fh.write(chunk)
            digest.update(chunk)
            ids.append(pr.id)
            offsets.append(pos)
            pos += len(chunk)
    manifest = DatasetManifest(
        version=MANIFEST_VERSION,
        scale=scale,
        patch_size=patch_size,
        stride=stride,
        augment={"rotations": list(spec.rotations), "flip": spec.flip, "scales": list(spec.scales)},
        seed=seed,
        archive=archive.name,
        checksum=digest.hexdigest(),
        sources=[p.name for p in paths],
        ids=ids,
        offsets=offsets,
    )
    (out_dir / "manifest.json").write_text(json.dumps(asdict(manifest), indent=1))
    return manifest


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if raw.get("version") != MANIFEST_VERSION:
        raise DataError(f"{path}: manifest version {raw.get('version')} unsupported")
    return DatasetManifest(**raw), path.parent


def load_dataset(path):
    manifest, root = load_manifest(path)
    blob = (root / manifest.archive).read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest.checksum:
        raise DataError(f"{root / manifest.archive}: checksum mismatch")
    p = manifest.patch_size
    n = len(manifest.ids)
    per = 2 * p * p * 8
    if len(blob) != n * per or manifest.offsets != list(range(0, n * per, per)):
        raise DataError(f"{root / manifest.archive}: size or offsets do not match {n} patches")
    arr = np.frombuffer(blob, dtype="<f8").reshape(n, 2, 1, p, p).astype(np.float64)
    return Dataset(list(manifest.ids), np.ascontiguousarray(arr[:, 0]), np.ascontiguousarray(arr[:, 1]), manifest.scale)


def load_eval_images(directory):
    paths = list_images(directory)
    if not paths:
        raise DataError(f"no evaluation images in {directory}")
    return [(p.stem, load_image_y(p)) for p in paths]
