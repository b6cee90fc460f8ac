"""PSNR / SSIM on the luminance channel, whole-image evaluation and reports."""

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import degrade, modcrop, save_gray_png

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
METRIC_CONVENTION = {
    "channel": "Y (BT.601)",
    "shave": "scale pixels per border",
    "psnr_peak": 1.0,
    "psnr_cap_db": PSNR_CAP,
    "ssim": "11x11 gaussian sigma 1.5, K1 0.01, K2 0.03, valid windows",
}


def _shave(img, shave):
    if shave == 0:
        return img
    h, w = img.shape
    if 2 * shave >= min(h, w):
        raise ValueError(f"shave {shave} too large for image {h}x{w}")
    return img[shave:h - shave, shave:w - shave]


def _pair(y, y_hat, shave):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    return _shave(y, shave), _shave(np.clip(y_hat, 0.0, 1.0), shave)


def psnr(y, y_hat, shave=0):
    a, b = _pair(y, y_hat, shave)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=1) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=0) @ g


def ssim(y, y_hat, shave=0):
    a, b = _pair(y, y_hat, shave)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} after shaving, got {a.shape}")
    g = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu1 = _filter_valid(a, g)
    mu2 = _filter_valid(b, g)
    s11 = _filter_valid(a * a, g) - mu1 * mu1
    s22 = _filter_valid(b * b, g) - mu2 * mu2
    s12 = _filter_valid(a * b, g) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


@dataclass
class ImageScore:
    id: str
    psnr: float
    ssim: float


@dataclass
class EvalResult:
    dataset: str
    scale: int
    images: list = field(default_factory=list)

    @property
    def mean_psnr(self):
        return float(np.mean([r.psnr for r in self.images]))

    @property
    def mean_ssim(self):
        return float(np.mean([r.ssim for r in self.images]))

    def summary(self):
        return {
            "dataset": self.dataset,
            "scale": self.scale,
            "count": len(self.images),
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
        }


def _score_all(images, scale, predict, dataset):
    if not images:
        raise ValueError("evaluation set is empty")
    result = EvalResult(dataset, scale)
    for name, hr in sorted(images, key=lambda item: item[0]):
        y = modcrop(hr, scale)
        x = degrade(y, scale)
        out = np.clip(predict(x), 0.0, 1.0)
        result.images.append(ImageScore(name, psnr(y, out, scale), ssim(y, out, scale)))
    return result


def evaluate(net, images, scale, dataset="eval"):
    """Score ``net`` on whole images given as ``[(name, hr_luma), ...]``."""
    return _score_all(images, scale, lambda x: net.forward(x[None, None])[0, 0], dataset)


def evaluate_bicubic(images, scale, dataset="eval"):
    return _score_all(images, scale, lambda x: x, dataset)


def write_csv(result, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["id", "psnr", "ssim"])
        for r in result.images:
            wr.writerow([r.id, f"{r.psnr:.6f}", f"{r.ssim:.6f}"])


def write_summary(result, path, config_hash=None, rounds=None, extra=None):
    doc = {
        "config_hash": config_hash,
        "convention": METRIC_CONVENTION,
        **result.summary(),
        "images": [asdict(r) for r in result.images],
    }
    if rounds is not None:
        doc["rounds"] = rounds
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    return doc


def export_importance_png(imap, path):
    return save_gray_png(imap.weights, path)
