"""Pixel-wise importance maps and their updates.

A map holds one weight in [0, 1] per HR pixel.  Weights start from a
teacher-derived sigmoid of the teacher's per-pixel error (or from a fixed
init) and only ever grow: each round solves

    min_w  d*w + (w - w')*(ln((w - w')/lam) - 1)   s.t.  w' <= w <= 1

per pixel, whose solution is ``min(1, w' + lam*exp(-d))``.
"""

import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels

INIT_SCHEMES = ("teacher", "ones", "zeros", "random")


@dataclass(frozen=True)
class AilConfig:
    lam: float = 0.15
    iterations: int = 10
    init: str = "teacher"
    init_seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"init must be one of {INIT_SCHEMES}, got {self.init!r}")


@dataclass(frozen=True)
class TeacherInitConfig:
    mu0: float = 0.01
    alpha0: float = 100.0

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError(f"alpha0 must be > 0, got {self.alpha0}")

    @property
    def z(self):
        return 1.0 + math.exp(-self.mu0 * self.alpha0)


@dataclass
class ImportanceMap:
    sample_id: str
    weights: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"importance map must be 2-D, got shape {self.weights.shape}")
        if np.any(self.weights < 0.0) or np.any(self.weights > 1.0):
            raise ValueError(f"importance weights of {self.sample_id!r} leave [0, 1]")


@dataclass
class PixelLossMap:
    sample_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError(f"loss map of {self.sample_id!r} must be finite and non-negative")


# --------------------------------------------------------------------------
# scalar maths
# --------------------------------------------------------------------------

_EQ_TOL = 1e-15


def penalty_h(w, w_prev, lam):
    """Importance penalty for raising one pixel's weight from ``w_prev`` to ``w``."""
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    delta = w - w_prev
    if delta < -_EQ_TOL:
        raise ValueError(f"w={w} below previous importance w_prev={w_prev}")
    if delta <= _EQ_TOL:
        return 0.0
    return delta * (math.log(delta / lam) - 1.0)


def importance_objective(w, d, w_prev, lam):
    return d * w + penalty_h(w, w_prev, lam)


def importance_update(w_prev, d, lam):
    """Constrained minimiser of ``d*w + penalty_h(w, w_prev, lam)`` over [w_prev, 1]."""
    if d < 0:
        raise ValueError(f"pixel loss d must be >= 0, got {d}")
    if not 0.0 <= w_prev <= 1.0:
        raise ValueError(f"w_prev must be in [0, 1], got {w_prev}")
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    return min(1.0, w_prev + lam * math.exp(-d))


def update_weights(w_prev, d, lam):
    """Array form of :func:`importance_update`."""
    w_prev = np.asarray(w_prev, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if w_prev.shape != d.shape:
        raise ValueError(f"importance shape {w_prev.shape} != loss shape {d.shape}")
    if np.any(d < 0):
        raise ValueError("pixel losses must be non-negative")
    return kernels.importance_update_kernel(w_prev, d, lam)


def update_map(imap, losses, cfg):
    if imap.sample_id != losses.sample_id:
        raise ValueError(f"sample id mismatch: {imap.sample_id!r} vs {losses.sample_id!r}")
    return ImportanceMap(
        imap.sample_id, update_weights(imap.weights, losses.values, cfg.lam), imap.iteration + 1
    )


def teacher_importance(errors, cfg):
    """Sigmoid importance ``z / (1 + exp((x - mu0) * alpha0))`` of teacher errors."""
    x = np.asarray(errors, dtype=np.float64)
    with np.errstate(over="ignore"):
        return cfg.z / (1.0 + np.exp((x - cfg.mu0) * cfg.alpha0))


def importance_init_from_teacher(errors, cfg):
    if np.any(errors.values < 0):
        raise ValueError("teacher errors must be non-negative")
    return ImportanceMap(errors.sample_id, teacher_importance(errors.values, cfg), 0)


def indicator_init(shape, sample_id=""):
    return ImportanceMap(sample_id, np.ones(shape), 0)


def zero_init(shape, sample_id=""):
    return ImportanceMap(sample_id, np.zeros(shape), 0)


def random_init(shape, seed, sample_id=""):
    return ImportanceMap(sample_id, np.random.default_rng(seed).uniform(0.0, 1.0, shape), 0)


def rounds_to_saturate(lam, d_max):
    """Upper bound on update rounds before every weight reaches 1 given losses <= d_max."""
    return math.ceil(1.0 / (lam * math.exp(-d_max)))


# --------------------------------------------------------------------------
# on-disk store
# --------------------------------------------------------------------------

STORE_VERSION = 1
_REC_HEADER = struct.Struct("<4sIIIi")
_REC_MAGIC = b"AIMP"


class ImportanceStoreError(Exception):
    pass


def _encode_record(weights, iteration):
    h, w = weights.shape
    return _REC_HEADER.pack(_REC_MAGIC, 2, h, w, iteration) + np.ascontiguousarray(
        weights, dtype="<f8"
    ).tobytes()


def _decode_record(raw, where):
    if len(raw) < _REC_HEADER.size:
        raise ImportanceStoreError(f"{where}: truncated record")
    magic, ndim, h, w, iteration = _REC_HEADER.unpack_from(raw)
    if magic != _REC_MAGIC or ndim != 2:
        raise ImportanceStoreError(f"{where}: bad record header")
    if len(raw) != _REC_HEADER.size + 8 * h * w:
        raise ImportanceStoreError(f"{where}: record size does not match shape {h}x{w}")
    data = np.frombuffer(raw, dtype="<f8", offset=_REC_HEADER.size).reshape(h, w)
    return data.astype(np.float64), iteration


class ImportanceStore:
    """Per-round directories of per-sample binary records plus ``index.json``.

    Layout: ``root/round_003/index.json`` and ``root/round_003/000017.imp``.
    """

    def __init__(self, root):
        self.root = Path(root)

    def _round_dir(self, t):
        return self.root / f"round_{t:03d}"

    def write_round(self, t, ids, weights):
        weights = np.asarray(weights)
        if len(ids) != len(weights):
            raise ValueError(f"{len(ids)} ids for {len(weights)} maps")
        rdir = self._round_dir(t)
        rdir.mkdir(parents=True, exist_ok=True)
        records = []
        for k, (sid, w) in enumerate(zip(ids, weights)):
            raw = _encode_record(w, t)
            name = f"{k:06d}.imp"
            (rdir / name).write_bytes(raw)
            records.append({"id": sid, "file": name, "sha256": hashlib.sha256(raw).hexdigest()})
        index = {"version": STORE_VERSION, "round": t, "records": records}
        tmp = rdir / "index.json.tmp"
        tmp.write_text(json.dumps(index, indent=1, sort_keys=True))
        os.replace(tmp, rdir / "index.json")

    def rounds(self):
        if not self.root.is_dir():
            return []
        return sorted(
            int(p.name.split("_")[1])
            for p in self.root.glob("round_*")
            if (p / "index.json").is_file()
        )

    def read_round(self, t):
        """Return ``(ids, weights)`` with weights stacked as (n, h, w)."""
        rdir = self._round_dir(t)
        try:
            index = json.loads((rdir / "index.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ImportanceStoreError(f"{rdir}: unreadable index") from exc
        if index.get("version") != STORE_VERSION:
            raise ImportanceStoreError(f"{rdir}: unsupported store version {index.get('version')}")
        ids, maps = [], []
        for rec in index["records"]:
            path = rdir / rec["file"]
            try:
                raw = path.read_bytes()
            except OSError as exc:
                raise ImportanceStoreError(f"{path}: missing record") from exc
            if hashlib.sha256(raw).hexdigest() != rec["sha256"]:
                raise ImportanceStoreError(f"{path}: checksum mismatch")
            w, _ = _decode_record(raw, path)
            ids.append(rec["id"])
            maps.append(w)
        return ids, np.stack(maps) if maps else np.zeros((0, 0, 0))

    def read_map(self, t, sample_id):
        ids, weights = self.read_round(t)
        try:
            k = ids.index(sample_id)
        except ValueError:
            raise KeyError(sample_id) from None
        return ImportanceMap(sample_id, weights[k], t)
