"""Training schemes: plain MSE, adaptive importance learning, and distillation.

All three share one minibatch loop over a pixel-weighted MSE.  Plain
training is the special case with every weight equal to 1, which makes
importance learning with all-ones weights and zero update rounds produce
bit-for-bit the same network.
"""

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .evaluation import evaluate
from .importance import (
    AilConfig,
    TeacherInitConfig,
    teacher_importance,
    update_weights,
)
from .model import build_network
from .numcore import OptimizerState, ShapeError, sgd_step

log = logging.getLogger(__name__)

SCHEMES = ("traditional", "ail", "distill")


@dataclass(frozen=True)
class TrainConfig:
    epochs_per_round: int = 50
    round_epochs: int = None  # epochs per importance round; None -> epochs_per_round // 5
    batch_size: int = 128
    lr_initial: float = 0.1
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 10
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clip: float = 0.4
    clip_mode: str = "element"
    seed: int = 0
    warm_start: bool = True
    scheme: str = "traditional"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        for name in ("epochs_per_round", "batch_size", "lr_decay_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.round_epochs is not None and self.round_epochs < 1:
            raise ValueError("round_epochs must be >= 1")
        if not (self.lr_initial > 0 and self.lr_decay_factor > 0 and self.clip > 0):
            raise ValueError("lr_initial, lr_decay_factor and clip must be positive")

    @property
    def epochs_per_ail_round(self):
        if self.round_epochs is not None:
            return self.round_epochs
        return max(1, self.epochs_per_round // 5)


@dataclass(frozen=True)
class DistillConfig:
    beta: float = 0.1
    teacher_checkpoint: str = None

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


class MissingTeacherError(Exception):
    pass


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    rounds: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    def records(self):
        out = [{"type": "epoch", **e} for e in self.epochs]
        out += [{"type": "round", **r} for r in self.rounds]
        return out

    def write_jsonl(self, path):
        """Deterministic records only; wall times go to :meth:`write_timings`."""
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def write_timings(self, path):
        with open(path, "w") as fh:
            for rec in self.timings:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def validation_series(self):
        return [r["val_psnr"] for r in self.rounds if r.get("val_psnr") is not None]


def lr_at(epoch, cfg):
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr_initial / cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


def weighted_mse(y, y_hat, w=None):
    """Mean of ``(w*y - w*y_hat)**2`` over all pixels and its gradient w.r.t. ``y_hat``.

    ``w`` broadcasts against ``y``; ``None`` means all ones.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ShapeError(f"target shape {y.shape} != prediction shape {y_hat.shape}")
    diff = y_hat - y
    n = diff.size
    if w is None:
        return float(np.sum(diff * diff)) / n, 2.0 * diff / n
    w2 = np.asarray(w, dtype=np.float64) ** 2
    wd = w2 * diff
    return float(np.sum(wd * diff)) / n, 2.0 * wd / n


def distill_loss(y, y_hat, teacher_out, beta):
    """``mse(y, y_hat) + beta * mse(teacher_out, y_hat)`` and its gradient."""
    loss, grad = weighted_mse(y, y_hat)
    if beta:
        l2, g2 = weighted_mse(teacher_out, y_hat)
        loss += beta * l2
        grad = grad + beta * g2
    return loss, grad


def predict(net, x, batch_size=64):
    out = np.empty_like(x)
    for a in range(0, len(x), batch_size):
        out[a:a + batch_size] = net.forward(x[a:a + batch_size])
    return out


def compute_residual_maps(net, data, batch_size=64):
    """Per-pixel squared error of ``net`` on every training patch, shape (n, h, w)."""
    out = predict(net, data.x, batch_size)
    return ((out - data.y) ** 2)[:, 0]


def _epoch_rng(seed, rnd, epoch):
    return np.random.default_rng([seed, rnd, epoch])


def train_epochs(net, data, cfg, n_epochs, rnd=0, weights=None, targets=None, beta=0.0,
                 trainlog=None, epoch_offset=0):
    """Run ``n_epochs`` of minibatch SGD from a fresh optimizer and schedule.

    ``weights`` (n, h, w) selects the importance-weighted loss; ``targets``
    with ``beta`` selects the distillation loss.  Returns the next global
    epoch index.
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    params = net.parameters()
    names = net.parameter_names()
    opt = OptimizerState.zeros_like(
        params, lr=cfg.lr_initial, momentum=cfg.momentum,
        weight_decay=cfg.weight_decay, clip=cfg.clip, clip_mode=cfg.clip_mode,
    )
    n = len(data)
    for e in range(n_epochs):
        t0 = time.perf_counter()
        opt.lr = lr_at(e, cfg)
        order = _epoch_rng(cfg.seed, rnd, e).permutation(n)
        total = 0.0
        for a in range(0, n, cfg.batch_size):
            idx = np.sort(order[a:a + cfg.batch_size])
            xb, yb = data.x[idx], data.y[idx]
            out, cache = net.forward_train(xb)
            if targets is not None:
                loss, g = distill_loss(yb, out, targets[idx], beta)
            else:
                wb = None if weights is None else weights[idx][:, None]
                loss, g = weighted_mse(yb, out, wb)
            grads, _ = net.backward(cache, g)
            sgd_step(params, grads, opt, names)
            total += loss * len(idx)
        rec = {"epoch": epoch_offset + e, "round": rnd, "loss": total / n, "lr": opt.lr}
        if trainlog is not None:
            trainlog.epochs.append(rec)
            trainlog.timings.append({"epoch": epoch_offset + e, "seconds": time.perf_counter() - t0})
        log.info("round %d epoch %d loss %.6g lr %.3g", rnd, e, rec["loss"], opt.lr)
    return epoch_offset + n_epochs


def _round_record(rnd, weights, net, val_images, scale):
    rec = {"round": rnd, "val_psnr": None, "val_ssim": None}
    if weights is not None:
        rec["mean_importance"] = float(np.mean(weights))
        rec["frac_saturated"] = float(np.mean(weights == 1.0))
    if val_images:
        res = evaluate(net, val_images, scale)
        rec["val_psnr"], rec["val_ssim"] = res.mean_psnr, res.mean_ssim
    return rec


def run_traditional(spec, data, cfg, val_images=None):
    net = build_network(spec)
    trainlog = TrainLog()
    train_epochs(net, data, cfg, cfg.epochs_per_round, trainlog=trainlog)
    trainlog.rounds.append(_round_record(0, None, net, val_images, data.scale))
    return net, trainlog


def initial_importance(data, ail, teacher=None, tcfg=TeacherInitConfig()):
    shape = (len(data),) + data.y.shape[2:]
    if ail.init == "teacher":
        if teacher is None:
            raise MissingTeacherError("teacher-initialised importance needs a teacher network")
        errors = np.abs(predict(teacher, data.x) - data.y)[:, 0]
        return teacher_importance(errors, tcfg)
    if ail.init == "ones":
        return np.ones(shape)
    if ail.init == "zeros":
        return np.zeros(shape)
    return np.random.default_rng(ail.init_seed).uniform(0.0, 1.0, shape)


def run_ail(spec, data, cfg, ail, teacher=None, tcfg=TeacherInitConfig(), val_images=None,
            store=None):
    """Alternate importance updates and weighted retraining.

    Round 0 trains under the initial importance for ``cfg.epochs_per_round``
    epochs; rounds 1..T each update every pixel's importance from the
    student's current squared error and retrain for
    ``cfg.epochs_per_ail_round`` epochs.  Returns ``(net, log, weights)``.
    """
    weights = initial_importance(data, ail, teacher, tcfg)
    if store is not None:
        store.write_round(0, data.ids, weights)
    net = build_network(spec)
    trainlog = TrainLog()
    ep = train_epochs(net, data, cfg, cfg.epochs_per_round, rnd=0, weights=weights, trainlog=trainlog)
    trainlog.rounds.append(_round_record(0, weights, net, val_images, data.scale))
    for t in range(1, ail.iterations + 1):
        d = compute_residual_maps(net, data)
        weights = update_weights(weights, d, ail.lam)
        if store is not None:
            store.write_round(t, data.ids, weights)
        if not cfg.warm_start:
            net = build_network(spec)
        ep = train_epochs(net, data, cfg, cfg.epochs_per_ail_round, rnd=t, weights=weights,
                          trainlog=trainlog, epoch_offset=ep)
        trainlog.rounds.append(_round_record(t, weights, net, val_images, data.scale))
    return net, trainlog, weights


def run_distill(spec, data, cfg, dcfg, teacher, val_images=None):
    if teacher is None:
        raise MissingTeacherError("distillation needs a teacher network")
    targets = predict(teacher, data.x)
    net = build_network(spec)
    trainlog = TrainLog()
    train_epochs(net, data, cfg, cfg.epochs_per_round, targets=targets, beta=dcfg.beta,
                 trainlog=trainlog)
    rec = _round_record(0, None, net, val_images, data.scale)
    rec["beta"] = dcfg.beta
    trainlog.rounds.append(rec)
    return net, trainlog
