"""Losses, the Adam optimizer, and the sequence-at-a-time training loop.

The total objective is the unweighted sum of the frame classification
cross-entropy, the boundary binary cross-entropy, and the silence-aware
decoder cross-entropy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as vt
from .model import CglModel
from .synth import SynthSample, time_mask
from .tensor import Tensor

log = logging.getLogger(__name__)

BCE_EPS = 1e-7  # boundary probabilities are clamped to [eps, 1 - eps]


@dataclass
class TrainConfig:
    epochs: int = 5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    clip: float = 1.0
    seed: int = 0
    augment: bool = False
    max_mask_len: int = 6
    n_masks: int = 1

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.clip <= 0:
            raise ValueError("clip must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def frame_loss(logits: Tensor, gold_labels) -> Tensor:
    """Mean cross-entropy of per-frame class logits against gold ids."""
    ids = np.asarray(gold_labels, dtype=np.int64)
    if ids.shape[0] != logits.shape[0]:
        raise ValueError("label count must match frame count")
    return vt.neg(vt.tmean(vt.gather_rows(vt.log_softmax(logits), ids)))


def boundary_loss(probs: Tensor, gold_bounds) -> Tensor:
    """Mean binary cross-entropy on clamped probabilities."""
    y = np.asarray(gold_bounds, dtype=probs.dtype.type)
    if y.shape != probs.shape:
        raise ValueError("boundary targets must match prediction shape")
    p = vt.clamp(probs, BCE_EPS, 1.0 - BCE_EPS)
    yk = vt.tensor(y, dtype=probs.dtype)
    ones = vt.tensor(np.ones_like(y), dtype=probs.dtype)
    ll = vt.add(vt.mul(yk, vt.log(p)),
                vt.mul(vt.sub(ones, yk), vt.log(vt.sub(ones, p))))
    return vt.neg(vt.tmean(ll))


def silence_text_loss(step_logits: Tensor, target_ids) -> Tensor:
    """Mean cross-entropy over decoder steps (teacher forcing).

    `target_ids` is the gold silence-aware sequence with EOS appended.
    """
    return frame_loss(step_logits, target_ids)


def total_loss(lf: Tensor, lb: Tensor, ls: Tensor) -> Tensor:
    """Unweighted sum of the three task losses."""
    return vt.add(vt.add(lf, lb), ls)


class Adam:
    def __init__(self, params: list[Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g
            update = (c.lr * (self.m[i] / bc1)
                      / (np.sqrt(self.v[i] / bc2) + c.eps))
            p.assign(p.data - update.astype(p.dtype))


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if total > max_norm and total > 0:
        scale = max_norm / total
        return [g * scale for g in grads]
    return grads


def sample_losses(model: CglModel, sample: SynthSample,
                  features=None) -> tuple[Tensor, Tensor, Tensor]:
    feats = sample.features if features is None else features
    enc = model.encoder_forward(feats, sample.transcript)
    lf = frame_loss(model.frame_head(enc), sample.gold_frame_labels)
    lb = boundary_loss(model.boundary_head(enc), sample.gold_boundaries)
    gold = sample.gold_silence_seq.labels
    logits = model.silence_decoder_train(enc, sample.transcript, gold)
    ls = silence_text_loss(logits, gold + [model.vocab.eos_id])
    return lf, lb, ls


def train(model: CglModel, samples: list[SynthSample],
          cfg: TrainConfig) -> list[dict]:
    """Adam training, one sequence per step; returns the per-epoch curve.

    Deterministic given cfg.seed. Aborts with diagnostics on NaN loss.
    """
    if not samples:
        raise ValueError("cannot train on an empty corpus")
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = Adam(params, cfg)
    model.train_mode(True, np.random.default_rng(cfg.seed + 1))
    curve = []
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(samples))
            sums = np.zeros(3)
            for si in order:
                sample = samples[si]
                feats = sample.features
                if cfg.augment:
                    feats = time_mask(feats, cfg.max_mask_len, cfg.n_masks,
                                      rng)
                lf, lb, ls = sample_losses(model, sample, feats)
                loss = total_loss(lf, lb, ls)
                vals = (lf.item(), lb.item(), ls.item())
                if not np.isfinite(vals).all():
                    raise RuntimeError(
                        f"NaN/inf loss at epoch {epoch}, sample "
                        f"{sample.sample_id}: frame={vals[0]} "
                        f"boundary={vals[1]} silence={vals[2]}")
                tape = vt.backward(loss)
                grads = clip_gradients([tape.grad(p) for p in params],
                                       cfg.clip)
                if cfg.lr > 0:
                    opt.step(grads)
                sums += vals
            n = len(samples)
            row = {"epoch": epoch,
                   "frame_loss": sums[0] / n,
                   "boundary_loss": sums[1] / n,
                   "silence_loss": sums[2] / n,
                   "total_loss": sums.sum() / n}
            curve.append(row)
            log.info("epoch %d: total %.4f (frame %.4f boundary %.4f "
                     "silence %.4f)", epoch, row["total_loss"],
                     row["frame_loss"], row["boundary_loss"],
                     row["silence_loss"])
    finally:
        model.train_mode(False)
    return curve


def curve_to_csv(curve: list[dict]) -> str:
    lines = ["epoch,frame_loss,boundary_loss,silence_loss,total_loss"]
    for row in curve:
        lines.append(f"{row['epoch']},{row['frame_loss']:.10g},"
                     f"{row['boundary_loss']:.10g},"
                     f"{row['silence_loss']:.10g},{row['total_loss']:.10g}")
    return "\n".join(lines) + "\n"
