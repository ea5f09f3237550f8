"""Synthetic corpus with exact ground truth.

Each sample draws a transcript, interleaves silence tokens, assigns
per-token frame durations, and renders features as per-class prototype
vectors plus Gaussian noise, with a linear cross-fade over a few frames at
each boundary to imitate how articulator transitions smear across frames.
Class prototypes depend only on (vocab size, feature dim), so corpora
generated with different seeds share the same feature geometry and a model
trained on one is valid on another.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .align import Segment, SilenceAwareSequence, segments_from_frames
from .model import VocabSpec
from .tensor import read_vft, write_vft

_PROTO_STREAM = 0x56464150  # fixed prototype stream key


@dataclass
class SynthConfig:
    vocab_size: int = 20     # word tokens, specials excluded
    feature_dim: int = 16
    n_min: int = 4           # transcript length range, inclusive
    n_max: int = 8
    min_dur: int = 3         # frames; geometric tail on top
    dur_p: float = 0.4
    p_sil: float = 0.4       # silence insertion probability per slot
    sil_min: int = 2         # silence duration range, inclusive
    sil_max: int = 6
    noise_sigma: float = 0.5
    blur: int = 2            # boundary cross-fade width, frames
    fps: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2 or self.feature_dim < 1:
            raise ValueError("need at least 2 word tokens and 1 feature dim")
        if not 1 <= self.n_min <= self.n_max:
            raise ValueError("bad transcript length range")
        if self.min_dur < 1 or not 1 <= self.sil_min <= self.sil_max:
            raise ValueError("durations must be >= 1")
        if not 0.0 < self.dur_p <= 1.0 or not 0.0 <= self.p_sil <= 1.0:
            raise ValueError("probabilities out of range")
        if self.noise_sigma < 0 or self.blur < 0 or self.fps < 1:
            raise ValueError("noise_sigma/blur/fps out of range")


@dataclass
class SynthSample:
    sample_id: str
    features: np.ndarray          # (T, D) float32
    transcript: list[int]
    gold_frame_labels: np.ndarray  # (T,) vocabulary ids
    gold_boundaries: np.ndarray    # (T,) 0/1, 1 where a new unit starts
    gold_silence_seq: SilenceAwareSequence
    fps: int

    @property
    def gold_segments(self) -> list[Segment]:
        seq = self.gold_silence_seq.labels
        idx = []
        pos = 0
        prev = None
        for lab in self.gold_frame_labels:
            if prev is not None and lab != prev:
                pos += 1
            idx.append(pos)
            prev = lab
        return segments_from_frames(idx, seq)

    def validate(self) -> None:
        t_len = self.features.shape[0]
        labels = self.gold_frame_labels
        bounds = self.gold_boundaries
        if labels.shape != (t_len,) or bounds.shape != (t_len,):
            raise ValueError("label tracks must match the frame count")
        rle = [int(labels[0])]
        for prev, cur in zip(labels, labels[1:]):
            if cur != prev:
                rle.append(int(cur))
        if rle != self.gold_silence_seq.labels:
            raise ValueError(
                "frame-label runs disagree with the silence-aware sequence")
        expect_bounds = np.zeros(t_len, dtype=np.int8)
        expect_bounds[0] = 1
        expect_bounds[1:] = (labels[1:] != labels[:-1]).astype(np.int8)
        if not np.array_equal(bounds, expect_bounds):
            raise ValueError("boundary track disagrees with label changes")
        self.gold_silence_seq.check_supersequence(self.transcript)


def prototypes(vocab_size: int, feature_dim: int) -> np.ndarray:
    """Per-class feature prototypes, deterministic in the dimensions only."""
    rng = np.random.default_rng([_PROTO_STREAM, vocab_size, feature_dim])
    vocab = VocabSpec.build(vocab_size)
    protos = np.zeros((vocab.size, feature_dim))
    protos[vocab.sil_id] = rng.normal(0.0, 1.0, feature_dim)
    for wid in vocab.word_ids:
        protos[wid] = rng.normal(0.0, 1.0, feature_dim)
    return protos


def _draw_transcript(cfg: SynthConfig, vocab: VocabSpec,
                     rng: np.random.Generator) -> list[int]:
    n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
    words = list(vocab.word_ids)
    out = [words[int(rng.integers(0, len(words)))]]
    for _ in range(n - 1):
        # no immediate repeats, so frame labels alone recover the segments
        pick = int(rng.integers(0, len(words) - 1))
        prev_idx = words.index(out[-1])
        if pick >= prev_idx:
            pick += 1
        out.append(words[pick])
    return out


def generate_sample(cfg: SynthConfig, rng: np.random.Generator,
                    sample_id: str = "s00000") -> SynthSample:
    """Draw one sample; all gold tracks are mutually consistent."""
    vocab = VocabSpec.build(cfg.vocab_size)
    protos = prototypes(cfg.vocab_size, cfg.feature_dim)

    transcript = _draw_transcript(cfg, vocab, rng)
    seq: list[int] = []
    sil_flags = rng.random(len(transcript) + 1) < cfg.p_sil
    for i, word in enumerate(transcript):
        if sil_flags[i]:
            seq.append(vocab.sil_id)
        seq.append(word)
    if sil_flags[len(transcript)]:
        seq.append(vocab.sil_id)

    durs = []
    for tok in seq:
        if tok == vocab.sil_id:
            durs.append(int(rng.integers(cfg.sil_min, cfg.sil_max + 1)))
        else:
            durs.append(cfg.min_dur + int(rng.geometric(cfg.dur_p)) - 1)
    labels = np.repeat(np.asarray(seq, dtype=np.int64), durs)
    t_len = labels.shape[0]

    bounds = np.zeros(t_len, dtype=np.int8)
    bounds[0] = 1
    bounds[1:] = (labels[1:] != labels[:-1]).astype(np.int8)

    track = protos[labels].astype(np.float64)
    if cfg.blur > 0:
        # anticipatory ramp: the blur frames BEFORE a unit's first frame
        # fade from the previous prototype toward the next one, so the
        # onset frame itself stays a clean prototype
        for b0 in np.flatnonzero(bounds[1:]) + 1:
            prev_lab, next_lab = labels[b0 - 1], labels[b0]
            for j in range(cfg.blur):
                f = b0 - cfg.blur + j
                if 0 <= f < t_len:
                    w = (j + 1.0) / (cfg.blur + 1.0)
                    track[f] = (1.0 - w) * protos[prev_lab] \
                        + w * protos[next_lab]
    feats = track + cfg.noise_sigma * rng.standard_normal((t_len,
                                                           cfg.feature_dim))

    sample = SynthSample(
        sample_id=sample_id,
        features=feats.astype(np.float32),
        transcript=transcript,
        gold_frame_labels=labels,
        gold_boundaries=bounds,
        gold_silence_seq=SilenceAwareSequence(seq, sil_id=vocab.sil_id),
        fps=cfg.fps,
    )
    sample.validate()
    return sample


def generate_corpus(cfg: SynthConfig, n: int) -> list[SynthSample]:
    """n independent samples from per-sample child streams of cfg.seed."""
    streams = np.random.SeedSequence(cfg.seed).spawn(max(n, 1))
    return [generate_sample(cfg, np.random.default_rng(streams[i]),
                            sample_id=f"s{i:05d}")
            for i in range(n)]


def time_mask(features: np.ndarray, max_mask_len: int, n_masks: int,
              rng: np.random.Generator) -> np.ndarray:
    """Zero `n_masks` random spans of length <= max_mask_len; labels untouched."""
    out = np.array(features, copy=True)
    t_len = out.shape[0]
    if max_mask_len < 1 and n_masks > 0:
        raise ValueError("max_mask_len must be >= 1 when masking")
    for _ in range(n_masks):
        length = min(int(rng.integers(1, max_mask_len + 1)), t_len)
        start = int(rng.integers(0, t_len - length + 1))
        out[start:start + length] = 0.0
    return out


# -- corpus directory layout ---------------------------------------------------


def write_corpus(samples: list[SynthSample], corpus_dir) -> None:
    """manifest.json (array of sample records) plus one VFT1 file each."""
    corpus_dir = Path(corpus_dir)
    corpus_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for s in samples:
        feat_name = f"{s.sample_id}.vft"
        write_vft(corpus_dir / feat_name, s.features)
        records.append({
            "id": s.sample_id,
            "features": feat_name,
            "transcript": [int(t) for t in s.transcript],
            "gold_segments": [[int(x.token), int(x.start), int(x.end)]
                              for x in s.gold_segments],
            "gold_silence_seq": [int(t) for t in s.gold_silence_seq.labels],
            "sil_id": int(s.gold_silence_seq.sil_id),
            "fps": int(s.fps),
        })
    manifest = json.dumps(records, sort_keys=True, indent=1)
    (corpus_dir / "manifest.json").write_text(manifest, encoding="utf-8")


def read_corpus(corpus_dir) -> list[SynthSample]:
    corpus_dir = Path(corpus_dir)
    records = json.loads((corpus_dir / "manifest.json").read_text("utf-8"))
    samples = []
    for rec in records:
        feats = read_vft(corpus_dir / rec["features"])
        labels, bounds = [], []
        for tok, start, end in rec["gold_segments"]:
            labels.extend([tok] * (end - start + 1))
        labels = np.asarray(labels, dtype=np.int64)
        bounds = np.zeros(labels.shape[0], dtype=np.int8)
        if bounds.shape[0]:
            bounds[0] = 1
            bounds[1:] = (labels[1:] != labels[:-1]).astype(np.int8)
        sample = SynthSample(
            sample_id=rec["id"],
            features=feats,
            transcript=[int(t) for t in rec["transcript"]],
            gold_frame_labels=labels,
            gold_boundaries=bounds,
            gold_silence_seq=SilenceAwareSequence(
                rec["gold_silence_seq"], sil_id=int(rec["sil_id"])),
            fps=int(rec["fps"]),
        )
        sample.validate()
        samples.append(sample)
    return samples
