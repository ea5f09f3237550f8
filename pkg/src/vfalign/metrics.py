"""Evaluation: frame accuracy, boundary timing error, and the decoder
comparison harness (greedy vs plain Viterbi vs boundary-forced Viterbi).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .align import (DEFAULT_THRESHOLD, Alignment, Segment, greedy_decode,
                    improved_viterbi, plain_viterbi, segments_from_frames)
from .model import CglModel
from .synth import SynthSample

DECODERS = ("greedy", "plain", "improved")


class MetricUndefinedError(ValueError):
    """Boundary matching is undefined: the token sequences disagree."""


def frame_acc(pred_labels, gold_labels) -> float:
    """Fraction of frames whose predicted class equals the gold class."""
    pred = np.asarray(pred_labels)
    gold = np.asarray(gold_labels)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gold.shape}")
    if pred.size == 0:
        raise ValueError("empty label sequences")
    return float((pred == gold).mean())


def _segment_list(segs) -> list[Segment]:
    if isinstance(segs, Alignment):
        return list(segs.segments)
    return [Segment(int(t), int(s), int(e)) for t, s, e in segs]


def mae_ms(pred_segments, gold_segments, fps: float, sil_id: int) -> float:
    """Mean absolute boundary error in milliseconds.

    Silence segments are dropped on both sides; the k-th remaining segment
    is matched to the k-th. Each match contributes |delta start| and
    |delta end| where frame i starts at i * 1000 / fps ms and a segment
    ending at frame j ends at (j + 1) * 1000 / fps ms. Symmetric in its
    two arguments; raises MetricUndefinedError when the non-silence token
    sequences differ.
    """
    pred = [s for s in _segment_list(pred_segments) if s.token != sil_id]
    gold = [s for s in _segment_list(gold_segments) if s.token != sil_id]
    if [s.token for s in pred] != [s.token for s in gold]:
        raise MetricUndefinedError(
            "prediction does not conform to the reference token order")
    if not pred:
        return 0.0
    frame_ms = 1000.0 / fps
    deltas = []
    for p, g in zip(pred, gold):
        deltas.append(abs(p.start - g.start) * frame_ms)
        deltas.append(abs(p.end - g.end) * frame_ms)
    return float(np.mean(deltas))


@dataclass
class EvalReport:
    variant: str              # greedy | plain | improved
    acc: float
    mae_ms: float | None      # None when undefined for every sample
    n_samples: int
    n_mae_defined: int
    n_fallbacks: int = 0      # decoded label track infeasible, used transcript
    per_sample: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.acc <= 1.0:
            raise ValueError("acc must lie in [0, 1]")
        if self.mae_ms is not None and self.mae_ms < 0:
            raise ValueError("mae_ms must be >= 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def decode_sample(model: CglModel, features, transcript, decoder: str,
                  threshold: float = DEFAULT_THRESHOLD,
                  boundary_override=None):
    """Run one decoder on one feature sequence.

    Returns (frame_ids, segments, used_fallback). For the DP decoders the
    label track is the model's own silence-aware prediction; if that track
    is longer than the frame count (possible with an untrained decoder) the
    bare transcript is used instead and `used_fallback` is set.
    `boundary_override` replaces the boundary head's output (improved only).
    """
    if decoder not in DECODERS:
        raise ValueError(f"unknown decoder {decoder!r}; pick from {DECODERS}")
    transcript = [int(t) for t in transcript]
    enc = model.encoder_forward(features, transcript)
    em = model.frame_emissions(enc)
    if decoder == "greedy":
        ids = greedy_decode(em)
        changes = np.flatnonzero(np.r_[1, np.diff(ids)]).tolist()
        idx_track = np.zeros(len(ids), dtype=int)
        for c in changes[1:]:
            idx_track[c:] += 1
        labels = [int(ids[c]) for c in changes]
        return ids, segments_from_frames(idx_track.tolist(), labels), False

    track = model.silence_decoder_decode(enc, transcript).labels
    fallback = False
    if len(track) > np.asarray(features).shape[0]:
        track = transcript
        fallback = True
    if decoder == "improved":
        bounds = model.boundary_head(enc).numpy() \
            if boundary_override is None else boundary_override
        al = improved_viterbi(em, track, bounds, threshold)
    else:
        al = plain_viterbi(em, track)
    return al.frame_ids(), al.segments, fallback


def evaluate(model: CglModel, samples: list[SynthSample], decoder: str,
             threshold: float = DEFAULT_THRESHOLD) -> EvalReport:
    """Average frame accuracy and boundary MAE of one decoder over a corpus.

    Samples whose prediction does not conform to the transcript order
    (possible for greedy) contribute accuracy only.
    """
    if not samples:
        raise ValueError("cannot evaluate an empty corpus")
    per_sample = []
    accs = []
    maes = []
    n_fallbacks = 0
    for sample in samples:
        ids, segments, fallback = decode_sample(
            model, sample.features, sample.transcript, decoder, threshold)
        n_fallbacks += int(fallback)
        acc = frame_acc(ids, sample.gold_frame_labels)
        sil = sample.gold_silence_seq.sil_id
        try:
            mae = mae_ms(segments, sample.gold_segments, sample.fps, sil)
        except MetricUndefinedError:
            mae = None
        rec = {"id": sample.sample_id, "acc": acc, "mae_ms": mae,
               "fallback": fallback}
        per_sample.append(rec)
        accs.append(acc)
        if mae is not None:
            maes.append(mae)
    return EvalReport(
        variant=decoder,
        acc=float(np.mean(accs)),
        mae_ms=float(np.mean(maes)) if maes else None,
        n_samples=len(samples),
        n_mae_defined=len(maes),
        n_fallbacks=n_fallbacks,
        per_sample=per_sample,
    )


def ablation_run(model: CglModel, samples: list[SynthSample],
                 threshold: float = DEFAULT_THRESHOLD) -> list[EvalReport]:
    """Evaluate all three decoders on the same model and corpus."""
    return [evaluate(model, samples, decoder, threshold)
            for decoder in DECODERS]


def ablation_csv(reports: list[EvalReport]) -> str:
    lines = ["variant,mae_ms,acc,n_samples,n_mae_defined"]
    for r in reports:
        mae = "" if r.mae_ms is None else f"{r.mae_ms:.3f}"
        lines.append(f"{r.variant},{mae},{r.acc:.6f},{r.n_samples},"
                     f"{r.n_mae_defined}")
    return "\n".join(lines) + "\n"


def report_csv(report: EvalReport) -> str:
    lines = ["id,acc,mae_ms,fallback"]
    for rec in report.per_sample:
        mae = "" if rec["mae_ms"] is None else f"{rec['mae_ms']:.3f}"
        lines.append(f"{rec['id']},{rec['acc']:.6f},{mae},"
                     f"{int(rec['fallback'])}")
    return "\n".join(lines) + "\n"
