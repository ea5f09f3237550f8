"""Alignment decoding: boundary-forced Viterbi, plain Viterbi, greedy frame
argmax, an exhaustive-path oracle for testing, and segment construction.

All decoders consume a T x V emission matrix (per-frame class probabilities)
and, except greedy, a label track to walk: the transcript with optional
silence tokens inserted. The DP accumulates in float64 regardless of the
emission dtype so the oracle comparison is exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

PROB_FLOOR = 1e-12  # probabilities are clamped here before log
DEFAULT_THRESHOLD = 0.8  # boundary probability above which a transition is forced


class InfeasibleAlignmentError(ValueError):
    """More labels than frames: no monotonic path can consume them all."""


class OracleBoundError(ValueError):
    """Instance too large for exhaustive path enumeration."""


class Segment(NamedTuple):
    token: int  # vocabulary id
    start: int  # first frame, inclusive
    end: int    # last frame, inclusive


@dataclass
class EmissionMatrix:
    """Per-frame class probabilities, rows over frames."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs)
        if self.probs.ndim != 2:
            raise ValueError(f"emissions must be T x V, got {self.probs.shape}")
        if np.any(self.probs < 0):
            raise ValueError("emission probabilities must be >= 0")
        sums = self.probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-5):
            raise ValueError("emission rows must sum to 1 within 1e-5")


@dataclass
class SilenceAwareSequence:
    """Label track for the DP: transcript ids with SIL ids interleaved."""

    labels: list[int]
    sil_id: int

    def __post_init__(self):
        self.labels = [int(x) for x in self.labels]
        if len(self.labels) < 1:
            raise ValueError("label track must be non-empty")

    def transcript(self) -> list[int]:
        return [t for t in self.labels if t != self.sil_id]

    def check_supersequence(self, transcript: Sequence[int]) -> None:
        if self.transcript() != [int(t) for t in transcript]:
            raise ValueError(
                "removing SIL does not reproduce the transcript")


@dataclass
class BoundarySignal:
    """Per-frame probability that a new unit starts at that frame."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("boundary signal must be 1-D")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ValueError("boundary values must lie in [0, 1]")


@dataclass
class Alignment:
    """A monotonic frame-to-label assignment plus derived segments.

    frame_tokens[t] indexes into the label track (not the vocabulary);
    segments carry vocabulary ids with inclusive frame ranges.
    """

    frame_tokens: list[int]
    segments: list[Segment]
    score: float
    labels: list[int] = field(default_factory=list)

    def frame_ids(self) -> np.ndarray:
        """Vocabulary id per frame."""
        return np.asarray([self.labels[c] for c in self.frame_tokens],
                          dtype=np.int64)


def _coerce_probs(em) -> np.ndarray:
    probs = em.probs if isinstance(em, EmissionMatrix) else np.asarray(em)
    if probs.ndim != 2:
        raise ValueError(f"emissions must be T x V, got shape {probs.shape}")
    return probs.astype(np.float64)


def _coerce_labels(seq) -> list[int]:
    if isinstance(seq, SilenceAwareSequence):
        return list(seq.labels)
    return [int(x) for x in seq]


def _coerce_bounds(bnd, t_len: int) -> np.ndarray:
    values = bnd.values if isinstance(bnd, BoundarySignal) \
        else np.asarray(bnd, dtype=np.float64)
    if values.shape != (t_len,):
        raise ValueError(
            f"boundary signal length {values.shape} != frame count {t_len}")
    return values


def _check_instance(t_len: int, c_len: int, v: int, labels: list[int]) -> None:
    if t_len == 0 or c_len == 0:
        raise ValueError("empty emissions or label track")
    if c_len > t_len:
        raise InfeasibleAlignmentError(
            f"{c_len} labels cannot fit into {t_len} frames")
    bad = [x for x in labels if x < 0 or x >= v]
    if bad:
        raise ValueError(f"label ids {bad} outside emission classes 0..{v - 1}")


def segments_from_frames(frame_tokens: Sequence[int],
                         labels: Sequence[int]) -> list[Segment]:
    """Run-length encode a frame->label-index path into segments."""
    frame_tokens = list(frame_tokens)
    if not frame_tokens:
        return []
    segments = []
    start = 0
    for t in range(1, len(frame_tokens) + 1):
        if t == len(frame_tokens) or frame_tokens[t] != frame_tokens[start]:
            segments.append(Segment(int(labels[frame_tokens[start]]),
                                    start, t - 1))
            start = t
    return segments


def _viterbi(probs: np.ndarray, labels: list[int],
             bounds: np.ndarray | None, threshold: float) -> Alignment:
    """Shared DP. `bounds` None disables boundary forcing (plain Viterbi).

    Cell (t, c) with 1-based t, c holds the best score of any monotonic
    path that puts frame t on label c. When frame t (t >= 2) is a likely
    boundary, the transition into it is forced to be a label advance;
    if the advance predecessor is -inf (c = 1), the argmax choice is used
    instead so feasible instances always keep a complete path.
    """
    t_len, c_len = probs.shape[0], len(labels)
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    neg = -np.inf
    dp = np.full((t_len + 1, c_len + 1), neg)
    path = np.zeros((t_len + 1, c_len + 1), dtype=np.int8)
    dp[0, 0] = 0.0
    for t in range(1, t_len + 1):
        lo = max(1, c_len - (t_len - t))
        hi = min(t, c_len)
        for c in range(lo, hi + 1):
            advance, stay = dp[t - 1, c - 1], dp[t - 1, c]
            forced = (bounds is not None and t >= 2
                      and bounds[t - 1] > threshold)
            if forced and advance != neg:
                choice = 0
            else:
                choice = 0 if advance >= stay else 1
            path[t, c] = choice
            dp[t, c] = (advance if choice == 0 else stay) \
                + logp[t - 1, labels[c - 1]]
    frame_tokens = [0] * t_len
    t, c = t_len, c_len
    while t > 0 and c > 0:
        frame_tokens[t - 1] = c - 1
        if path[t, c] == 0:
            t, c = t - 1, c - 1
        else:
            t -= 1
    return Alignment(frame_tokens=frame_tokens,
                     segments=segments_from_frames(frame_tokens, labels),
                     score=float(dp[t_len, c_len]),
                     labels=list(labels))


def improved_viterbi(em, seq, bnd, threshold: float = DEFAULT_THRESHOLD
                     ) -> Alignment:
    """Best monotonic path through the label track with boundary forcing.

    Maximizes the summed log emission probability over paths that consume
    every label, forcing a label advance at frames whose boundary
    probability exceeds `threshold` (strict), whenever an advance is
    feasible at that cell.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    probs = _coerce_probs(em)
    labels = _coerce_labels(seq)
    bounds = _coerce_bounds(bnd, probs.shape[0])
    _check_instance(probs.shape[0], len(labels), probs.shape[1], labels)
    return _viterbi(probs, labels, bounds, threshold)


def plain_viterbi(em, seq) -> Alignment:
    """Standard forced-alignment Viterbi: argmax transitions, no forcing."""
    probs = _coerce_probs(em)
    labels = _coerce_labels(seq)
    _check_instance(probs.shape[0], len(labels), probs.shape[1], labels)
    return _viterbi(probs, labels, None, 1.0)


def greedy_decode(em) -> np.ndarray:
    """Per-frame argmax class ids (first index wins ties).

    Unconstrained: the result may disagree with any transcript order.
    """
    probs = _coerce_probs(em)
    if probs.shape[0] == 0:
        raise ValueError("empty emissions")
    return np.argmax(probs, axis=1).astype(np.int64)


def brute_force_align(em, seq, bnd, threshold: float = DEFAULT_THRESHOLD,
                      max_t: int = 12, max_c: int = 6) -> Alignment:
    """Exhaustive oracle: enumerate every monotonic complete path.

    Applies the same per-frame forced-advance rule as the DP (a forced
    frame must advance unless it sits on the first label, where no advance
    exists), scores with the same clamped logs accumulated in frame order,
    and breaks score ties exactly like the DP backtrace: prefer the path
    that advances at the latest frames first, i.e. lexicographically
    minimal step string read from the final frame backwards with
    advance < stay.
    """
    probs = _coerce_probs(em)
    labels = _coerce_labels(seq)
    t_len, c_len = probs.shape[0], len(labels)
    _check_instance(t_len, c_len, probs.shape[1], labels)
    if t_len > max_t or c_len > max_c:
        raise OracleBoundError(
            f"instance {t_len}x{c_len} exceeds oracle bounds "
            f"{max_t}x{max_c}")
    bounds = _coerce_bounds(bnd, t_len)
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    forced = [t >= 2 and bounds[t - 1] > threshold
              for t in range(t_len + 1)]

    best = None
    # a path is fixed by which of frames 2..T advance the label index
    for adv in itertools.combinations(range(2, t_len + 1), c_len - 1):
        adv_set = set(adv)
        ok = True
        c = 1
        tokens = [0] * t_len
        for t in range(2, t_len + 1):
            advanced = t in adv_set
            if forced[t] and not advanced and c != 1:
                ok = False
                break
            if advanced:
                c += 1
            tokens[t - 1] = c - 1
        if not ok:
            continue
        score = 0.0
        for t in range(t_len):
            score = score + logp[t, labels[tokens[t]]]
        tie = tuple(0 if t in adv_set else 1
                    for t in range(t_len, 1, -1))
        key = (-score, tie)
        if best is None or key < best[0]:
            best = (key, tokens, score)
    assert best is not None, "feasible instance must have a complete path"
    _, tokens, score = best
    return Alignment(frame_tokens=tokens,
                     segments=segments_from_frames(tokens, labels),
                     score=float(score),
                     labels=list(labels))


def validate_alignment(al: Alignment, t_len: int, c_len: int) -> None:
    """Assert the Alignment invariants; raises ValueError on violation."""
    ft = al.frame_tokens
    if len(ft) != t_len:
        raise ValueError(f"path length {len(ft)} != frame count {t_len}")
    if ft[0] != 0 or ft[-1] != c_len - 1:
        raise ValueError("path must start at label 0 and end at the last label")
    for a, b in zip(ft, ft[1:]):
        if b - a not in (0, 1):
            raise ValueError("path must be monotone with unit steps")
    if not al.segments:
        raise ValueError("no segments")
    if al.segments[0].start != 0 or al.segments[-1].end != t_len - 1:
        raise ValueError("segments must tile [0, T)")
    for s, nxt in zip(al.segments, al.segments[1:]):
        if nxt.start != s.end + 1:
            raise ValueError("segments must tile [0, T) without gaps/overlap")
    for i, s in enumerate(al.segments):
        if al.labels and s.token != al.labels[ft[s.start]]:
            raise ValueError("segment token disagrees with the label track")
        if s.end < s.start:
            raise ValueError("segment end before start")
