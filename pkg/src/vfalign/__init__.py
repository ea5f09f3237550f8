"""Visual forced alignment toolkit.

A cross-modal encoder (video features as queries over text, parallel
global/local attention-convolution branches fused by elementwise max)
feeds three heads: per-frame class emissions, boundary probabilities, and
a silence-aware transcript decoder. A boundary-forced Viterbi pass turns
those into frame-accurate alignments; synthetic corpora with exact gold
tracks make the whole pipeline testable on a desk.
"""

from .align import (Alignment, BoundarySignal, EmissionMatrix,
                    InfeasibleAlignmentError, Segment, SilenceAwareSequence,
                    brute_force_align, greedy_decode, improved_viterbi,
                    plain_viterbi, segments_from_frames)
from .metrics import (DECODERS, EvalReport, MetricUndefinedError,
                      ablation_run, decode_sample, evaluate, frame_acc,
                      mae_ms)
from .model import (CglConfig, CglModel, LabelError, VocabSpec,
                    load_checkpoint, save_checkpoint)
from .synth import (SynthConfig, SynthSample, generate_corpus,
                    generate_sample, read_corpus, time_mask, write_corpus)
from .tensor import Tape, Tensor, backward, read_vft, write_vft
from .training import (TrainConfig, boundary_loss, frame_loss,
                    silence_text_loss, total_loss, train)

__version__ = "0.1.0"

__all__ = [
    "Alignment", "BoundarySignal", "CglConfig", "CglModel", "DECODERS",
    "EmissionMatrix", "EvalReport", "InfeasibleAlignmentError", "LabelError",
    "MetricUndefinedError", "Segment", "SilenceAwareSequence", "SynthConfig",
    "SynthSample", "Tape", "Tensor", "TrainConfig", "VocabSpec",
    "ablation_run", "backward", "boundary_loss", "brute_force_align",
    "decode_sample", "evaluate", "frame_acc", "frame_loss",
    "generate_corpus", "generate_sample", "greedy_decode",
    "improved_viterbi", "load_checkpoint", "mae_ms", "plain_viterbi",
    "read_corpus", "read_vft", "save_checkpoint", "segments_from_frames",
    "silence_text_loss", "time_mask", "total_loss", "train", "write_corpus",
    "write_vft",
]
