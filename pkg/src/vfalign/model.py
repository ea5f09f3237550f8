"""Cross-modal encoder plus task heads.

The encoder interleaves, per block: a half-weighted macaron feed-forward,
cross-attention from video queries onto text keys/values, then two parallel
branches (global self-attention -> wide depthwise conv, windowed local
self-attention -> narrow depthwise conv) fused by an elementwise max, a
second half feed-forward, and a closing layer norm.

Three heads sit on top: a per-frame classifier whose softmax is the
emission matrix for the aligner, a boundary detector, and a sequence
decoder that rewrites the transcript with silence tokens inserted.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as vt
from .align import SilenceAwareSequence
from .blocks import (AttentionConfig, ConvBranch, ConvBranchConfig,
                     FeedForward, LayerNorm, Linear, MultiHeadAttention,
                     causal_mask, local_attention_mask, mfm_fuse,
                     positional_encoding)
from .tensor import Tensor, concat, dropout, embedding, masked_softmax, tensor

CKPT_MAGIC = b"VFCK"


class LabelError(ValueError):
    """A supervision sequence is not a SIL-insertion of the transcript."""


@dataclass(frozen=True)
class VocabSpec:
    """Token table with the special ids every component relies on."""

    tokens: tuple[str, ...]
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2
    sil_id: int = 3

    def __post_init__(self):
        ids = (self.pad_id, self.bos_id, self.eos_id, self.sil_id)
        if len(set(ids)) != 4:
            raise ValueError("special token ids must be distinct")
        if not all(0 <= i < len(self.tokens) for i in ids):
            raise ValueError("special token ids out of range")

    @classmethod
    def build(cls, n_words: int) -> "VocabSpec":
        specials = ("<pad>", "<bos>", "<eos>", "<sil>")
        words = tuple(f"w{i:02d}" for i in range(n_words))
        return cls(tokens=specials + words)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def word_ids(self) -> range:
        return range(4, len(self.tokens))

    def id_of(self, tok: str) -> int:
        try:
            return self.tokens.index(tok)
        except ValueError:
            raise KeyError(f"unknown token {tok!r}") from None

    def str_of(self, tok_id: int) -> str:
        return self.tokens[tok_id]


@dataclass
class CglConfig:
    """Encoder/head dimensions. Defaults are desk scale (2 layers, C=64);
    a production configuration would be 4 layers at C=512."""

    num_layers: int = 2
    embed_dim: int = 64
    heads: int = 4
    window: int = 16
    global_kernel: int = 31
    local_kernel: int = 3
    feature_dim: int = 16
    vocab_size: int = 24
    decoder_layers: int = 2
    dropout: float = 0.0
    precision: str = "float32"

    def __post_init__(self):
        for name in ("num_layers", "embed_dim", "heads", "window",
                     "global_kernel", "local_kernel", "feature_dim",
                     "vocab_size", "decoder_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32


class _Runtime:
    """Mutable training context shared by all blocks of one model."""

    def __init__(self):
        self.training = False
        self.rng = np.random.default_rng(0)
        self.dropout = 0.0


class CglBlock:
    def __init__(self, cfg: CglConfig, rng, runtime: _Runtime, name: str):
        c, dt = cfg.embed_dim, cfg.dtype
        self.cfg = cfg
        self.rt = runtime
        attn = lambda: AttentionConfig(c, cfg.heads)
        self.ffn1 = FeedForward(c, rng, dt, f"{name}.ffn1")
        self.cross = MultiHeadAttention(attn(), rng, dt, f"{name}.cross")
        self.gattn = MultiHeadAttention(attn(), rng, dt, f"{name}.gattn")
        self.lattn = MultiHeadAttention(
            AttentionConfig(c, cfg.heads, cfg.window), rng, dt,
            f"{name}.lattn")
        self.gconv = ConvBranch(ConvBranchConfig(cfg.global_kernel, c), rng,
                                dt, f"{name}.gconv")
        self.lconv = ConvBranch(ConvBranchConfig(cfg.local_kernel, c), rng,
                                dt, f"{name}.lconv")
        self.ffn2 = FeedForward(c, rng, dt, f"{name}.ffn2")
        self.ln_ffn1 = LayerNorm(c, dt, f"{name}.ln_ffn1")
        self.ln_cross = LayerNorm(c, dt, f"{name}.ln_cross")
        self.ln_gattn = LayerNorm(c, dt, f"{name}.ln_gattn")
        self.ln_lattn = LayerNorm(c, dt, f"{name}.ln_lattn")
        self.ln_gconv = LayerNorm(c, dt, f"{name}.ln_gconv")
        self.ln_lconv = LayerNorm(c, dt, f"{name}.ln_lconv")
        self.ln_ffn2 = LayerNorm(c, dt, f"{name}.ln_ffn2")
        self.ln_out = LayerNorm(c, dt, f"{name}.ln_out")

    def _drop(self, x: Tensor) -> Tensor:
        if self.rt.training and self.rt.dropout > 0.0:
            return dropout(x, self.rt.dropout, self.rt.rng)
        return x

    def __call__(self, x: Tensor, text_mem: Tensor) -> Tensor:
        half = tensor(0.5, dtype=x.dtype)
        x = x + half * self._drop(self.ffn1(self.ln_ffn1(x)))
        x = x + self._drop(self.cross(self.ln_cross(x), text_mem))
        mask = local_attention_mask(x.shape[0], self.cfg.window, x.dtype)
        xg = self.ln_gattn(x)
        g = x + self._drop(self.gattn(xg, xg))
        g = g + self._drop(self.gconv(self.ln_gconv(g)))
        xl = self.ln_lattn(x)
        lcl = x + self._drop(self.lattn(xl, xl, mask))
        lcl = lcl + self._drop(self.lconv(self.ln_lconv(lcl)))
        x = mfm_fuse(g, lcl)
        x = x + half * self._drop(self.ffn2(self.ln_ffn2(x)))
        return self.ln_out(x)

    def components(self):
        return [self.ffn1, self.cross, self.gattn, self.lattn, self.gconv,
                self.lconv, self.ffn2, self.ln_ffn1, self.ln_cross,
                self.ln_gattn, self.ln_lattn, self.ln_gconv, self.ln_lconv,
                self.ln_ffn2, self.ln_out]

    def parameters(self):
        out = []
        for comp in self.components():
            out.extend(comp.parameters())
        return out


class DecoderLayer:
    def __init__(self, cfg: CglConfig, rng, runtime: _Runtime, name: str):
        c, dt = cfg.embed_dim, cfg.dtype
        self.rt = runtime
        self.self_attn = MultiHeadAttention(
            AttentionConfig(c, cfg.heads), rng, dt, f"{name}.self")
        self.cross_attn = MultiHeadAttention(
            AttentionConfig(c, cfg.heads), rng, dt, f"{name}.cross")
        self.ffn = FeedForward(c, rng, dt, f"{name}.ffn")
        self.ln1 = LayerNorm(c, dt, f"{name}.ln1")
        self.ln2 = LayerNorm(c, dt, f"{name}.ln2")
        self.ln3 = LayerNorm(c, dt, f"{name}.ln3")

    def _drop(self, x: Tensor) -> Tensor:
        if self.rt.training and self.rt.dropout > 0.0:
            return dropout(x, self.rt.dropout, self.rt.rng)
        return x

    def __call__(self, tgt: Tensor, memory: Tensor) -> Tensor:
        t1 = self.ln1(tgt)
        tgt = tgt + self._drop(
            self.self_attn(t1, t1, causal_mask(tgt.shape[0], tgt.dtype)))
        tgt = tgt + self._drop(self.cross_attn(self.ln2(tgt), memory))
        return tgt + self._drop(self.ffn(self.ln3(tgt)))

    def components(self):
        return [self.self_attn, self.cross_attn, self.ffn,
                self.ln1, self.ln2, self.ln3]

    def parameters(self):
        out = []
        for comp in self.components():
            out.extend(comp.parameters())
        return out


class CglModel:
    """Encoder stack plus the frame, boundary, and silence-decoder heads."""

    def __init__(self, cfg: CglConfig, vocab: VocabSpec, seed: int = 0):
        if vocab.size != cfg.vocab_size:
            raise ValueError(
                f"vocab size {vocab.size} != config vocab_size "
                f"{cfg.vocab_size}")
        self.cfg = cfg
        self.vocab = vocab
        self.rt = _Runtime()
        self.rt.dropout = cfg.dropout
        rng = np.random.default_rng(seed)
        c, v, dt = cfg.embed_dim, cfg.vocab_size, cfg.dtype

        self.feat_embed = Linear(cfg.feature_dim, c, rng, dt, "feat_embed")
        self.tok_embed = tensor(
            rng.normal(0.0, c ** -0.5, size=(v, c)).astype(dt), dtype=dt,
            requires_grad=True, name="tok_embed")
        self.blocks = [CglBlock(cfg, rng, self.rt, f"enc{i}")
                       for i in range(cfg.num_layers)]
        self.frame_l1 = Linear(c, c, rng, dt, "frame_head.l1")
        self.frame_l2 = Linear(c, v, rng, dt, "frame_head.l2")
        self.bound_l1 = Linear(c, c, rng, dt, "bound_head.l1")
        self.bound_l2 = Linear(c, 1, rng, dt, "bound_head.l2")
        self.dec_layers = [DecoderLayer(cfg, rng, self.rt, f"dec{i}")
                           for i in range(cfg.decoder_layers)]
        self.dec_ln = LayerNorm(c, dt, "dec.ln_out")
        self.dec_out = Linear(c, v, rng, dt, "dec.out")

        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise AssertionError("parameter names must be unique")

    # -- plumbing ---------------------------------------------------------

    def parameters(self) -> list[Tensor]:
        params = self.feat_embed.parameters() + [self.tok_embed]
        for b in self.blocks:
            params.extend(b.parameters())
        params += self.frame_l1.parameters() + self.frame_l2.parameters()
        params += self.bound_l1.parameters() + self.bound_l2.parameters()
        for d in self.dec_layers:
            params.extend(d.parameters())
        params += self.dec_ln.parameters() + self.dec_out.parameters()
        return params

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def train_mode(self, on: bool = True,
                   rng: np.random.Generator | None = None) -> None:
        self.rt.training = on
        if rng is not None:
            self.rt.rng = rng

    # -- encoder -----------------------------------------------------------

    def _embed_text(self, text_ids) -> Tensor:
        ids = np.asarray(text_ids, dtype=np.int64)
        if ids.size == 0:
            raise ValueError("text input must contain at least one token")
        emb = embedding(self.tok_embed, ids)
        return emb + positional_encoding(ids.size, self.cfg.embed_dim,
                                         self.cfg.dtype)

    def encoder_forward(self, video_feats, text_ids) -> Tensor:
        """Encode a feature sequence conditioned on the transcript.

        Output length always equals the video length.
        """
        feats = video_feats if isinstance(video_feats, Tensor) \
            else tensor(np.asarray(video_feats), dtype=self.cfg.dtype)
        if feats.data.ndim != 2 or feats.shape[0] == 0:
            raise ValueError("video features must be a non-empty T x D array")
        if feats.shape[1] != self.cfg.feature_dim:
            raise ValueError(
                f"feature dim {feats.shape[1]} != {self.cfg.feature_dim}")
        n_text = len(np.atleast_1d(np.asarray(text_ids)))
        if n_text >= feats.shape[0]:
            warnings.warn(
                f"text length {n_text} >= video length {feats.shape[0]}; "
                "alignment assumes shorter transcripts", stacklevel=2)
        text_mem = self._embed_text(text_ids)
        x = self.feat_embed(feats) + positional_encoding(
            feats.shape[0], self.cfg.embed_dim, self.cfg.dtype)
        for block in self.blocks:
            x = block(x, text_mem)
        return x

    # -- heads ---------------------------------------------------------------

    def frame_head(self, enc: Tensor) -> Tensor:
        """Per-frame class logits (T x V); softmax rows are the emissions."""
        return self.frame_l2(vt.swish(self.frame_l1(enc)))

    def frame_emissions(self, enc: Tensor) -> np.ndarray:
        return masked_softmax(self.frame_head(enc)).numpy()

    def boundary_head(self, enc: Tensor) -> Tensor:
        """Per-frame boundary probabilities in (0, 1), shape (T,)."""
        logits = self.bound_l2(vt.swish(self.bound_l1(enc)))
        return vt.reshape(vt.sigmoid(logits), (enc.shape[0],))

    # -- silence decoder -------------------------------------------------------

    def _decoder_memory(self, enc: Tensor, text_ids) -> Tensor:
        # text embeddings first, then encoded frames
        return concat([self._embed_text(text_ids), enc], axis=0)

    def _decoder_logits(self, target_ids, memory: Tensor) -> Tensor:
        ids = np.asarray(target_ids, dtype=np.int64)
        tgt = embedding(self.tok_embed, ids) + positional_encoding(
            ids.size, self.cfg.embed_dim, self.cfg.dtype)
        for layer in self.dec_layers:
            tgt = layer(tgt, memory)
        return self.dec_out(self.dec_ln(tgt))

    def silence_decoder_train(self, enc: Tensor, text_ids,
                              gold_silence_seq) -> Tensor:
        """Teacher-forced step logits over the BOS-prefixed gold sequence.

        Step i predicts gold[i] (and the final step predicts EOS), so the
        output has len(gold) + 1 rows.
        """
        gold = [int(t) for t in gold_silence_seq]
        stripped = [t for t in gold if t != self.vocab.sil_id]
        if stripped != [int(t) for t in text_ids]:
            raise LabelError(
                "gold sequence must be the transcript with only SIL inserted")
        memory = self._decoder_memory(enc, text_ids)
        return self._decoder_logits([self.vocab.bos_id] + gold, memory)

    def silence_decoder_decode(self, enc: Tensor,
                               text_ids) -> SilenceAwareSequence:
        """Constrained greedy decoding of the silence-aware sequence.

        At each step the admissible tokens are the next unconsumed
        transcript token and SIL (SIL only if the previous emission was not
        SIL, so silences never stack); EOS becomes admissible once the
        transcript is consumed. A hard cap of 2 * len(transcript) + 1
        emissions guards termination, after which any unconsumed transcript
        tokens are appended verbatim.
        """
        transcript = [int(t) for t in text_ids]
        memory = self._decoder_memory(enc, transcript)
        scorer = lambda prefix: self._decoder_logits(prefix, memory) \
            .data[-1]
        out = constrained_greedy(scorer, transcript, self.vocab)
        return SilenceAwareSequence(out, sil_id=self.vocab.sil_id)

    # -- checkpointing -----------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(self, path)


def constrained_greedy(score_fn, transcript: list[int],
                       vocab: VocabSpec) -> list[int]:
    """Greedy decode restricted to SIL-insertions of the transcript.

    `score_fn(prefix_ids)` returns a logit row for the next step given the
    BOS-prefixed emissions so far. Output always reduces to `transcript`
    after SIL removal, for any scores.
    """
    out: list[int] = []
    consumed = 0
    cap = 2 * len(transcript) + 1
    while len(out) < cap:
        admissible = []
        if consumed < len(transcript):
            admissible.append(transcript[consumed])
        if not out or out[-1] != vocab.sil_id:
            admissible.append(vocab.sil_id)
        if consumed == len(transcript):
            admissible.append(vocab.eos_id)
        scores = score_fn([vocab.bos_id] + out)
        pick = max(admissible, key=lambda t: (scores[t], -t))
        if pick == vocab.eos_id:
            return out
        out.append(pick)
        if consumed < len(transcript) and pick == transcript[consumed]:
            consumed += 1
    out.extend(transcript[consumed:])
    return out


# -- checkpoint file format ------------------------------------------------------


def save_checkpoint(model: CglModel, path) -> None:
    """Header (config + vocab as JSON) then (name-length, name, VFT1) records."""
    header = json.dumps({
        "config": asdict(model.cfg),
        "vocab": {"tokens": list(model.vocab.tokens),
                  "pad_id": model.vocab.pad_id,
                  "bos_id": model.vocab.bos_id,
                  "eos_id": model.vocab.eos_id,
                  "sil_id": model.vocab.sil_id},
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name, p in model.named_parameters().items():
            blob = name.encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(vt.vft_bytes(p.data))


def load_checkpoint(path) -> CglModel:
    with open(path, "rb") as fh:
        if fh.read(4) != CKPT_MAGIC:
            raise ValueError("not a model checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        cfg = CglConfig(**header["config"])
        vspec = header["vocab"]
        vocab = VocabSpec(tokens=tuple(vspec["tokens"]),
                          pad_id=vspec["pad_id"], bos_id=vspec["bos_id"],
                          eos_id=vspec["eos_id"], sil_id=vspec["sil_id"])
        model = CglModel(cfg, vocab, seed=0)
        params = model.named_parameters()
        seen = set()
        while True:
            raw = fh.read(4)
            if not raw:
                break
            (nlen,) = struct.unpack("<I", raw)
            name = fh.read(nlen).decode("utf-8")
            arr = vt.vft_from_stream(fh)
            if name not in params:
                raise ValueError(f"unknown parameter {name!r} in checkpoint")
            params[name].assign(arr.astype(cfg.dtype))
            seen.add(name)
        missing = set(params) - seen
        if missing:
            raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
    return model
