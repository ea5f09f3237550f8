"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The end-to-end training criterion is the slow one (several minutes on one
core); everything else finishes in well under a minute.
"""

import time

import numpy as np
import pytest

from vfalign import blocks as vb
from vfalign import tensor as vt
from vfalign import training as tr
from vfalign.align import brute_force_align, improved_viterbi
from vfalign.metrics import ablation_run, frame_acc, mae_ms
from vfalign.model import CglConfig, CglModel, VocabSpec, save_checkpoint
from vfalign.srt import frame_to_ms, parse_srt, segments_to_srt
from vfalign.synth import SynthConfig, generate_corpus, read_corpus, \
    write_corpus
from vfalign.align import Segment

F64 = np.float64


def _criterion(n, desc, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[criterion {n}] {status}: {desc}{suffix}")
    assert ok, f"criterion {n} failed: {desc}{suffix}"


# -- 1: DP / oracle equivalence -------------------------------------------------


def test_criterion_1_dp_oracle_equivalence():
    rng = np.random.default_rng(2024011)
    start = time.perf_counter()
    mismatches = 0
    n_instances = 1000
    for _ in range(n_instances):
        t_len = int(rng.integers(1, 11))
        c_len = int(rng.integers(1, min(t_len, 5) + 1))
        v = int(rng.integers(2, 7))
        if rng.random() < 0.15:
            probs = np.full((t_len, v), 1.0 / v)
        else:
            probs = rng.random((t_len, v))
            probs /= probs.sum(axis=1, keepdims=True)
        labels = rng.integers(0, v, size=c_len).tolist()
        bounds = rng.random(t_len)
        got = improved_viterbi(probs, labels, bounds, threshold=0.8)
        want = brute_force_align(probs, labels, bounds, threshold=0.8)
        if got.score != want.score or got.frame_tokens != want.frame_tokens:
            mismatches += 1
    elapsed = time.perf_counter() - start
    _criterion(1, "improved Viterbi matches the exhaustive oracle "
                  "(score exactly, path under shared tie-break)",
               mismatches == 0 and elapsed < 30.0,
               f"{n_instances} instances, {mismatches} mismatches, "
               f"{elapsed:.1f}s")


# -- 2: gradient suite ------------------------------------------------------------


def test_criterion_2_gradient_suite():
    start = time.perf_counter()
    t_len, c = 6, 16
    cfg = CglConfig(num_layers=2, embed_dim=c, heads=2, window=4,
                    global_kernel=5, local_kernel=3, feature_dim=6,
                    vocab_size=VocabSpec.build(4).size, decoder_layers=2,
                    precision="float64")
    vocab = VocabSpec.build(4)
    model = CglModel(cfg, vocab, seed=11)
    rng = np.random.default_rng(42)
    feats = rng.standard_normal((t_len, cfg.feature_dim))
    transcript = [4, 6]
    gold_labels = [3, 4, 4, 4, 6, 6]
    gold_bounds = [1, 1, 0, 0, 1, 0]
    gold_seq = [3, 4, 6]
    errors = {}

    x = vt.tensor(rng.standard_normal((t_len, c)), dtype=F64,
                  requires_grad=True)
    w = vt.tensor(rng.standard_normal((t_len, c)), dtype=F64)
    block = model.blocks[0]
    mask = vb.local_attention_mask(t_len, cfg.window, F64)

    errors["local self-attention"] = vt.max_grad_error(
        lambda: vt.tsum(vt.mul(block.lattn(x, x, mask), w)),
        [x] + block.lattn.parameters())
    errors["global self-attention"] = vt.max_grad_error(
        lambda: vt.tsum(vt.mul(block.gattn(x, x), w)),
        [x] + block.gattn.parameters())
    kv = vt.tensor(rng.standard_normal((3, c)), dtype=F64,
                   requires_grad=True)
    errors["cross-attention"] = vt.max_grad_error(
        lambda: vt.tsum(vt.mul(block.cross(x, kv), w)),
        [x, kv] + block.cross.parameters())
    errors["global conv branch"] = vt.max_grad_error(
        lambda: vt.tsum(vt.mul(block.gconv(x), w)),
        [x] + block.gconv.parameters())
    errors["local conv branch"] = vt.max_grad_error(
        lambda: vt.tsum(vt.mul(block.lconv(x), w)),
        [x] + block.lconv.parameters())
    errors["feed-forward"] = vt.max_grad_error(
        lambda: vt.tsum(vt.mul(block.ffn1(x), w)),
        [x] + block.ffn1.parameters())
    y = vt.tensor(rng.standard_normal((t_len, c)), dtype=F64,
                  requires_grad=True)
    errors["mfm fusion"] = vt.max_grad_error(
        lambda: vt.tsum(vt.mul(vb.mfm_fuse(x, y), w)), [x, y])

    fd_rng = np.random.default_rng(7)
    errors["encoder block"] = vt.max_grad_error(
        lambda: vt.tsum(vt.mul(block(x, kv), w)),
        [x, kv] + block.parameters(), sample_per_tensor=4, rng=fd_rng)
    errors["frame head"] = vt.max_grad_error(
        lambda: tr.frame_loss(model.frame_head(x), gold_labels),
        [x] + model.frame_l1.parameters() + model.frame_l2.parameters())
    errors["boundary head"] = vt.max_grad_error(
        lambda: tr.boundary_loss(model.boundary_head(x), gold_bounds),
        [x] + model.bound_l1.parameters() + model.bound_l2.parameters())

    def full_loss():
        enc = model.encoder_forward(feats, transcript)
        lf = tr.frame_loss(model.frame_head(enc), gold_labels)
        lb = tr.boundary_loss(model.boundary_head(enc), gold_bounds)
        logits = model.silence_decoder_train(enc, transcript, gold_seq)
        ls = tr.silence_text_loss(logits, gold_seq + [vocab.eos_id])
        return tr.total_loss(lf, lb, ls)

    errors["full model loss"] = vt.max_grad_error(
        full_loss, model.parameters(), sample_per_tensor=3, rng=fd_rng)

    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    detail = f"worst {worst:.2e} [" + ", ".join(
        f"{k} {v:.1e}" for k, v in errors.items()) + f"], {elapsed:.0f}s"
    _criterion(2, "finite-difference checks pass for every composite "
                  "(step 1e-4, high precision, rel err < 1e-4)",
               worst < 1e-4 and elapsed < 120.0, detail)


# -- 3: local/global consistency ------------------------------------------------


def test_criterion_3_local_global_consistency():
    t_len, c = 7, 16
    cfg = vb.AttentionConfig(embed_dim=c, num_heads=2, window=2 * t_len)
    attn = vb.MultiHeadAttention(cfg, np.random.default_rng(3), dtype=F64)
    rng = np.random.default_rng(4)
    x = vt.tensor(rng.standard_normal((t_len, c)), dtype=F64)
    wide_mask = vb.local_attention_mask(t_len, 2 * t_len, F64)
    local = attn(x, x, wide_mask).data
    global_ = attn(x, x).data
    eq = np.max(np.abs(local - global_)) <= 1e-6

    window = 2  # radius 1
    narrow_mask = vb.local_attention_mask(t_len, window, F64)
    base = attn(x, x, narrow_mask).data
    x2 = x.numpy()
    x2[6] += 5.0  # outside |i-j| <= 1 of frame 3
    pert = attn(x, vt.tensor(x2, dtype=F64), narrow_mask).data
    unchanged = np.array_equal(base[3], pert[3])
    _criterion(3, "tied-weight local attention equals global attention "
                  "under a covering window; out-of-window perturbations "
                  "change rows by exactly 0",
               eq and unchanged,
               f"max |local-global| = {np.max(np.abs(local - global_)):.1e}")


# -- 4: end-to-end synthetic reproduction of the decoder ordering -----------------


@pytest.fixture(scope="module")
def desk_training():
    start = time.perf_counter()
    scfg = SynthConfig(vocab_size=20, feature_dim=8, n_min=7, n_max=10,
                       min_dur=4, dur_p=0.5, p_sil=0.5, sil_min=3, sil_max=6,
                       noise_sigma=0.8, blur=2, seed=101)
    train_set = generate_corpus(scfg, 2000)
    eval_set = generate_corpus(
        SynthConfig(**{**scfg.__dict__, "seed": 202}), 200)
    vocab = VocabSpec.build(scfg.vocab_size)
    mcfg = CglConfig(num_layers=2, embed_dim=64, heads=4, window=16,
                     global_kernel=31, local_kernel=3,
                     feature_dim=scfg.feature_dim, vocab_size=vocab.size,
                     decoder_layers=2)
    model = CglModel(mcfg, vocab, seed=7)
    tr.train(model, train_set, tr.TrainConfig(epochs=12, lr=1e-3, seed=3))
    reports = ablation_run(model, eval_set, threshold=0.8)
    elapsed = time.perf_counter() - start
    return reports, elapsed


def test_criterion_4_end_to_end_ordering(desk_training):
    reports, elapsed = desk_training
    by_name = {r.variant: r for r in reports}
    greedy, plain, improved = (by_name[k] for k in
                               ("greedy", "plain", "improved"))
    ordering = improved.acc >= plain.acc >= greedy.acc
    acc_ok = improved.acc >= 0.90
    mae_ok = improved.mae_ms is not None and improved.mae_ms <= 80.0
    time_ok = elapsed < 1800.0
    detail = (f"ACC improved {improved.acc:.4f} >= plain {plain.acc:.4f} "
              f">= greedy {greedy.acc:.4f}; MAE improved "
              f"{improved.mae_ms:.1f} ms; {elapsed:.0f}s")
    _criterion(4, "trained desk model reproduces the decoder ordering "
                  "with ACC(improved) >= 0.90 and MAE(improved) <= 80 ms",
               ordering and acc_ok and mae_ok and time_ok, detail)


# -- 5: silence-decoder validity ----------------------------------------------------


def test_criterion_5_silence_decoder_validity():
    violations = 0
    vocab = VocabSpec.build(6)
    cfg = CglConfig(num_layers=1, embed_dim=8, heads=2, window=4,
                    global_kernel=3, local_kernel=3, feature_dim=4,
                    vocab_size=vocab.size, decoder_layers=1)
    for seed in range(100):
        rng = np.random.default_rng(seed)
        model = CglModel(cfg, vocab, seed=seed)  # random untrained weights
        n = int(rng.integers(1, 6))
        transcript = rng.integers(4, vocab.size, size=n).tolist()
        t_len = int(rng.integers(n + 1, n + 6))
        feats = rng.standard_normal((t_len, cfg.feature_dim))
        enc = model.encoder_forward(feats, transcript)
        seq = model.silence_decoder_decode(enc, transcript)
        if seq.transcript() != transcript:
            violations += 1
    _criterion(5, "constrained decoding reduces to the transcript after "
                  "SIL removal for 100 random models",
               violations == 0, f"{violations} violations")


# -- 6: metric sanity ------------------------------------------------------------------


def test_criterion_6_metric_sanity():
    gold = [Segment(4, 0, 3), Segment(3, 4, 5), Segment(7, 6, 9)]
    ident_mae = mae_ms(gold, gold, fps=25, sil_id=3)
    ident_acc = frame_acc([4, 4, 7], [4, 4, 7])
    shifted = [Segment(4, 1, 4), Segment(3, 5, 6), Segment(7, 7, 10)]
    shift_mae = mae_ms(shifted, gold, fps=25, sil_id=3)
    _criterion(6, "identical alignments give MAE 0 ms / ACC 1.0; a uniform "
                  "one-frame shift at 25 fps gives exactly 40 ms",
               ident_mae == 0.0 and ident_acc == 1.0 and shift_mae == 40.0,
               f"shift MAE {shift_mae} ms")


# -- 7: determinism and round-trips ------------------------------------------------------


def test_criterion_7_determinism_and_round_trips(tmp_path):
    # corpus generation: byte-identical across runs, reader round-trips
    scfg = SynthConfig(vocab_size=8, feature_dim=6, n_min=2, n_max=4,
                       min_dur=3, seed=77)
    dirs = []
    for name in ("c1", "c2"):
        d = tmp_path / name
        write_corpus(generate_corpus(scfg, 40), d)
        dirs.append(d)
    corpus_same = all(
        (dirs[0] / p.name).read_bytes() == p.read_bytes()
        for p in sorted(dirs[1].iterdir()))
    reread = read_corpus(dirs[0])
    round_trip_ok = len(reread) == 40

    # training curve and checkpoint: byte-identical across runs
    vocab = VocabSpec.build(scfg.vocab_size)
    mcfg = CglConfig(num_layers=1, embed_dim=16, heads=2, window=4,
                     global_kernel=5, local_kernel=3,
                     feature_dim=scfg.feature_dim, vocab_size=vocab.size,
                     decoder_layers=1)
    blobs, curves = [], []
    for run in range(2):
        model = CglModel(mcfg, vocab, seed=5)
        curve = tr.train(model, reread[:30],
                         tr.TrainConfig(epochs=2, lr=1e-3, seed=13,
                                        augment=True))
        path = tmp_path / f"m{run}.ckpt"
        save_checkpoint(model, path)
        blobs.append(path.read_bytes())
        curves.append(tr.curve_to_csv(curve))
    train_same = blobs[0] == blobs[1] and curves[0] == curves[1]

    # SRT writer -> reader round-trip at millisecond resolution
    segments = [("w01", 0, 3), ("<sil>", 4, 6), ("w02", 7, 21)]
    text = segments_to_srt(
        [{"token": t, "start_frame": s, "end_frame": e}
         for t, s, e in segments], fps=25)
    cues = parse_srt(text)
    srt_ok = len(cues) == 3 and all(
        cue == (frame_to_ms(s, 25), frame_to_ms(e + 1, 25), tok)
        for cue, (tok, s, e) in zip(cues, segments))

    _criterion(7, "seeded corpus, training curve, and checkpoint are "
                  "byte-identical across runs; corpus and SRT round-trip",
               corpus_same and round_trip_ok and train_same and srt_ok)
