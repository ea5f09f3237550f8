"""Command-line surface.

Subcommands: synth (generate a corpus), train, align (one sequence to
alignment JSON), eval (corpus metrics), ablate (decoder comparison), and
export-srt. Report-producing commands write figures next to their
delimited/JSON outputs.

Exit codes: 0 success, 1 usage errors (bad flags, bad config, malformed
inputs), 2 infeasible alignment (more labels than frames).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import plots
from .align import (DEFAULT_THRESHOLD, Alignment, InfeasibleAlignmentError,
                    Segment, segments_from_frames, validate_alignment)
from .config import (CliUsageError, build_model_config, build_synth_config,
                     build_train_config, effective_config, format_config,
                     parse_config_file)
from .metrics import ablation_csv, ablation_run, decode_sample, evaluate, \
    report_csv
from .model import CglModel, load_checkpoint, save_checkpoint
from .srt import frame_to_ms, parse_srt, segments_to_srt
from .synth import generate_corpus, read_corpus, write_corpus
from .tensor import read_vft
from .training import curve_to_csv, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(message)


def _load_config(args) -> dict:
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {"seed": getattr(args, "seed", None)}
    return effective_config(file_values, overrides)


def _echo(lines: str) -> None:
    print(lines)


# -- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    _echo(format_config(cfg))
    samples = generate_corpus(build_synth_config(cfg), args.n)
    write_corpus(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    _echo(format_config(cfg))
    samples = read_corpus(args.corpus)
    model_cfg, vocab = build_model_config(cfg)
    model = CglModel(model_cfg, vocab, seed=cfg["seed"])
    curve = train(model, samples, build_train_config(cfg))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    csv_path = Path(f"{out}.curve.csv")
    csv_path.write_text(curve_to_csv(curve), encoding="utf-8")
    fig_path = plots.plot_loss_curve(curve, f"{out}.curve.png")
    print(f"saved checkpoint {out}")
    print(f"saved curve {csv_path} and {fig_path}")
    return 0


def _resolve_transcript(model, text: str) -> list[int]:
    ids = []
    for tok in text.split():
        if tok.isdigit():
            ids.append(int(tok))
        else:
            try:
                ids.append(model.vocab.id_of(tok))
            except KeyError as exc:
                raise CliUsageError(str(exc)) from None
    if not ids:
        raise CliUsageError("transcript must contain at least one token")
    return ids


def cmd_align(args) -> int:
    model = load_checkpoint(args.ckpt)
    if args.corpus:
        samples = {s.sample_id: s for s in read_corpus(args.corpus)}
        if args.sample not in samples:
            raise CliUsageError(
                f"sample {args.sample!r} not in corpus "
                f"(have {sorted(samples)[:5]}...)")
        sample = samples[args.sample]
        features, transcript = sample.features, sample.transcript
    else:
        features = read_vft(args.features)
        transcript = _resolve_transcript(model, args.transcript)
    boundary_override = None
    if args.boundary_file:
        boundary_override = read_vft(args.boundary_file).reshape(-1)
        boundary_override = np.clip(boundary_override, 0.0, 1.0)
    _echo("\n".join([
        f"config decoder = {args.decoder}",
        f"config threshold = {args.threshold}",
        f"config fps = {args.fps}",
    ]))
    ids, segments, fallback = decode_sample(
        model, features, transcript, args.decoder, args.threshold,
        boundary_override)
    if args.decoder != "greedy":
        track = _recover_track(segments)
        validate_alignment(
            Alignment(frame_tokens=_frame_index_track(segments),
                      segments=segments, score=0.0, labels=track),
            len(ids), len(track))
    if fallback:
        print("note: predicted label track infeasible; used bare transcript",
              file=sys.stderr)
    records = [{
        "token": model.vocab.str_of(seg.token),
        "token_id": seg.token,
        "start_frame": seg.start,
        "end_frame": seg.end,
        "start_ms": frame_to_ms(seg.start, args.fps),
        "end_ms": frame_to_ms(seg.end + 1, args.fps),
    } for seg in segments]
    payload = json.dumps(records, indent=1)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
        print(f"wrote alignment {args.out}")
    else:
        print(payload)
    return 0


def _frame_index_track(segments: list[Segment]) -> list[int]:
    track = []
    for idx, seg in enumerate(segments):
        track.extend([idx] * (seg.end - seg.start + 1))
    return track


def _recover_track(segments: list[Segment]) -> list[int]:
    return [seg.token for seg in segments]


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    samples = read_corpus(args.corpus)
    _echo("\n".join([
        f"config decoder = {args.decoder}",
        f"config threshold = {args.threshold}",
    ]))
    report = evaluate(model, samples, args.decoder, args.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n", "utf-8")
    (out / "report.csv").write_text(report_csv(report), "utf-8")
    plots.plot_eval_report(report, out / "report.png")
    first = samples[0]
    _, segments, _ = decode_sample(model, first.features, first.transcript,
                                   args.decoder, args.threshold)
    plots.plot_alignment_strip(segments, first.gold_segments,
                               first.features.shape[0],
                               model.vocab.str_of,
                               out / "alignment_strip.png")
    mae = "n/a" if report.mae_ms is None else f"{report.mae_ms:.1f} ms"
    print(f"{args.decoder}: acc {report.acc:.4f}, mae {mae} "
          f"({report.n_mae_defined}/{report.n_samples} defined)")
    print(f"wrote report.json, report.csv, report.png, "
          f"alignment_strip.png to {out}")
    return 0


def cmd_ablate(args) -> int:
    model = load_checkpoint(args.ckpt)
    samples = read_corpus(args.corpus)
    _echo(f"config threshold = {args.threshold}")
    reports = ablation_run(model, samples, args.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = json.dumps([json.loads(r.to_json()) for r in reports], indent=1)
    (out / "ablation.json").write_text(payload + "\n", "utf-8")
    (out / "ablation.csv").write_text(ablation_csv(reports), "utf-8")
    plots.plot_ablation(reports, out / "ablation.png")
    for r in reports:
        mae = "n/a" if r.mae_ms is None else f"{r.mae_ms:.1f} ms"
        print(f"{r.variant}: acc {r.acc:.4f}, mae {mae}")
    print(f"wrote ablation.json, ablation.csv, ablation.png to {out}")
    return 0


def cmd_export_srt(args) -> int:
    records = json.loads(Path(args.alignment).read_text("utf-8"))
    if not isinstance(records, list):
        raise CliUsageError("alignment file must hold a JSON array")
    _echo(f"config fps = {args.fps}")
    text = segments_to_srt(records, fps=args.fps, drop_sil=args.drop_sil)
    Path(args.out).write_text(text, encoding="utf-8")
    if text.strip():
        parse_srt(text)  # the writer's output must parse back
    print(f"wrote {args.out}")
    return 0


# -- wiring ------------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="vfalign",
                description="visual forced alignment toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    common(sp)
    sp.add_argument("--out", required=True, help="corpus directory")
    sp.add_argument("--n", type=int, required=True, help="sample count")
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("train", help="train a model on a corpus")
    common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("align", help="align one sequence")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--corpus", help="take features/transcript from a corpus")
    sp.add_argument("--sample", help="sample id inside --corpus")
    sp.add_argument("--features", help="VFT1 feature file")
    sp.add_argument("--transcript", help="space-separated tokens or ids")
    sp.add_argument("--decoder", choices=("greedy", "plain", "improved"),
                    default="improved")
    sp.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    sp.add_argument("--fps", type=float, default=25.0)
    sp.add_argument("--boundary-file",
                    help="VFT1 rank-1 boundary probabilities override")
    sp.add_argument("--out", help="alignment JSON path (stdout if omitted)")
    sp.set_defaults(fn=cmd_align)

    sp = sub.add_parser("eval", help="evaluate a decoder over a corpus")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--decoder", choices=("greedy", "plain", "improved"),
                    default="improved")
    sp.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    sp.add_argument("--out", required=True, help="report directory")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ablate", help="compare the three decoders")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    sp.add_argument("--out", required=True, help="report directory")
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("export-srt", help="render alignment JSON as SRT")
    sp.add_argument("--alignment", required=True)
    sp.add_argument("--fps", type=float, default=25.0)
    sp.add_argument("--drop-sil", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_export_srt)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "align":
            has_corpus = bool(args.corpus or args.sample)
            has_file = bool(args.features or args.transcript)
            if has_corpus == has_file:
                raise CliUsageError(
                    "give either --corpus with --sample, or --features "
                    "with --transcript")
            if has_corpus and not (args.corpus and args.sample):
                raise CliUsageError("--corpus requires --sample")
            if has_file and not (args.features and args.transcript):
                raise CliUsageError("--features requires --transcript")
        return args.fn(args)
    except InfeasibleAlignmentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CliUsageError, FileNotFoundError, NotADirectoryError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_entry()
