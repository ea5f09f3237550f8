"""Figure rendering for the report paths (loss curves, eval summaries,
decoder comparisons, alignment strips). All functions write a PNG and
return the path."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_loss_curve(curve: list[dict], path) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [row["epoch"] for row in curve]
    for key, label in (("frame_loss", "frame"), ("boundary_loss", "boundary"),
                       ("silence_loss", "silence"), ("total_loss", "total")):
        ax.plot(epochs, [row[key] for row in curve], marker="o", label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("training loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_eval_report(report, path) -> str:
    accs = [rec["acc"] for rec in report.per_sample]
    maes = [rec["mae_ms"] for rec in report.per_sample
            if rec["mae_ms"] is not None]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    axes[0].hist(accs, bins=20, color="tab:blue")
    axes[0].set_title(f"frame accuracy ({report.variant})")
    axes[0].set_xlabel("accuracy")
    if maes:
        axes[1].hist(maes, bins=20, color="tab:orange")
    axes[1].set_title("boundary MAE (ms)")
    axes[1].set_xlabel("ms")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_ablation(reports, path) -> str:
    names = [r.variant for r in reports]
    accs = [r.acc for r in reports]
    maes = [r.mae_ms if r.mae_ms is not None else 0.0 for r in reports]
    x = np.arange(len(names))
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    axes[0].bar(x, accs, color="tab:blue")
    axes[0].set_xticks(x, names)
    axes[0].set_ylim(0, 1)
    axes[0].set_title("frame accuracy")
    axes[1].bar(x, maes, color="tab:orange")
    axes[1].set_xticks(x, names)
    axes[1].set_title("boundary MAE (ms)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_alignment_strip(pred_segments, gold_segments, t_len: int,
                         token_name, path) -> str:
    """Two colored strips, prediction over reference, one span per segment."""
    fig, ax = plt.subplots(figsize=(max(6, t_len / 8), 2.4))
    cmap = plt.get_cmap("tab20")
    for row, (label, segs) in enumerate((("gold", gold_segments),
                                         ("pred", pred_segments))):
        for seg in segs:
            token, start, end = seg.token, seg.start, seg.end
            ax.barh(row, end - start + 1, left=start,
                    color=cmap(token % 20), edgecolor="black", height=0.8)
            if end - start >= 1:
                ax.text((start + end + 1) / 2, row, token_name(token),
                        ha="center", va="center", fontsize=7)
    ax.set_yticks([0, 1], ["gold", "pred"])
    ax.set_xlim(0, t_len)
    ax.set_xlabel("frame")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
