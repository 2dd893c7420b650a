"""Matplotlib report figures written next to the CSV outputs."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

MODE_LABELS = {
    "full": "CSDA",
    "dda_only": "DDA",
    "focal_only": "Focal",
    "two_net_focal": "Two U-Net",
}

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def training_curves(history, path):
    """Loss and mIoU per epoch for the train and val splits."""
    with plt.rc_context(_RC):
        fig, (ax_loss, ax_miou) = plt.subplots(1, 2, figsize=(7, 2.8))
        for split, style in (("train", "-"), ("val", "--")):
            rows = [r for r in history if r["split"] == split]
            ep = [r["epoch"] for r in rows]
            ax_loss.plot(ep, [r["loss"] for r in rows], style, label=split)
            ax_miou.plot(ep, [r["miou"] for r in rows], style, label=split)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("loss")
        ax_miou.set_xlabel("epoch")
        ax_miou.set_ylabel("mIoU")
        ax_miou.legend()
        return _save(fig, path)


def ablation(rows, path, metrics=("f1", "miou")):
    """Test metrics against d_cs, one line per training mode."""
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.4 * len(metrics), 2.8), squeeze=False)
        modes = list(dict.fromkeys(r["mode"] for r in rows))
        for ax, metric in zip(axes[0], metrics):
            for mode in modes:
                sel = sorted((r for r in rows if r["mode"] == mode), key=lambda r: r["d_cs"])
                ax.plot(
                    [r["d_cs"] for r in sel],
                    [r[metric] for r in sel],
                    marker="o",
                    ms=3,
                    label=MODE_LABELS.get(mode, mode),
                )
            ax.set_xlabel("$d_{CS}$")
            ax.set_ylabel(metric)
        axes[0][-1].legend()
        return _save(fig, path)


def family_boxplot(per_image, path, metrics=("accuracy", "f1", "miou")):
    """Per-image metric distributions grouped by scene family."""
    families = sorted({r["family_id"] for r in per_image})
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.0 * len(metrics), 2.8), squeeze=False)
        for ax, metric in zip(axes[0], metrics):
            data = [[r[metric] for r in per_image if r["family_id"] == f] for f in families]
            ax.boxplot(data)
            ax.set_xticks(range(1, len(families) + 1), [str(f) for f in families])
            ax.set_xlabel("scene family")
            ax.set_ylabel(metric)
        return _save(fig, path)
