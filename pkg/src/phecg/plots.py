"""Training-curve and ROC figures, written as SVG."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "phecg",
    "svg.fonttype": "none",
}


def _figure(width=5.0):
    golden = (5 ** 0.5 - 1) / 2
    return plt.subplots(figsize=(width, width * golden))


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _curves(history, key, ylabel, path):
    with plt.rc_context(RC):
        fig, ax = _figure()
        epochs = history.column("epoch")
        ax.plot(epochs, history.column("train_" + key), label="training")
        ax.plot(epochs, history.column("val_" + key), label="validation", linestyle="--")
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_accuracy(history, path):
    return _curves(history, "acc", "accuracy", path)


def plot_loss(history, path):
    return _curves(history, "loss", "binary cross-entropy", path)


def roc_line(report):
    xs = [p[0] for p in report.roc_points]
    ys = [p[1] for p in report.roc_points]
    return xs, ys


def plot_roc(report, path):
    with plt.rc_context(RC):
        fig, ax = _figure(4.0)
        xs, ys = roc_line(report)
        ax.plot([0, 1], [0, 1], color="0.7", linewidth=0.8)
        ax.plot(xs, ys, marker=".", label=f"AUC = {report.auc:.3f}")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.legend(frameon=False, loc="lower right")
        return _save(fig, path)
