"""Delimited reports and the figures rendered next to them.

Every table is plain tab-separated text with a header row and fixed float
formatting, so reruns diff cleanly.  Figures are saved through the Agg
backend; they visualize the same rows the TSV carries and never hold data
of their own.
"""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

FLOAT = "{:.10g}"


def _fmt(x):
    if isinstance(x, float):
        return FLOAT.format(x + 0.0)  # +0.0 folds -0.0 into 0.0
    return str(x)


def tsv(header, rows):
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(_fmt(x) for x in row))
    return "\n".join(lines) + "\n"


def wer_line(counts, tag="WER"):
    return (f"{tag} {counts.rate * 100:.2f}% "
            f"(del {counts.deletions} / ins {counts.insertions} / "
            f"sub {counts.substitutions}) over {counts.ref_len} reference words")


def wer_report(counts, oracle=None):
    lines = [wer_line(counts)]
    if oracle is not None:
        lines.append(wer_line(oracle, tag="oracle WER"))
    return "\n".join(lines) + "\n"


def nbest_rows(utt_id, hyps, cfg, alphabet, word_mode):
    rows = []
    for rank, h in enumerate(hyps, 1):
        text = " ".join(h.words) if word_mode else " ".join(
            alphabet.name_of(y) for y in h.labels)
        rows.append((utt_id, rank, h.combined(cfg),
                     cfg.lambda1 * h.score_posterior,
                     -cfg.lambda2 * h.score_ilm, h.score_lm, text))
    return rows


NBEST_HEADER = ("utt_id", "rank", "combined", "posterior_weighted",
                "ilm_weighted", "lm", "text")


def sweep_table(rows):
    return tsv(("lambda2", "wer", "del", "ins", "sub"),
               [(lam, c.rate, c.deletions, c.insertions, c.substitutions)
                for lam, c in rows])


def linearity_table(stats):
    rows = [(d, stats.mean[d], stats.std[d],
             int(abs(stats.mean[d]) + stats.std[d] <= stats.tau))
            for d in range(len(stats.mean))]
    return tsv(("dim", "mean", "std", "inside_band"), rows)


def context_table(rows):
    return tsv(("context", "final_loss", "wer"),
               [(c, loss, w) for c, loss, w in rows])


def prior_series_table(series):
    """series: name -> list of (epoch, prior) pairs."""
    header = ["epoch"] + sorted(series)
    epochs = sorted({e for rows in series.values() for e, _ in rows})
    table = []
    for e in epochs:
        row = [e]
        for name in sorted(series):
            vals = dict(series[name])
            row.append(vals.get(e, math.nan))
        table.append(tuple(row))
    return tsv(header, table)


# --- figures --------------------------------------------------------------------

def fig_sweep(rows, path, lambda1):
    lams = [lam for lam, _ in rows]
    wers = [c.rate * 100 for _, c in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(lams, wers, marker="o", color="#1f6fb2")
    ax.set_xlabel("internal-LM weight")
    ax.set_ylabel("WER (%)")
    ax.set_title(f"WER vs internal-LM subtraction (posterior weight {lambda1})")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def fig_linearity(stats, path):
    dims = range(len(stats.mean))
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.fill_between(dims, stats.mean - stats.std, stats.mean + stats.std,
                    alpha=0.35, color="#1f6fb2", label="mean ± std")
    ax.plot(dims, stats.mean, color="#1f6fb2", lw=1)
    ax.axhline(stats.tau, color="#b23a1f", ls="--", lw=1, label="linear range")
    ax.axhline(-stats.tau, color="#b23a1f", ls="--", lw=1)
    ax.set_xlabel("joint input dimension")
    ax.set_ylabel("activation input")
    ax.set_title(f"joint pre-activation spread "
                 f"({stats.linear_range_fraction * 100:.0f}% inside band)")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def fig_prior_series(series, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for name in sorted(series):
        pts = sorted(series[name])
        ax.plot([e for e, _ in pts], [p for _, p in pts], marker="o",
                label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("prior cost (nats)")
    ax.set_title("decoder prior cost during training")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
