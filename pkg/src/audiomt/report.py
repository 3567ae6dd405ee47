"""Report rendering: JSON, aligned text tables, CSV, and PNG figures."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import EvalReport


def text_table(headers: list[str], rows: list[list]) -> str:
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(value: float) -> str:
    return f"{value:.4f}" if isinstance(value, float) else str(value)


def save_eval_reports(out_dir: str | Path, reports: dict[str, EvalReport],
                      name: str = "eval") -> dict[str, Path]:
    """Write one evaluation's reports as JSON, text table, and CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out_dir / f"{name}.json",
        "txt": out_dir / f"{name}.txt",
        "csv": out_dir / f"{name}.csv",
        "png": out_dir / f"{name}.png",
    }
    payload = {task: r.to_dict() for task, r in sorted(reports.items())}
    paths["json"].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    rows = [[task, r.metric, _fmt(r.value), r.support] for task, r in sorted(reports.items())]
    paths["txt"].write_text(text_table(["task", "metric", "value", "support"], rows),
                            encoding="utf-8")
    with open(paths["csv"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "metric", "value", "support"])
        for task, r in sorted(reports.items()):
            writer.writerow([task, r.metric, repr(r.value), r.support])
    tasks = sorted(reports)
    fig, ax = plt.subplots(figsize=(max(4, 1.5 * len(tasks)), 3.5))
    ax.bar(tasks, [reports[t].value for t in tasks], color="#47a")
    for i, t in enumerate(tasks):
        ax.text(i, reports[t].value, f"{reports[t].value:.3g}",
                ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("metric value")
    ax.set_title(", ".join(f"{t}: {reports[t].metric}" for t in tasks), fontsize=8)
    fig.tight_layout()
    fig.savefig(paths["png"], dpi=120)
    plt.close(fig)
    return paths


def save_loss_curve(out_dir: str | Path, loss_log: str | Path,
                    name: str = "loss_curve") -> Path:
    """Render the per-step training loss from a loss_log.jsonl file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps, losses = [], []
    with open(loss_log, encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            steps.append(row["step"])
            losses.append(row["loss"])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, losses, lw=0.9)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out_dir / f"{name}.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_ablation_report(out_dir: str | Path, summary: dict) -> dict[str, Path]:
    """Persist the four-arm comparison: JSON, table, CSV, and figures.

    summary layout (see ablate.run_ablation):
      srwt: {seeds, with/without per-seed ToyASR WER, with per-seed AAS, medians}
      conflict: {tagged: {say, parity}, untagged: {say, parity, mean}}
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out_dir / "ablation.json",
        "txt": out_dir / "ablation.txt",
        "csv": out_dir / "ablation.csv",
        "png": out_dir / "ablation.png",
    }
    paths["json"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")

    srwt = summary["srwt"]
    conflict = summary["conflict"]
    rows = []
    for i, seed in enumerate(srwt["seeds"]):
        rows.append(["A (all tasks)", f"seed {seed}", "ToyASR heldout WER",
                     _fmt(srwt["with_srwt_wer"][i])])
        rows.append(["A (all tasks)", f"seed {seed}", "ToySRWT heldout AAS ms",
                     _fmt(srwt["with_srwt_aas_ms"][i])])
        rows.append(["B (no SRWT)", f"seed {seed}", "ToyASR heldout WER",
                     _fmt(srwt["without_srwt_wer"][i])])
    rows.append(["A (all tasks)", "median", "ToyASR heldout WER",
                 _fmt(srwt["median_with_wer"])])
    rows.append(["B (no SRWT)", "median", "ToyASR heldout WER",
                 _fmt(srwt["median_without_wer"])])
    rows.append(["A (all tasks)", "median", "ToySRWT heldout AAS ms",
                 _fmt(srwt["median_aas_ms"])])
    rows.append(["C (tagged conflict)", f"seed {conflict['seed']}",
                 "ToyConflictSay accuracy", _fmt(conflict["tagged"]["say"])])
    rows.append(["C (tagged conflict)", f"seed {conflict['seed']}",
                 "ToyConflictParity accuracy", _fmt(conflict["tagged"]["parity"])])
    rows.append(["D (untagged conflict)", f"seed {conflict['seed']}",
                 "ToyConflictSay accuracy", _fmt(conflict["untagged"]["say"])])
    rows.append(["D (untagged conflict)", f"seed {conflict['seed']}",
                 "ToyConflictParity accuracy", _fmt(conflict["untagged"]["parity"])])
    rows.append(["D (untagged conflict)", f"seed {conflict['seed']}",
                 "conflict-pair mean accuracy", _fmt(conflict["untagged"]["mean"])])
    paths["txt"].write_text(text_table(["arm", "run", "measure", "value"], rows),
                            encoding="utf-8")
    with open(paths["csv"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm", "run", "measure", "value"])
        writer.writerows(rows)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.8))
    seeds = srwt["seeds"]
    x = range(len(seeds))
    width = 0.38
    ax1.bar([i - width / 2 for i in x], srwt["with_srwt_wer"], width,
            label="with SRWT (A)")
    ax1.bar([i + width / 2 for i in x], srwt["without_srwt_wer"], width,
            label="without SRWT (B)")
    ax1.set_xticks(list(x), [f"seed {s}" for s in seeds])
    ax1.set_ylabel("heldout ToyASR WER")
    ax1.set_title("timestamp co-training")
    ax1.legend(fontsize=8)
    arms = ["Say\n(tagged)", "Parity\n(tagged)", "Say\n(untagged)", "Parity\n(untagged)"]
    values = [conflict["tagged"]["say"], conflict["tagged"]["parity"],
              conflict["untagged"]["say"], conflict["untagged"]["parity"]]
    ax2.bar(arms, values, color=["#2a7", "#2a7", "#c55", "#c55"])
    ax2.axhline(0.5, ls="--", lw=0.8, color="k")
    ax2.set_ylim(0, 1.05)
    ax2.set_ylabel("accuracy")
    ax2.set_title("one-to-many interference")
    fig.tight_layout()
    fig.savefig(paths["png"], dpi=120)
    plt.close(fig)
    return paths
