"""Run traces, delimited output and figures.

A :class:`RunTrace` holds one record per replanning cycle plus a summary
that can be recomputed from the records. Only simulated quantities go into
the trace; wall-clock timings are kept apart so that two runs with the same
seed write byte-identical trace files.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cost import TERMS
from .plan import ReplanStep

RECORD_FIELDS = (["cycle", "time", "remaining", "iterations", "converged", "evaluations", "total"]
                 + [f"cost_{t}" for t in TERMS]
                 + ["frame_confidence", "mean_alpha", "alpha_samples", "min_clearance", "max_penetration", "pre_human_cost",
                    "human_enabled", "violations"])


def _num(v) -> str:
    """Shortest round-trip text for floats; NaN spelled ``nan``."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if np.isnan(v) else repr(v)


@dataclass(frozen=True)
class RunTrace:
    scenario: str
    seed: int
    records: tuple[dict, ...]
    alpha_samples: tuple[float, ...]        # executed frame confidence, all cycles
    horizon_offsets: tuple[float, ...]

    @classmethod
    def from_steps(cls, scenario: str, seed: int, steps: Sequence[ReplanStep], offsets) -> "RunTrace":
        records, alphas = [], []
        for st in steps:
            r = st.result
            terms = r.report.terms
            pen = float(np.max(st.truth_overlap))
            rec = {"cycle": st.cycle, "time": st.time, "remaining": st.remaining, "iterations": r.iterations,
                   "converged": r.converged, "evaluations": r.evaluations, "total": r.report.total}
            rec.update({f"cost_{t}": terms.get(t, 0.0) for t in TERMS})
            rec.update({"frame_confidence": st.sensing.frame_confidence,
                        "mean_alpha": float(np.mean(st.executed_alpha)),
                        "alpha_samples": len(st.executed_alpha),
                        "min_clearance": -pen, "max_penetration": max(pen, 0.0),
                        "pre_human_cost": st.pre_human_cost, "human_enabled": st.human_enabled,
                        "violations": st.violations})
            rec.update({f"d_err_{k}": float(v) for k, v in enumerate(st.d_err)})
            records.append(rec)
            alphas.extend(float(a) for a in st.executed_alpha)
        return cls(scenario, int(seed), tuple(records), tuple(alphas), tuple(float(o) for o in offsets))

    @property
    def summary(self) -> dict:
        recs = self.records
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "cycles": len(recs),
            "mean_alpha": float(np.mean(self.alpha_samples)) if self.alpha_samples else 1.0,
            "max_penetration": max((r["max_penetration"] for r in recs), default=0.0),
            "violations": sum(r["violations"] for r in recs),
            "final_total_cost": recs[-1]["total"] if recs else 0.0,
            "final_human_cost": recs[-1]["cost_human"] if recs else 0.0,
            "final_occlusion_cost": recs[-1]["cost_occlusion"] if recs else 0.0,
            "evaluations": sum(r["evaluations"] for r in recs),
        }

    @property
    def ok(self) -> bool:
        return self.summary["violations"] == 0

    def columns(self) -> list[str]:
        return RECORD_FIELDS + [f"d_err_{k}" for k in range(len(self.horizon_offsets))]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = self.columns()
        w.writerow(cols)
        for rec in self.records:
            w.writerow([_num(rec[c]) for c in cols])
        return buf.getvalue()

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"trace": out / "trace.csv", "summary": out / "summary.json"}
        paths["trace"].write_text(self.to_csv())
        paths["summary"].write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n")
        return paths


def read_trace_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_table(rows: Sequence[dict], columns: Sequence[str], path=None, delimiter: str = ",") -> str:
    """Delimited table text; also written to ``path`` when given."""
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([row[c] if isinstance(row[c], str) else _num(row[c]) for c in columns])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# figures

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, metadata={"Software": None})
    return path


def plot_run(traces: Iterable[RunTrace], out_dir, labels: Sequence[str] | None = None) -> list[Path]:
    """Per-cycle costs, executed confidence and clearance; several traces overlay."""
    plt = _pyplot()
    traces = list(traces)
    labels = list(labels) if labels else [t.scenario for t in traces]
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    for tr, lab in zip(traces, labels):
        t = [r["time"] for r in tr.records]
        axes[0].semilogy(t, [max(r["total"], 1e-12) for r in tr.records], marker="o", label=lab)
        axes[1].plot(t, [r["mean_alpha"] for r in tr.records], marker="o", label=lab)
        axes[2].plot(t, [r["min_clearance"] for r in tr.records], marker="o", label=lab)
    axes[0].set_ylabel("total cost")
    axes[1].set_ylabel("executed confidence")
    axes[1].set_ylim(-0.05, 1.05)
    axes[2].set_ylabel("clearance to human [m]")
    axes[2].axhline(0.0, color="k", lw=0.8)
    axes[2].set_xlabel("time [s]")
    axes[0].legend(loc="best", fontsize="small")
    fig.tight_layout()
    paths = [_save(fig, Path(out_dir) / "run.png")]
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    for tr, lab in zip(traces, labels):
        for rec in tr.records:
            err = [rec[f"d_err_{k}"] for k in range(len(tr.horizon_offsets))]
            ax.plot(tr.horizon_offsets, err, color="0.6", lw=0.8)
    ax.set_xlabel("horizon offset [s]")
    ax.set_ylabel("mean joint error [m]")
    ax.set_title("prediction error per replanning cycle")
    fig.tight_layout()
    paths.append(_save(fig, Path(out_dir) / "prediction_error.png"))
    plt.close(fig)
    return paths


def plot_prediction_table(rows: Sequence[dict], path) -> Path:
    """Mean +- std of d_err against horizon offset, one line per window."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for window in sorted({r["window"] for r in rows}):
        sub = [r for r in rows if r["window"] == window]
        x = np.array([r["offset"] for r in sub])
        m = np.array([r["mean"] for r in sub])
        s = np.array([r["std"] for r in sub])
        ax.errorbar(x, m, yerr=s, marker="o", capsize=3, label=window)
    ax.set_xlabel("horizon offset [s]")
    ax.set_ylabel("d_err [m]")
    ax.legend(loc="best")
    fig.tight_layout()
    out = _save(fig, path)
    plt.close(fig)
    return out


def plot_bench(rows: Sequence[dict], path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(rows)), 4))
    names = [r["scenario"] for r in rows]
    ax.bar(range(len(rows)), [r["mean_alpha"] for r in rows],
           color=["tab:green" if r["status"] == "ok" else "tab:red" for r in rows])
    ax.set_xticks(range(len(rows)), names, rotation=30, ha="right")
    ax.set_ylabel("mean executed confidence")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    out = _save(fig, path)
    plt.close(fig)
    return out


def plot_mix(report_dict: dict, path) -> Path:
    plt = _pyplot()
    rates = report_dict["per_joint_rate"]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar(range(len(rates)), list(rates.values()))
    ax.set_xticks(range(len(rates)), list(rates), rotation=70, fontsize="small")
    ax.set_ylabel("fraction of frames occluded")
    ax.set_title(f"any joint occluded: {report_dict['occluded_fraction']:.2f}, "
                 f"relabelled: {report_dict['relabeled_fraction']:.2f}")
    fig.tight_layout()
    out = _save(fig, path)
    plt.close(fig)
    return out
