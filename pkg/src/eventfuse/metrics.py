"""Evaluation: MSE/MAE/DHR/Sharpe metrics, the fused-vs-series-only branch
comparison, gate-openness reporting, and aligned-token inspection.

Scaling conventions for reports: MSE is reported in units of 1e-4, MAE in
1e-3, DHR in 1e-2 (percent). Raw values are always kept alongside scaled
ones. DHR and Sharpe are artifact conventions (step-over-step directional
hit rate; per-event sign-strategy Sharpe without annualization) and are not
comparable to any externally published numbers.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import alignment as al
from . import gating
from . import tensor as T
from .errors import DataError
from .tensor import Tensor

MSE_SCALE = 1e4
MAE_SCALE = 1e3
DHR_SCALE = 1e2


def metric_mse_mae(preds, targets):
    """Dataset aggregates: mean over instances of per-instance MSE and MAE."""
    if len(preds) != len(targets) or not preds:
        raise DataError(f"metric batch mismatch: {len(preds)} vs {len(targets)}")
    mses = [float(np.mean((p - y) ** 2)) for p, y in zip(preds, targets)]
    maes = [float(np.mean(np.abs(p - y))) for p, y in zip(preds, targets)]
    return float(np.mean(mses)), float(np.mean(maes))


def metric_dhr(pred, actual, x_last):
    """Step-over-step directional hit rate for a scalar series.

    Step h compares sign(pred_h - pred_{h-1}) with sign(actual_h -
    actual_{h-1}), step 0 anchored at the last observed value. Zero
    differences count as a hit only when both sides are zero.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    actual = np.asarray(actual, dtype=np.float64).reshape(-1)
    if pred.size == 0 or pred.size != actual.size:
        raise DataError("dhr needs equal nonzero-length paths")
    prev_p = np.concatenate(([x_last], pred[:-1]))
    prev_a = np.concatenate(([x_last], actual[:-1]))
    dp = np.sign(pred - prev_p)
    da = np.sign(actual - prev_a)
    return float(np.mean(dp == da))


def strategy_returns(preds, targets, x_lasts):
    """Per-event sign strategy: position = sign of the predicted final move,
    return = position * realized relative move."""
    out = []
    for p, y, x_last in zip(preds, targets, x_lasts):
        position = np.sign(p[-1, 0] - x_last)
        out.append(float(position * (y[-1, 0] - x_last) / abs(x_last)))
    return np.asarray(out)


def metric_sharpe(returns):
    """Mean over sample std of the strategy returns; nan when undefined."""
    returns = np.asarray(returns, dtype=np.float64)
    if returns.size < 2:
        raise DataError("sharpe needs at least two events")
    std = float(np.std(returns, ddof=1))
    if std == 0.0:
        return float("nan")
    return float(np.mean(returns) / std)


@dataclass
class BranchMetrics:
    mse: float
    mae: float
    dhr: float
    sharpe: float

    def scaled(self):
        return {
            "mse": self.mse * MSE_SCALE,
            "mae": self.mae * MAE_SCALE,
            "dhr": self.dhr * DHR_SCALE if not math.isnan(self.dhr) else float("nan"),
            "sharpe": self.sharpe,
        }


@dataclass
class MetricReport:
    dataset: str
    horizon: int
    n_instances: int
    full: BranchMetrics
    ts_only: BranchMetrics
    improvement_pct: dict
    mean_text_gate: float


@dataclass
class GateReport:
    rows: list  # (uid, category, openness, utility_gap, responsibility)
    category_means: dict
    overall_mean: float
    histogram: tuple  # (counts, bin_edges), 20 bins over [0, 1]


def _forward_eval(model, instances):
    """No-tape full forward over a dataset; returns per-instance arrays."""
    if not instances:
        raise DataError("evaluation needs a nonempty dataset")
    cfg = model.config
    out = {
        "full": [],
        "ts": [],
        "openness": [],
        "gaps": [],
        "targets": [],
        "x_last": [],
    }
    for inst in instances:
        text_states = model.encode_text(inst.script)
        ts_states = model.encode_ts(inst.window)
        mixed_text, mixed_ts = model.align.interleave(text_states, ts_states)
        t_emb = al.pool(mixed_text)
        s_emb = al.pool(mixed_ts)
        text_w, ts_w = gating.gate_weights(t_emb, s_emb, model.gate, cfg.temp_gate)
        fused = gating.fuse(t_emb, s_emb, text_w, ts_w)
        pred_full = model.forecast(fused)
        pred_ts = model.forecast(s_emb)
        y = inst.target.values
        gap = float(np.mean((pred_ts.data - y) ** 2) - np.mean((pred_full.data - y) ** 2))
        out["full"].append(pred_full.data)
        out["ts"].append(pred_ts.data)
        out["openness"].append(gating.openness(text_w).item())
        out["gaps"].append(gap)
        out["targets"].append(inst.target.values)
        out["x_last"].append(float(inst.window.values[-1, 0]))
    return out


def _branch_metrics(preds, targets, x_lasts, d_y):
    mse, mae = metric_mse_mae(preds, targets)
    if d_y == 1 and len(preds) >= 2:
        dhr = float(
            np.mean([metric_dhr(p[:, 0], y[:, 0], x) for p, y, x in zip(preds, targets, x_lasts)])
        )
        sharpe = metric_sharpe(strategy_returns(preds, targets, x_lasts))
    else:
        dhr = float("nan")
        sharpe = float("nan")
    return BranchMetrics(mse=mse, mae=mae, dhr=dhr, sharpe=sharpe)


def compare_branches(model, instances, dataset_name="synthetic", completed_stage3=True):
    """Evaluate the fused decode against the series-only decode on the same
    instances and report the relative improvements plus the mean text gate."""
    if not completed_stage3:
        raise DataError("branch comparison needs a model trained through stage 3")
    ev = _forward_eval(model, instances)
    d_y = instances[0].target.values.shape[1]
    full = _branch_metrics(ev["full"], ev["targets"], ev["x_last"], d_y)
    ts_only = _branch_metrics(ev["ts"], ev["targets"], ev["x_last"], d_y)
    improvement = {}
    for key in ("mse", "mae"):
        base = getattr(ts_only, key)
        improvement[key] = (
            float("nan") if base == 0 else (base - getattr(full, key)) / base * 100.0
        )
    return MetricReport(
        dataset=dataset_name,
        horizon=instances[0].target.values.shape[0],
        n_instances=len(instances),
        full=full,
        ts_only=ts_only,
        improvement_pct=improvement,
        mean_text_gate=float(np.mean(ev["openness"])),
    )


def gate_report(model, instances, n_bins=20):
    """Per-instance gate rows plus per-category and overall means and a
    histogram of openness over [0, 1]."""
    ev = _forward_eval(model, instances)
    resp = gating.responsibility(
        ev["gaps"], model.config.gain, model.config.min_scale, model.config.clip_limit
    )
    rows = []
    by_cat = {}
    for inst, alpha, gap, r in zip(instances, ev["openness"], ev["gaps"], resp):
        cat = inst.script.category.value
        rows.append((inst.uid, cat, alpha, gap, float(r)))
        by_cat.setdefault(cat, []).append(alpha)
    counts, edges = np.histogram(ev["openness"], bins=n_bins, range=(0.0, 1.0))
    return GateReport(
        rows=rows,
        category_means={c: float(np.mean(v)) for c, v in sorted(by_cat.items())},
        overall_mean=float(np.mean(ev["openness"])),
        histogram=(counts, edges),
    )


def align_report(model, instances):
    """Aligned-token inspection rows: for each anchor token of each
    instance, its salience, best-matching step and cosine similarity."""
    if not instances:
        raise DataError("align report needs a nonempty dataset")
    cfg = model.config
    rows = []
    for inst in instances:
        text_states = model.encode_text(inst.script)
        ts_states = model.encode_ts(inst.window)
        space = model.align.spaces(text_states, ts_states)
        profile = model.align.salience(text_states, cfg.top_k_anchors)
        cosine = space.tokens.data @ space.steps.data.T
        for j in profile.anchors:
            step = int(np.argmax(cosine[j]))
            rows.append(
                {
                    "instance": inst.uid,
                    "anchor_token": int(inst.script.token_ids[j]),
                    "token_index": int(j),
                    "salience": float(profile.scores.data[j, 0]),
                    "argmax_step": step,
                    "similarity": float(cosine[j, step]),
                }
            )
    return rows


# ---------------------------------------------------------------------------
# report serialization


def write_metrics_csv(report, path, scaled=True):
    """Branch comparison CSV. Primary columns follow the requested scaling;
    raw values are always carried alongside."""
    cols = (
        "dataset,horizon,n_instances,branch,mse,mae,dhr,sharpe,"
        "mse_raw,mae_raw,dhr_raw,improvement_mse_pct,improvement_mae_pct,mean_text_gate"
    )
    lines = [cols]
    for branch, bm in (("full", report.full), ("ts_only", report.ts_only)):
        s = bm.scaled() if scaled else {
            "mse": bm.mse, "mae": bm.mae, "dhr": bm.dhr, "sharpe": bm.sharpe
        }
        imp_mse = repr(report.improvement_pct["mse"]) if branch == "full" else ""
        imp_mae = repr(report.improvement_pct["mae"]) if branch == "full" else ""
        gate = repr(report.mean_text_gate) if branch == "full" else ""
        lines.append(
            ",".join(
                [
                    report.dataset,
                    str(report.horizon),
                    str(report.n_instances),
                    branch,
                    repr(s["mse"]),
                    repr(s["mae"]),
                    repr(s["dhr"]),
                    repr(s["sharpe"]),
                    repr(bm.mse),
                    repr(bm.mae),
                    repr(bm.dhr),
                    imp_mse,
                    imp_mae,
                    gate,
                ]
            )
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_gate_report(report, out_prefix, svg=False):
    """<prefix>.rows.csv, <prefix>.summary.csv, <prefix>.hist.csv and an
    optional <prefix>.svg histogram."""
    rows_path = out_prefix + ".rows.csv"
    with open(rows_path, "w") as fh:
        fh.write("id,category,openness,utility_gap,responsibility\n")
        for uid, cat, alpha, gap, r in report.rows:
            fh.write(f"{uid},{cat},{alpha!r},{gap!r},{r!r}\n")
    with open(out_prefix + ".summary.csv", "w") as fh:
        fh.write("category,mean_openness\n")
        for cat, mean in report.category_means.items():
            fh.write(f"{cat},{mean!r}\n")
        fh.write(f"overall,{report.overall_mean!r}\n")
    counts, edges = report.histogram
    with open(out_prefix + ".hist.csv", "w") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for i, c in enumerate(counts):
            fh.write(f"{edges[i]!r},{edges[i + 1]!r},{int(c)}\n")
    if svg:
        _write_svg_histogram(counts, edges, out_prefix + ".svg")
    return rows_path


def _write_svg_histogram(counts, edges, path, width=640, height=360):
    pad = 40
    n = len(counts)
    peak = max(int(max(counts)), 1)
    bar_w = (width - 2 * pad) / n
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">'
        "text-gate openness</text>",
    ]
    for i, c in enumerate(counts):
        h = (height - 2 * pad) * (int(c) / peak)
        x = pad + i * bar_w
        y = height - pad - h
        parts.append(
            f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w * 0.9:.1f}" '
            f'height="{h:.1f}" fill="steelblue"/>'
        )
    parts.append(
        f'<text x="{pad}" y="{height - pad + 16}" font-size="11">{edges[0]:.2f}</text>'
    )
    parts.append(
        f'<text x="{width - pad}" y="{height - pad + 16}" text-anchor="end" '
        f'font-size="11">{edges[-1]:.2f}</text>'
    )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
