"""Evaluation over persisted mixture specs and report emission.

Guided streams are scored positionally; unguided streams get
best-permutation scoring, mirroring the training objective. Reports are
line-delimited JSON (one row per evaluated condition plus an overall
line) with an aligned plain-text rendering, and they contain no
timestamps so identical runs produce identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from .data import Manifest, MixtureSpec, render_mixture
from .errors import FormatError, InvalidInputError
from .losses import pit_min_loss, si_sdr
from .separator import SeparationModel

REPORT_SCHEMA = 1


@dataclass
class ReportRow:
    n_speakers: int
    n_visual: int
    frame_mask_rate: float
    count: int
    si_sdr: float
    si_sdri: float


@dataclass
class EvalReport:
    rows: list
    overall_si_sdr: float
    overall_si_sdri: float
    total_count: int


def score_sample(est_waves, ref_waves, mix_wave, n_visual: int) -> tuple[float, float]:
    """Mean per-stream SI-SDR and SI-SDRi for one sample.

    The first n_visual estimates are matched to their references
    positionally; the rest take the assignment with the best mean
    SI-SDR.
    """
    n = len(est_waves)
    if len(ref_waves) != n:
        raise InvalidInputError(f"{n} estimates vs {len(ref_waves)} references")
    ests = [torch.as_tensor(w.samples) for w in est_waves]
    refs = [torch.as_tensor(w.samples) for w in ref_waves]
    mix = torch.as_tensor(mix_wave.samples)
    assignment = list(range(n_visual))
    if n_visual < n:
        _, perm = pit_min_loss(ests[n_visual:], refs[n_visual:])
        assignment += [n_visual + j for j in perm]
    sdr_vals, sdri_vals = [], []
    for i, j in enumerate(assignment):
        value = float(si_sdr(ests[i], refs[j]))
        sdr_vals.append(value)
        sdri_vals.append(value - float(si_sdr(mix, refs[j])))
    return float(np.mean(sdr_vals)), float(np.mean(sdri_vals))


def model_separate_fn(model: SeparationModel):
    """Wrap a model as the (mix, visuals, n) -> estimates callable the
    evaluator consumes."""
    def separate(mix_wave, visuals, n_speakers):
        return model.separate(mix_wave, visuals, n_speakers)
    return separate


def evaluate_specs(separate_fn, manifest: Manifest, specs: list[MixtureSpec],
                   clip_seconds: float = 6.0, fps: float = 25.0,
                   sample_rate: int = 16000) -> EvalReport:
    """Render every spec, separate, score, and aggregate per condition."""
    groups: dict[tuple, list[tuple[float, float]]] = {}
    for spec in specs:
        mix, refs, visuals = render_mixture(spec, manifest, clip_seconds=clip_seconds,
                                            fps=fps, sample_rate=sample_rate)
        ests = separate_fn(mix, visuals if visuals.n_present else None, spec.n_speakers)
        if len(ests) != spec.n_speakers:
            raise InvalidInputError(
                f"separator returned {len(ests)} streams for N={spec.n_speakers}")
        scores = score_sample(ests, refs, mix, visuals.n_present)
        key = (spec.n_speakers, visuals.n_present, spec.frame_mask_rate)
        groups.setdefault(key, []).append(scores)
    rows = []
    for key in sorted(groups):
        vals = groups[key]
        rows.append(ReportRow(n_speakers=key[0], n_visual=key[1], frame_mask_rate=key[2],
                              count=len(vals),
                              si_sdr=float(np.mean([v[0] for v in vals])),
                              si_sdri=float(np.mean([v[1] for v in vals]))))
    total = sum(r.count for r in rows)
    overall_sdr = sum(r.si_sdr * r.count for r in rows) / total if total else 0.0
    overall_sdri = sum(r.si_sdri * r.count for r in rows) / total if total else 0.0
    return EvalReport(rows=rows, overall_si_sdr=overall_sdr,
                      overall_si_sdri=overall_sdri, total_count=total)


def save_report(report: EvalReport, path) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"kind": "header", "schema": REPORT_SCHEMA}) + "\n")
        for r in report.rows:
            f.write(json.dumps({"kind": "row", "n_speakers": r.n_speakers,
                                "n_visual": r.n_visual,
                                "frame_mask_rate": r.frame_mask_rate, "count": r.count,
                                "si_sdr": r.si_sdr, "si_sdri": r.si_sdri},
                               sort_keys=True) + "\n")
        f.write(json.dumps({"kind": "overall", "count": report.total_count,
                            "si_sdr": report.overall_si_sdr,
                            "si_sdri": report.overall_si_sdri}, sort_keys=True) + "\n")


def load_report(path) -> EvalReport:
    rows = []
    overall = None
    saw_header = False
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: not a report line ({exc})") from exc
            kind = raw.get("kind")
            if kind == "header":
                if raw.get("schema") != REPORT_SCHEMA:
                    raise FormatError(f"{path}: unsupported report schema {raw.get('schema')}")
                saw_header = True
            elif kind == "row":
                rows.append(ReportRow(n_speakers=raw["n_speakers"], n_visual=raw["n_visual"],
                                      frame_mask_rate=raw["frame_mask_rate"],
                                      count=raw["count"], si_sdr=raw["si_sdr"],
                                      si_sdri=raw["si_sdri"]))
            elif kind == "overall":
                overall = raw
            else:
                raise FormatError(f"{path}:{lineno}: unknown report line kind {kind!r}")
    if not saw_header or overall is None:
        raise FormatError(f"{path}: missing report header or overall line")
    return EvalReport(rows=rows, overall_si_sdr=overall["si_sdr"],
                      overall_si_sdri=overall["si_sdri"], total_count=overall["count"])


def format_report_table(report: EvalReport) -> str:
    header = f"{'N':>3} {'P':>3} {'mask':>5} {'count':>6} {'SI-SDR':>9} {'SI-SDRi':>9}"
    lines = [header, "-" * len(header)]
    for r in report.rows:
        lines.append(f"{r.n_speakers:>3} {r.n_visual:>3} {r.frame_mask_rate:>5.2f} "
                     f"{r.count:>6} {r.si_sdr:>9.2f} {r.si_sdri:>9.2f}")
    lines.append("-" * len(header))
    lines.append(f"{'O.A.':>13} {report.total_count:>6} {report.overall_si_sdr:>9.2f} "
                 f"{report.overall_si_sdri:>9.2f}")
    return "\n".join(lines) + "\n"


def drop_rate_summary(report: EvalReport) -> list[dict]:
    """Relative and absolute SI-SDR drop between matched complete (P=N)
    and one-cue-absent (P=N-1) rows at equal frame-mask rates."""
    index = {(r.n_speakers, r.n_visual, r.frame_mask_rate): r for r in report.rows}
    out = []
    for r in report.rows:
        if r.n_visual != r.n_speakers:
            continue
        absent = index.get((r.n_speakers, r.n_speakers - 1, r.frame_mask_rate))
        if absent is None:
            continue
        delta = r.si_sdr - absent.si_sdr
        rel = 1.0 - absent.si_sdr / r.si_sdr if r.si_sdr != 0.0 else None
        out.append({"n_speakers": r.n_speakers, "frame_mask_rate": r.frame_mask_rate,
                    "complete_si_sdr": r.si_sdr, "absent_si_sdr": absent.si_sdr,
                    "abs_delta_db": delta, "rel_drop": rel})
    return out


def format_drop_table(summaries: list[dict]) -> str:
    header = (f"{'N':>3} {'mask':>5} {'complete':>9} {'absent':>9} "
              f"{'delta(dB)':>10} {'drop':>8}")
    lines = [header, "-" * len(header)]
    for s in summaries:
        drop = f"{100.0 * s['rel_drop']:>7.1f}%" if s["rel_drop"] is not None else "     n/a"
        lines.append(f"{s['n_speakers']:>3} {s['frame_mask_rate']:>5.2f} "
                     f"{s['complete_si_sdr']:>9.2f} {s['absent_si_sdr']:>9.2f} "
                     f"{s['abs_delta_db']:>10.2f} {drop}")
    return "\n".join(lines) + "\n"
