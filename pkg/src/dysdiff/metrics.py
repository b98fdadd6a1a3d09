"""Evaluation arithmetic: DTW, mel-cepstral distortion, WER and Kendall's tau."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.fft import dct

__all__ = [
    "MetricError",
    "MCD_CONSTANT",
    "SEVERITY_ORDER",
    "DtwResult",
    "WerBreakdown",
    "WerReport",
    "ReportRow",
    "dtw_align",
    "mel_to_cepstra",
    "mcd",
    "mcd_from_cepstra",
    "normalize_text",
    "wer",
    "edit_counts",
    "aggregate_wer",
    "kendall_tau",
    "round_half_up",
    "report_to_csv",
    "read_report_csv",
]

MCD_CONSTANT = 10.0 * math.sqrt(2.0) / math.log(10.0)
SEVERITY_ORDER = ("severe", "moderate-severe", "moderate", "mild", "control")

CSV_HEADER = ("speaker", "severity", "S", "D", "I", "ref_words", "wer_pct")


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class DtwResult:
    path: tuple
    total_cost: float

    @property
    def mean_cost(self) -> float:
        return self.total_cost / len(self.path)


def _euclidean_cost_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a2 = a.reshape(len(a), -1)
    b2 = b.reshape(len(b), -1)
    return np.sqrt(np.sum((a2[:, None, :] - b2[None, :, :]) ** 2, axis=-1))


def dtw_align(a, b, dist: Optional[Callable] = None) -> DtwResult:
    """Minimal-cost monotone alignment of two frame sequences.

    Steps advance ``(i+1, j+1)``, ``(i+1, j)`` or ``(i, j+1)``. The cost is the
    sum of frame distances over every cell on the path. On equal-cost
    predecessors the backtrace prefers the diagonal, then ``(i-1, j)``, then
    ``(i, j-1)``. ``dist`` defaults to Euclidean distance between frames.
    """
    if len(a) == 0 or len(b) == 0:
        raise MetricError("DTW needs two nonempty sequences")
    if dist is None:
        cost = _euclidean_cost_matrix(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    else:
        cost = np.array([[float(dist(x, y)) for y in b] for x in a])
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row_prev = acc[i - 1]
        row = acc[i]
        c = cost[i - 1]
        for j in range(1, m + 1):
            best = row_prev[j - 1]
            if row_prev[j] < best:
                best = row_prev[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = c[j - 1] + best
    path = [(n - 1, m - 1)]
    i, j = n, m
    while (i, j) != (1, 1):
        diag, up, left = acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
        if diag <= up and diag <= left:
            i, j = i - 1, j - 1
        elif up <= left:
            i -= 1
        else:
            j -= 1
        path.append((i - 1, j - 1))
    path.reverse()
    return DtwResult(path=tuple(path), total_cost=float(acc[n, m]))


def mel_to_cepstra(mel, order: int = 13) -> np.ndarray:
    """Orthonormal DCT-II of every log-mel column, keeping coefficients ``1..order``.

    Returns an ``(L, order)`` array, one cepstral vector per frame.
    """
    data = np.asarray(getattr(mel, "data", mel), dtype=np.float64)
    if data.ndim != 2:
        raise MetricError(f"expected an F x L matrix, got shape {data.shape}")
    n_bands = data.shape[0]
    if not 1 <= order <= n_bands - 1:
        raise MetricError(f"cepstral order must lie in [1, {n_bands - 1}], got {order}")
    c = dct(data, type=2, axis=0, norm="ortho")
    return c[1:order + 1].T


def mcd_from_cepstra(ref_cep: np.ndarray, syn_cep: np.ndarray) -> float:
    """MCD in dB between two cepstral sequences (frames on axis 0)."""
    res = dtw_align(ref_cep, syn_cep)
    return MCD_CONSTANT * res.mean_cost


def mcd(reference, synthesized, order: int = 13) -> float:
    """Mel-cepstral distortion after DTW alignment, averaged over the aligned pairs."""
    ref = np.asarray(getattr(reference, "data", reference))
    syn = np.asarray(getattr(synthesized, "data", synthesized))
    if ref.shape[0] != syn.shape[0]:
        raise MetricError(f"band count differs: {ref.shape[0]} vs {syn.shape[0]}")
    return mcd_from_cepstra(mel_to_cepstra(ref, order), mel_to_cepstra(syn, order))


def normalize_text(raw: str) -> list:
    """Lowercase, keep letters, digits and in-word apostrophes, split on spaces."""
    s = " ".join(raw.lower().split())
    s = "".join(ch for ch in s if ch.isalpha() or ch.isdigit() or ch in "' ")
    kept = []
    for i, ch in enumerate(s):
        if ch == "'":
            if not (0 < i < len(s) - 1 and s[i - 1].isalpha() and s[i + 1].isalpha()):
                continue
        kept.append(ch)
    return [tok for tok in "".join(kept).split(" ") if tok]


@dataclass(frozen=True)
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    reference_words: int

    def __post_init__(self):
        if min(self.substitutions, self.deletions, self.insertions) < 0:
            raise MetricError("edit counts must be nonnegative")
        if self.reference_words < 1:
            raise MetricError("reference must contain at least one word")

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.reference_words

    def __add__(self, other: "WerBreakdown") -> "WerBreakdown":
        return WerBreakdown(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.reference_words + other.reference_words,
        )


def edit_counts(ref: Sequence, hyp: Sequence) -> tuple:
    """``(S, D, I)`` of a minimal unit-cost alignment of ``hyp`` against ``ref``.

    The backtrace prefers substitution (or match), then insertion, then deletion.
    """
    n, m = len(ref), len(hyp)
    d = [list(range(m + 1))]
    for i in range(1, n + 1):
        prev, row = d[-1], [i]
        r = ref[i - 1]
        for j in range(1, m + 1):
            row.append(min(prev[j - 1] + (r != hyp[j - 1]), row[j - 1] + 1, prev[j] + 1))
        d.append(row)
    s = dl = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and d[i][j] == d[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dl += 1
            i -= 1
    return int(s), dl, ins


def wer(reference: Sequence, hypothesis: Sequence) -> WerBreakdown:
    if len(reference) == 0:
        raise MetricError("WER is undefined for an empty reference")
    s, d, i = edit_counts(reference, hypothesis)
    return WerBreakdown(s, d, i, len(reference))


@dataclass(frozen=True)
class WerReport:
    per_speaker: Mapping[str, WerBreakdown]
    severity: Mapping[str, str]
    severity_groups: Mapping[str, float]
    avg: float
    ovl: float

    @property
    def pooled(self) -> WerBreakdown:
        total = None
        for b in self.per_speaker.values():
            total = b if total is None else total + b
        return total


def aggregate_wer(per_speaker: Mapping[str, WerBreakdown], severity: Mapping[str, str]) -> WerReport:
    """Speaker-average, pooled and per-severity-group WER."""
    if not per_speaker:
        raise MetricError("at least one speaker is required")
    missing = [s for s in per_speaker if s not in severity]
    if missing:
        raise MetricError(f"no severity for speaker(s): {', '.join(sorted(missing))}")
    members: dict = {}
    for spk in per_speaker:
        members.setdefault(severity[spk], []).append(per_speaker[spk].wer)
    order = {g: i for i, g in enumerate(SEVERITY_ORDER)}
    groups = {g: float(np.mean(members[g])) for g in sorted(members, key=lambda g: (order.get(g, len(order)), g))}
    rates = [b.wer for b in per_speaker.values()]
    pooled_err = sum(b.errors for b in per_speaker.values())
    pooled_ref = sum(b.reference_words for b in per_speaker.values())
    return WerReport(
        per_speaker=dict(per_speaker),
        severity={s: severity[s] for s in per_speaker},
        severity_groups=groups,
        avg=float(np.mean(rates)),
        ovl=pooled_err / pooled_ref,
    )


def kendall_tau(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Tie-corrected Kendall rank correlation (tau-b) by pair counting."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError("xs and ys must be 1-D sequences of equal length")
    if len(x) < 2:
        raise MetricError("need at least two observations")
    iu = np.triu_indices(len(x), k=1)
    dx = np.sign(x[iu[1]] - x[iu[0]])
    dy = np.sign(y[iu[1]] - y[iu[0]])
    prod = dx * dy
    concordant = int(np.sum(prod > 0))
    discordant = int(np.sum(prod < 0))
    only_x_tied = int(np.sum((dx == 0) & (dy != 0)))
    only_y_tied = int(np.sum((dy == 0) & (dx != 0)))
    denom = (concordant + discordant + only_x_tied) * (concordant + discordant + only_y_tied)
    if denom == 0:
        raise MetricError("Kendall's tau is undefined when one variable is constant")
    return (concordant - discordant) / math.sqrt(denom)


def round_half_up(value, places: int = 2) -> str:
    """Decimal string of ``value`` rounded half-up (shortest float repr is the input)."""
    d = value if isinstance(value, Decimal) else Decimal(repr(float(value)))
    return str(d.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


def _pct(rate: float) -> str:
    return round_half_up(Decimal(repr(float(rate))) * 100)


def _report_rows(report: WerReport):
    yield from (
        [spk, report.severity[spk], b.substitutions, b.deletions, b.insertions, b.reference_words, _pct(b.wer)]
        for spk, b in report.per_speaker.items()
    )
    yield ["AVG", "", "", "", "", "", _pct(report.avg)]
    p = report.pooled
    yield ["OVL", "", p.substitutions, p.deletions, p.insertions, p.reference_words, _pct(report.ovl)]
    for group, rate in report.severity_groups.items():
        yield ["GROUP", group, "", "", "", "", _pct(rate)]


def report_to_csv(report: WerReport | Mapping[int, WerReport], key_column: str = "aug_pct") -> str:
    """CSV with per-speaker rows followed by AVG, OVL and one GROUP row per severity.

    A mapping of reports is written with an extra leading ``key_column``.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if isinstance(report, WerReport):
        w.writerow(CSV_HEADER)
        w.writerows(_report_rows(report))
    else:
        w.writerow((key_column,) + CSV_HEADER)
        for key, rep in report.items():
            w.writerows([key] + row for row in _report_rows(rep))
    return buf.getvalue()


@dataclass(frozen=True)
class ReportRow:
    speaker: str
    severity: str
    S: Optional[int]
    D: Optional[int]
    I: Optional[int]
    ref_words: Optional[int]
    wer_pct: str
    key: Optional[str] = None

    @property
    def is_summary(self) -> bool:
        return self.speaker in ("AVG", "OVL", "GROUP")


def read_report_csv(text: str) -> list:
    """Parse a CSV written by :func:`report_to_csv` into :class:`ReportRow` items."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise MetricError("empty report")
    header = tuple(rows[0])
    keyed = len(header) == len(CSV_HEADER) + 1 and header[1:] == CSV_HEADER
    if header != CSV_HEADER and not keyed:
        raise MetricError(f"unexpected report header {header}")

    def num(v):
        return int(v) if v != "" else None

    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise MetricError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        key = row[0] if keyed else None
        f = row[1:] if keyed else row
        out.append(ReportRow(f[0], f[1], num(f[2]), num(f[3]), num(f[4]), num(f[5]), f[6], key))
    return out


def report_from_rows(rows: Sequence[ReportRow], key: Optional[str] = None) -> WerReport:
    """Rebuild a report from the per-speaker rows of a parsed CSV."""
    speakers = [r for r in rows if not r.is_summary and r.key == key]
    per = {r.speaker: WerBreakdown(r.S, r.D, r.I, r.ref_words) for r in speakers}
    return aggregate_wer(per, {r.speaker: r.severity for r in speakers})
