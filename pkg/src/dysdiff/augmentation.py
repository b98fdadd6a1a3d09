"""Mixing synthetic data into training sets, SpecAugment masking, and the
leave-one-speaker-out finetune/decode experiment runner.
"""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .corpus import (
    TORGO_DYSARTHRIC,
    CorpusError,
    UtteranceRecord,
    load_manifest,
    load_severity_registry,
    loso_partitions,
    save_manifest,
)
from .metrics import (
    MetricError,
    WerBreakdown,
    WerReport,
    aggregate_wer,
    edit_counts,
    normalize_text,
    report_to_csv,
    round_half_up,
)
from .synthesis import MelSpectrogram

log = logging.getLogger(__name__)

__all__ = [
    "VALID_RATIOS",
    "AugmentationError",
    "MixPlan",
    "mix_ratio",
    "SpecAugmentParams",
    "spec_augment_mask",
    "spec_augment",
    "ExperimentConfig",
    "CellResult",
    "ExperimentResult",
    "run_experiment",
    "read_hypotheses",
    "RenderedReport",
    "render_report",
]

VALID_RATIOS = tuple(range(0, 101, 10))


class AugmentationError(ValueError):
    pass


@dataclass(frozen=True)
class MixPlan:
    ratio_percent: int
    seed: int
    n_real: int
    synthetic_ids: tuple
    records: tuple
    manifest_path: Optional[str] = None

    def write(self, path) -> "MixPlan":
        save_manifest(self.records, path)
        return MixPlan(self.ratio_percent, self.seed, self.n_real, self.synthetic_ids, self.records, str(path))


def mix_ratio(real: Sequence[UtteranceRecord], synthetic: Sequence[UtteranceRecord], ratio_percent: int,
              seed: int = 0) -> MixPlan:
    """All real records plus ``floor(ratio/100 * len(real))`` synthetic ones.

    The synthetic pool is sorted by id and shuffled with ``seed``; the chosen
    records are a prefix of that order, so a lower ratio always selects a
    subset of a higher one.
    """
    if ratio_percent not in VALID_RATIOS:
        raise AugmentationError(f"ratio must be one of {VALID_RATIOS}, got {ratio_percent}")
    need = ratio_percent * len(real) // 100
    if need > len(synthetic):
        raise AugmentationError(
            f"synthetic pool has {len(synthetic)} records, {need} needed for {ratio_percent}% "
            f"(deficit {need - len(synthetic)})")
    pool = sorted(synthetic, key=lambda r: r.utterance_id)
    order = np.random.default_rng(seed).permutation(len(pool))
    chosen = [pool[i] for i in order[:need]]
    records = tuple(real) + tuple(chosen)
    ids = [r.utterance_id for r in records]
    if len(set(ids)) != len(ids):
        raise AugmentationError("mixed manifest would contain duplicate utterance ids")
    return MixPlan(ratio_percent, seed, len(real), tuple(r.utterance_id for r in chosen), records)


@dataclass(frozen=True)
class SpecAugmentParams:
    """Frequency/time masking settings.

    The defaults are conservative choices, not published values.
    """

    n_freq_masks: int = 2
    max_freq_width: int = 15
    n_time_masks: int = 2
    max_time_width: int = 50
    mask_probability: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.n_freq_masks, self.max_freq_width, self.n_time_masks, self.max_time_width) < 0:
            raise AugmentationError("mask counts and widths must be nonnegative")
        if not 0.0 <= self.mask_probability <= 1.0:
            raise AugmentationError(f"mask_probability must lie in [0, 1], got {self.mask_probability}")

    def check_shape(self, shape) -> None:
        n_bands, n_frames = shape
        if self.n_freq_masks and self.max_freq_width > n_bands:
            raise AugmentationError(f"max_freq_width {self.max_freq_width} exceeds {n_bands} bands")
        if self.n_time_masks and self.max_time_width > n_frames:
            raise AugmentationError(f"max_time_width {self.max_time_width} exceeds {n_frames} frames")


def spec_augment_mask(shape, params: SpecAugmentParams, rng: np.random.Generator) -> np.ndarray:
    """Boolean ``F x L`` mask of the cells to zero.

    Each mask slot fires with ``mask_probability``; a fired slot draws a width
    uniformly from ``0..max_width`` and a start uniformly among the positions
    that keep the band inside the matrix.
    """
    params.check_shape(shape)
    n_bands, n_frames = shape
    mask = np.zeros(shape, dtype=bool)
    for _ in range(params.n_freq_masks):
        if rng.random() < params.mask_probability:
            w = int(rng.integers(0, params.max_freq_width + 1))
            f0 = int(rng.integers(0, n_bands - w + 1))
            mask[f0:f0 + w, :] = True
    for _ in range(params.n_time_masks):
        if rng.random() < params.mask_probability:
            w = int(rng.integers(0, params.max_time_width + 1))
            l0 = int(rng.integers(0, n_frames - w + 1))
            mask[:, l0:l0 + w] = True
    return mask


def spec_augment(mel: MelSpectrogram, params: SpecAugmentParams, rng: Optional[np.random.Generator] = None
                 ) -> MelSpectrogram:
    rng = np.random.default_rng(params.seed) if rng is None else rng
    mask = spec_augment_mask(mel.shape, params, rng)
    data = np.array(mel.data, copy=True)
    data[mask] = 0.0
    return MelSpectrogram(data, mel.frame_rate)


@dataclass(frozen=True)
class ExperimentConfig:
    """Experiment description, loaded from JSON.

    ``trainer_cmd`` and ``decoder_cmd`` are command templates; the tokens may
    use ``{train_manifest}``, ``{test_manifest}``, ``{out_dir}``,
    ``{spec_augment}``, ``{target}``, ``{ratio}`` and ``{seed}``. The decoder
    must write ``{out_dir}/hypotheses.tsv`` with ``utterance_id<TAB>text`` lines.
    """

    speakers: tuple
    ratios: tuple
    seed: int
    trainer_cmd: str
    decoder_cmd: str
    workdir: str
    real_manifest: str
    synthetic_manifest: Optional[str] = None
    spec_augment: Optional[SpecAugmentParams] = None
    dry_run: bool = False
    severity_registry: Optional[str] = None
    jobs: int = 1

    @classmethod
    def from_dict(cls, d: Mapping, base_dir=None) -> "ExperimentConfig":
        required = ("speakers", "ratios", "seed", "trainer_cmd", "decoder_cmd", "workdir", "real_manifest")
        missing = [k for k in required if k not in d]
        if missing:
            raise AugmentationError(f"experiment config missing keys: {', '.join(missing)}")
        base = Path(base_dir) if base_dir is not None else None

        def resolve(p):
            if p is None or base is None or Path(p).is_absolute():
                return p
            return str(base / p)

        sa = d.get("spec_augment")
        ratios = tuple(int(r) for r in d["ratios"])
        bad = [r for r in ratios if r not in VALID_RATIOS]
        if bad:
            raise AugmentationError(f"invalid ratios {bad}; expected multiples of 10 in 0..100")
        return cls(
            speakers=tuple(d["speakers"]),
            ratios=ratios,
            seed=int(d["seed"]),
            trainer_cmd=d["trainer_cmd"],
            decoder_cmd=d["decoder_cmd"],
            workdir=resolve(d["workdir"]),
            real_manifest=resolve(d["real_manifest"]),
            synthetic_manifest=resolve(d.get("synthetic_manifest")),
            spec_augment=SpecAugmentParams(**sa) if sa else None,
            dry_run=bool(d.get("dry_run", False)),
            severity_registry=resolve(d.get("severity_registry")),
            jobs=int(d.get("jobs", 1)),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), Path(path).parent)


@dataclass
class CellResult:
    target: str
    ratio: int
    train_manifest: str
    test_manifest: str
    commands: list
    status: str = "planned"  # planned | ok | trainer_failed | decoder_failed | error
    trainer_exit: Optional[int] = None
    decoder_exit: Optional[int] = None
    breakdown: Optional[WerBreakdown] = None
    error: Optional[str] = None
    runtime_s: float = 0.0

    @property
    def external_failure(self) -> bool:
        return self.status in ("trainer_failed", "decoder_failed")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["breakdown"] = None if self.breakdown is None else asdict(self.breakdown)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CellResult":
        d = dict(d)
        if d.get("breakdown") is not None:
            d["breakdown"] = WerBreakdown(**d["breakdown"])
        return cls(**d)


@dataclass
class ExperimentResult:
    cells: list
    severity: Mapping[str, str]
    dry_run: bool = False

    def cell(self, target: str, ratio: int) -> CellResult:
        for c in self.cells:
            if c.target == target and c.ratio == ratio:
                return c
        raise KeyError((target, ratio))

    @property
    def n_invocations(self) -> int:
        return sum((c.trainer_exit is not None) + (c.decoder_exit is not None) for c in self.cells)

    def reports_by_ratio(self) -> dict:
        """One :class:`WerReport` per ratio over the targets that were scored."""
        out = {}
        for ratio in sorted({c.ratio for c in self.cells}):
            per = {c.target: c.breakdown for c in self.cells if c.ratio == ratio and c.breakdown is not None}
            if per:
                out[ratio] = aggregate_wer(per, self.severity)
        return out

    def to_json(self) -> str:
        return json.dumps({"dry_run": self.dry_run, "severity": dict(self.severity),
                           "cells": [c.to_dict() for c in self.cells]}, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentResult":
        d = json.loads(text)
        return cls([CellResult.from_dict(c) for c in d["cells"]], d["severity"], d.get("dry_run", False))


def read_hypotheses(path) -> dict:
    hyps = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise AugmentationError(f"{path}:{lineno}: expected 'utterance_id<TAB>text'")
            uid, text = line.split("\t", 1)
            if uid in hyps:
                raise AugmentationError(f"{path}:{lineno}: duplicate hypothesis for {uid!r}")
            hyps[uid] = text
    return hyps


def score_hypotheses(test: Sequence[UtteranceRecord], hyps: Mapping[str, str]) -> WerBreakdown:
    """Pool edit counts over a speaker's test utterances; missing hypotheses count as empty."""
    known = {r.utterance_id for r in test}
    stray = sorted(set(hyps) - known)
    if stray:
        raise AugmentationError(f"hypotheses for unknown utterances: {', '.join(stray[:5])}")
    s = d = i = n = 0
    for r in test:
        ref = normalize_text(r.prompt)
        hs, hd, hi = edit_counts(ref, normalize_text(hyps.get(r.utterance_id, "")))
        s, d, i, n = s + hs, d + hd, i + hi, n + len(ref)
    if n == 0:
        raise MetricError("test set has no reference words")
    return WerBreakdown(s, d, i, n)


def _format_cmd(template: str, values: Mapping[str, str]) -> list:
    return [tok.format(**values) for tok in shlex.split(template)]


def _plan_cell(config: ExperimentConfig, real, synthetic, target: str, ratio: int) -> CellResult:
    train_speakers, _ = loso_partitions(config.speakers, target)
    keep = set(train_speakers)
    cell_dir = Path(config.workdir) / target / f"aug{ratio:03d}"
    cell_dir.mkdir(parents=True, exist_ok=True)
    train_real = [r for r in real if r.speaker in keep]
    test = [r for r in real if r.speaker == target]
    pool = [r for r in synthetic if r.speaker in keep]
    train_path, test_path = cell_dir / "train.jsonl", cell_dir / "test.jsonl"
    mix = mix_ratio(train_real, pool, ratio, config.seed)
    mix.write(train_path)
    save_manifest(test, test_path)
    sa_path = ""
    if config.spec_augment is not None:
        sa_path = str(cell_dir / "spec_augment.json")
        Path(sa_path).write_text(json.dumps(asdict(config.spec_augment), indent=2) + "\n", encoding="utf-8")
    values = {"train_manifest": str(train_path), "test_manifest": str(test_path), "out_dir": str(cell_dir),
              "spec_augment": sa_path, "target": target, "ratio": str(ratio), "seed": str(config.seed)}
    commands = [_format_cmd(config.trainer_cmd, values), _format_cmd(config.decoder_cmd, values)]
    return CellResult(target, ratio, str(train_path), str(test_path), commands)


def _run_cell(cell: CellResult, test: Sequence[UtteranceRecord]) -> CellResult:
    start = time.monotonic()
    out_dir = Path(cell.train_manifest).parent
    try:
        proc = subprocess.run(cell.commands[0], capture_output=True, text=True)
        cell.trainer_exit = proc.returncode
        if proc.returncode != 0:
            cell.status, cell.error = "trainer_failed", proc.stderr.strip()[-500:]
            return cell
        proc = subprocess.run(cell.commands[1], capture_output=True, text=True)
        cell.decoder_exit = proc.returncode
        if proc.returncode != 0:
            cell.status, cell.error = "decoder_failed", proc.stderr.strip()[-500:]
            return cell
        cell.breakdown = score_hypotheses(test, read_hypotheses(out_dir / "hypotheses.tsv"))
        cell.status = "ok"
    except (OSError, ValueError) as exc:
        cell.status, cell.error = "error", str(exc)
    finally:
        cell.runtime_s = time.monotonic() - start
    return cell


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Plan, and unless ``dry_run`` execute, every (target, ratio) cell.

    Cell failures are recorded on the cell and the run continues. The
    result is also written to ``{workdir}/results.json``.
    """
    real = load_manifest(config.real_manifest)
    synthetic = load_manifest(config.synthetic_manifest) if config.synthetic_manifest else []
    if any(r.origin != "real" for r in real):
        raise CorpusError("real manifest contains synthetic records")
    registry = load_severity_registry(config.severity_registry) if config.severity_registry else TORGO_DYSARTHRIC
    unknown = [s for s in config.speakers if s not in registry]
    if unknown:
        raise CorpusError(f"speakers without severity: {', '.join(unknown)}")
    severity = {s: registry[s].severity for s in config.speakers}

    cells = []
    for target in config.speakers:
        for ratio in config.ratios:
            try:
                cells.append(_plan_cell(config, real, synthetic, target, ratio))
            except (AugmentationError, CorpusError) as exc:
                cells.append(CellResult(target, ratio, "", "", [], status="error", error=str(exc)))
    plan = [{"target": c.target, "ratio": c.ratio, "commands": c.commands, "status": c.status} for c in cells]
    Path(config.workdir, "plan.json").write_text(json.dumps(plan, indent=2) + "\n", encoding="utf-8")

    if not config.dry_run:
        tests = {t: [r for r in real if r.speaker == t] for t in config.speakers}
        todo = [c for c in cells if c.status == "planned"]
        with ThreadPoolExecutor(max_workers=max(1, config.jobs)) as pool:
            list(pool.map(lambda c: _run_cell(c, tests[c.target]), todo))
        for c in cells:
            if c.status != "ok":
                log.warning("cell %s/%d: %s %s", c.target, c.ratio, c.status, c.error or "")
    result = ExperimentResult(cells, severity, config.dry_run)
    Path(config.workdir, "results.json").write_text(result.to_json(), encoding="utf-8")
    return result


GROUP_COLUMNS = (("severe", "Sev."), ("moderate-severe", "M.-Sev."), ("moderate", "Mod."), ("mild", "Mild"))


@dataclass(frozen=True)
class RenderedReport:
    text: str
    csv: str
    table: tuple  # rows of (ratio, {column: pct string or None})


def render_report(results: ExperimentResult | Mapping[int, WerReport]) -> RenderedReport:
    """Ratio-by-column WER table (percent) with the column minima starred."""
    reports = results.reports_by_ratio() if isinstance(results, ExperimentResult) else dict(results)
    if not reports:
        raise AugmentationError("no scored results to report")
    columns = [label for _, label in GROUP_COLUMNS] + ["Avg.", "Ovl."]
    rows = []
    for ratio in sorted(reports):
        rep = reports[ratio]
        vals = {label: (round_half_up(Decimal(repr(rep.severity_groups[g])) * 100) if g in rep.severity_groups else None)
                for g, label in GROUP_COLUMNS}
        vals["Avg."] = round_half_up(Decimal(repr(rep.avg)) * 100)
        vals["Ovl."] = round_half_up(Decimal(repr(rep.ovl)) * 100)
        rows.append((ratio, vals))
    minima = {}
    for col in columns:
        present = [Decimal(v[col]) for _, v in rows if v[col] is not None]
        minima[col] = min(present) if present else None

    def cell(col, v):
        if v is None:
            return "-"
        return v + ("*" if Decimal(v) == minima[col] else "")

    header = ["Aug. %"] + columns
    body = [[str(r)] + [cell(c, v[c]) for c in columns] for r, v in rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = [" | ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    lines += [" | ".join(x.rjust(w) for x, w in zip(row, widths)) for row in body]
    text = "\n".join(lines) + "\n"
    return RenderedReport(text, report_to_csv(reports), tuple(rows))
