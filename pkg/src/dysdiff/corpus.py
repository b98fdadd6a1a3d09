"""Corpus records, manifests and the data-split protocols.

Manifests are line-delimited JSON, one utterance per line. Required fields:
``utterance_id``, ``speaker``, ``prompt``, ``microphone``, ``media_ref``,
``origin``. Optional: ``split``, ``generator``, ``instance``. Any other field
is carried through untouched.

Microphone pairing keys on ``(speaker, instance)`` where ``instance`` is a
recording-session-scoped prompt instance id; when a record has no
``instance`` the prompt text stands in for it.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "SEVERITIES",
    "MICROPHONES",
    "ORIGINS",
    "SPLITS",
    "CorpusError",
    "ManifestError",
    "SpeakerProfile",
    "TORGO_DYSARTHRIC",
    "SEVERITY_GROUPS",
    "UtteranceRecord",
    "HandoffRecord",
    "PairedUnit",
    "PairingResult",
    "SplitPlan",
    "load_manifest",
    "save_manifest",
    "dumps_manifest",
    "load_severity_registry",
    "save_severity_registry",
    "read_vocoder_manifest",
    "write_vocoder_manifest",
    "append_vocoder_manifest",
    "pair_microphones",
    "split_counts",
    "make_splits",
    "loso_partitions",
    "loso_records",
    "severity_group",
    "select_tts_condition",
]

SEVERITIES = ("severe", "moderate-severe", "moderate", "mild", "control")
MICROPHONES = ("array", "head")
ORIGINS = ("real", "synthetic")
SPLITS = ("train", "validation", "test", "unassigned")
REQUIRED_FIELDS = ("utterance_id", "speaker", "prompt", "microphone", "media_ref", "origin")
OPTIONAL_FIELDS = ("split", "generator", "instance")


class CorpusError(ValueError):
    pass


class ManifestError(CorpusError):
    def __init__(self, message: str, line: Optional[int] = None, field_name: Optional[str] = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.field = field_name


@dataclass(frozen=True)
class SpeakerProfile:
    id: str
    gender: str
    severity: str

    def __post_init__(self):
        if self.severity not in SEVERITIES:
            raise CorpusError(f"speaker {self.id}: unknown severity {self.severity!r}")

    @property
    def dysarthric(self) -> bool:
        return self.severity != "control"


def _torgo():
    table = {
        "severe": ("F01", "M01", "M02", "M04"),
        "moderate-severe": ("M05",),
        "moderate": ("F03",),
        "mild": ("F04", "M03"),
    }
    return {s: SpeakerProfile(s, s[0], sev) for sev, ids in table.items() for s in ids}


TORGO_DYSARTHRIC = _torgo()

# G1 gathers severe and moderate-severe speakers, G2 moderate and mild.
SEVERITY_GROUPS = {"G1": ("severe", "moderate-severe"), "G2": ("moderate", "mild")}


def load_severity_registry(path) -> dict:
    """Read ``{"F01": {"gender": "F", "severity": "severe"}, ...}``."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return {sid: SpeakerProfile(sid, entry.get("gender", ""), entry["severity"]) for sid, entry in raw.items()}


def save_severity_registry(registry: Mapping[str, SpeakerProfile], path) -> None:
    data = {sid: {"gender": p.gender, "severity": p.severity} for sid, p in registry.items()}
    Path(path).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class UtteranceRecord:
    utterance_id: str
    speaker: str
    prompt: str
    microphone: str
    media_ref: str
    origin: str = "real"
    split: str = "unassigned"
    generator: Optional[object] = None
    instance: Optional[str] = None
    extra: Mapping = field(default_factory=dict, compare=True)

    def __post_init__(self):
        if self.microphone not in MICROPHONES:
            raise CorpusError(f"{self.utterance_id}: microphone must be one of {MICROPHONES}, got {self.microphone!r}")
        if self.origin not in ORIGINS:
            raise CorpusError(f"{self.utterance_id}: origin must be one of {ORIGINS}, got {self.origin!r}")
        if self.split not in SPLITS:
            raise CorpusError(f"{self.utterance_id}: split must be one of {SPLITS}, got {self.split!r}")
        if self.origin == "synthetic" and not self.generator:
            raise CorpusError(f"{self.utterance_id}: synthetic records need a generator tag")

    @property
    def pair_key(self) -> tuple:
        return (self.speaker, self.instance if self.instance is not None else self.prompt)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in REQUIRED_FIELDS}
        d["split"] = self.split
        if self.generator is not None:
            d["generator"] = self.generator
        if self.instance is not None:
            d["instance"] = self.instance
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: Mapping, line: Optional[int] = None) -> "UtteranceRecord":
        for name in REQUIRED_FIELDS:
            if name not in d:
                raise ManifestError(f"missing required field {name!r}", line, name)
        known = set(REQUIRED_FIELDS) | set(OPTIONAL_FIELDS)
        try:
            return cls(
                **{k: d[k] for k in REQUIRED_FIELDS},
                split=d.get("split", "unassigned"),
                generator=d.get("generator"),
                instance=d.get("instance"),
                extra={k: v for k, v in d.items() if k not in known},
            )
        except CorpusError as exc:
            raise ManifestError(str(exc), line) from None


def load_manifest(path) -> list:
    records, seen = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise ManifestError("record must be a JSON object", lineno)
            rec = UtteranceRecord.from_dict(obj, lineno)
            if rec.utterance_id in seen:
                raise ManifestError(
                    f"duplicate utterance_id {rec.utterance_id!r} (first on line {seen[rec.utterance_id]})",
                    lineno, "utterance_id")
            seen[rec.utterance_id] = lineno
            records.append(rec)
    return records


def dumps_manifest(records: Iterable[UtteranceRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in records)


def save_manifest(records: Iterable[UtteranceRecord], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dumps_manifest(records), encoding="utf-8")


@dataclass(frozen=True)
class HandoffRecord:
    """One vocoder job: ``id, speaker, text, mel_path, wav_path``, tab-separated."""

    id: str
    speaker: str
    text: str
    mel_path: str
    wav_path: str

    def to_line(self) -> str:
        fields = (self.id, self.speaker, self.text, self.mel_path, self.wav_path)
        for f in fields:
            if "\t" in f or "\n" in f or "\r" in f:
                raise CorpusError(f"vocoder manifest fields may not contain tabs or newlines: {f!r}")
        return "\t".join(fields) + "\n"


def append_vocoder_manifest(record: HandoffRecord, path) -> None:
    with open(path, "a", encoding="utf-8", newline="") as fh:
        fh.write(record.to_line())


def write_vocoder_manifest(records: Iterable[HandoffRecord], path) -> None:
    Path(path).write_text("".join(r.to_line() for r in records), encoding="utf-8")


def read_vocoder_manifest(path) -> list:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ManifestError(f"expected 5 tab-separated fields, got {len(parts)}", lineno)
            out.append(HandoffRecord(*parts))
    return out


@dataclass(frozen=True)
class PairedUnit:
    key: tuple
    records: tuple

    @property
    def speaker(self) -> str:
        return self.key[0]

    @property
    def paired(self) -> bool:
        return len(self.records) == 2


@dataclass(frozen=True)
class PairingResult:
    units: tuple

    @property
    def unpaired(self) -> tuple:
        return tuple(u for u in self.units if not u.paired)

    @property
    def n_unpaired(self) -> int:
        return len(self.unpaired)


def pair_microphones(records: Iterable[UtteranceRecord]) -> PairingResult:
    """Group array and head recordings of the same prompt instance."""
    groups: dict = {}
    for r in records:
        groups.setdefault(r.pair_key, []).append(r)
    units = []
    for key, recs in groups.items():
        if len(recs) > 2:
            ids = ", ".join(r.utterance_id for r in recs)
            raise CorpusError(f"{len(recs)} records share pair key {key}: {ids}")
        if len(recs) == 2 and recs[0].microphone == recs[1].microphone:
            raise CorpusError(f"pair key {key} has two {recs[0].microphone} recordings")
        units.append(PairedUnit(key, tuple(sorted(recs, key=lambda r: MICROPHONES.index(r.microphone)))))
    return PairingResult(tuple(units))


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_counts(n: int, ratios=(0.8, 0.1, 0.1)) -> tuple:
    """``(train, validation, test)`` sizes; validation and test get at least one unit."""
    if n < 3:
        raise CorpusError(f"need at least 3 units to split, got {n}")
    n_val = max(1, _half_up(ratios[1] * n))
    n_test = max(1, _half_up(ratios[2] * n))
    return n - n_val - n_test, n_val, n_test


@dataclass(frozen=True)
class SplitPlan:
    assignments: Mapping[tuple, str]
    seed: int
    ratios: tuple

    def split_of(self, record: UtteranceRecord) -> str:
        return self.assignments[record.pair_key]

    def counts(self) -> dict:
        out: dict = {}
        for (speaker, _), split in self.assignments.items():
            out.setdefault(speaker, {"train": 0, "validation": 0, "test": 0})[split] += 1
        return out

    def apply(self, records: Iterable[UtteranceRecord]) -> list:
        out = []
        for r in records:
            if r.split != "unassigned" and r.split != self.split_of(r):
                raise CorpusError(f"{r.utterance_id} already assigned to {r.split}")
            out.append(replace(r, split=self.split_of(r)))
        return out


def _speaker_rng(seed: int, speaker: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(speaker.encode("utf-8"))])


def make_splits(units: PairingResult | Sequence[PairedUnit], ratios=(0.8, 0.1, 0.1), seed: int = 0) -> SplitPlan:
    """Per speaker: seeded shuffle of the units, then contiguous train/validation/test cuts.

    Each speaker's shuffle is seeded from ``(seed, crc32(speaker))`` so a
    speaker's split does not depend on which other speakers are present.
    """
    if isinstance(units, PairingResult):
        units = units.units
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or not math.isclose(sum(ratios), 1.0):
        raise CorpusError(f"ratios must be three nonnegative numbers summing to 1, got {ratios}")
    by_speaker: dict = {}
    for u in units:
        by_speaker.setdefault(u.speaker, []).append(u.key)
    short = sorted(s for s, keys in by_speaker.items() if len(keys) < 3)
    if short:
        raise CorpusError(f"speakers with fewer than 3 units: {', '.join(short)}")
    assignments = {}
    for speaker in sorted(by_speaker):
        keys = sorted(by_speaker[speaker], key=repr)
        order = _speaker_rng(seed, speaker).permutation(len(keys))
        n_train, n_val, _ = split_counts(len(keys), ratios)
        for rank, idx in enumerate(order):
            split = "train" if rank < n_train else "validation" if rank < n_train + n_val else "test"
            assignments[keys[idx]] = split
    return SplitPlan(assignments, seed, ratios)


def loso_partitions(speakers: Sequence[str], target: str) -> tuple:
    """``(training speakers, target)`` for leave-one-speaker-out evaluation."""
    speakers = list(dict.fromkeys(speakers))
    if len(speakers) < 2:
        raise CorpusError("LOSO needs at least two speakers")
    if target not in speakers:
        raise CorpusError(f"unknown target speaker {target!r}")
    return tuple(s for s in speakers if s != target), target


def loso_records(records: Iterable[UtteranceRecord], speakers: Sequence[str], target: str) -> tuple:
    """Training and test record lists for one LOSO fold."""
    train_speakers, _ = loso_partitions(speakers, target)
    keep = set(train_speakers)
    records = list(records)
    train = [r for r in records if r.speaker in keep]
    test = [r for r in records if r.speaker == target]
    return train, test


def severity_group(group: str, registry: Mapping[str, SpeakerProfile] = TORGO_DYSARTHRIC) -> frozenset:
    if group not in SEVERITY_GROUPS:
        raise CorpusError(f"unknown severity group {group!r}; expected one of {sorted(SEVERITY_GROUPS)}")
    levels = SEVERITY_GROUPS[group]
    return frozenset(s for s, p in registry.items() if p.severity in levels)


def select_tts_condition(
    records: Iterable[UtteranceRecord],
    mode: str,
    arg: Optional[str] = None,
    registry: Mapping[str, SpeakerProfile] = TORGO_DYSARTHRIC,
) -> list:
    """Training records for a TTS condition.

    ``mode`` is ``"ASp"`` (all dysarthric speakers), ``"SSp"`` with a speaker
    id, or ``"DSpG"`` with ``"G1"``/``"G2"``. The ``"SSp:M05"`` shorthand is
    accepted too. Only train and validation records are returned.
    """
    if ":" in mode and arg is None:
        mode, arg = mode.split(":", 1)
    if mode == "ASp":
        speakers = {s for s, p in registry.items() if p.dysarthric}
    elif mode == "SSp":
        if arg not in registry:
            raise CorpusError(f"SSp needs a registered speaker, got {arg!r}")
        if not registry[arg].dysarthric:
            raise CorpusError(f"SSp speaker {arg} is a control speaker; a dysarthric speaker is required")
        speakers = {arg}
    elif mode == "DSpG":
        speakers = set(severity_group(arg, registry))
    else:
        raise CorpusError(f"unknown TTS condition {mode!r}")
    return [r for r in records if r.speaker in speakers and r.split in ("train", "validation")]
