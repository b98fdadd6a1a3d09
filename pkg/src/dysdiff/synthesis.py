"""Text to mel-spectrogram synthesis with a lookup encoder and reverse diffusion.

Also defines the binary tensor container used for mel files and for score
network parameters, and the vocoder hand-off manifest writer.
"""

from __future__ import annotations

import os
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .corpus import HandoffRecord, append_vocoder_manifest, read_vocoder_manifest
from .diffusion import NoiseSchedule, reverse_generate

__all__ = [
    "N_MELS",
    "DEFAULT_ALPHABET",
    "SynthesisError",
    "UnknownTokenError",
    "MelFormatError",
    "BadMagicError",
    "TruncatedPayloadError",
    "DimensionMismatchError",
    "TextSequence",
    "EncoderTable",
    "EncoderOutput",
    "MelSpectrogram",
    "encode_text_stub",
    "synthesize",
    "write_mel",
    "read_mel",
    "write_tensors",
    "read_tensors",
    "save_score_net",
    "load_score_net",
    "vocoder_handoff",
]

N_MELS = 80
DEFAULT_ALPHABET = " 'abcdefghijklmnopqrstuvwxyz"

MEL_MAGIC = b"MEL1"
PARAM_MAGIC = b"PRM1"
_HEADER = struct.Struct("<4sII")


class SynthesisError(ValueError):
    pass


class UnknownTokenError(SynthesisError):
    def __init__(self, token: str):
        super().__init__(f"unknown token {token!r}")
        self.token = token


class MelFormatError(ValueError):
    """Base class for malformed tensor files."""


class BadMagicError(MelFormatError):
    pass


class TruncatedPayloadError(MelFormatError):
    pass


class DimensionMismatchError(MelFormatError):
    pass


@dataclass(frozen=True)
class TextSequence:
    characters: str
    tokens: tuple

    @classmethod
    def from_text(cls, raw: str, alphabet: str = DEFAULT_ALPHABET) -> "TextSequence":
        """Lowercase, collapse whitespace and map characters to symbol ids."""
        chars = " ".join(raw.lower().split())
        if not chars:
            raise SynthesisError("text is empty after normalization")
        index = {c: i for i, c in enumerate(alphabet)}
        for c in chars:
            if c not in index:
                raise UnknownTokenError(c)
        return cls(chars, tuple(index[c] for c in chars))


@dataclass(frozen=True)
class EncoderOutput:
    mu: np.ndarray
    durations: tuple

    @property
    def n_frames(self) -> int:
        return self.mu.shape[1]


@dataclass
class EncoderTable:
    """Per-symbol duration and mean column, plus per-speaker additive offsets."""

    durations: Mapping[str, int]
    means: Mapping[str, np.ndarray]
    speaker_offsets: Sequence[float] = (0.0,)

    @classmethod
    def default(cls, alphabet: str = DEFAULT_ALPHABET, n_speakers: int = 8, n_mels: int = N_MELS,
                seed: int = 0) -> "EncoderTable":
        """A deterministic table with smooth random spectral envelopes."""
        rng = np.random.default_rng(seed)
        bands = np.linspace(0.0, 1.0, n_mels)
        durations, means = {}, {}
        for c in alphabet:
            durations[c] = int(rng.integers(2, 7))
            coef = rng.normal(0.0, 1.0, 4)
            env = -4.0 - 3.0 * bands + sum(a * np.cos(np.pi * (k + 1) * bands) for k, a in enumerate(coef))
            means[c] = env
        offsets = tuple(float(o) for o in np.linspace(-0.5, 0.5, n_speakers)) if n_speakers > 1 else (0.0,)
        return cls(durations, means, offsets)


def encode_text_stub(text: TextSequence | str, speaker: int, table: EncoderTable) -> EncoderOutput:
    """Expand each character into ``duration`` copies of its mean column."""
    chars = text.characters if isinstance(text, TextSequence) else text
    if not chars:
        raise SynthesisError("text is empty")
    if not 0 <= speaker < len(table.speaker_offsets):
        raise SynthesisError(f"speaker {speaker} not registered ({len(table.speaker_offsets)} speakers)")
    columns, durations = [], []
    for c in chars:
        if c not in table.durations or c not in table.means:
            raise UnknownTokenError(c)
        d = int(table.durations[c])
        durations.append(d)
        columns.append(np.repeat(np.asarray(table.means[c], dtype=np.float64)[:, None], d, axis=1))
    mu = np.concatenate(columns, axis=1) + table.speaker_offsets[speaker]
    return EncoderOutput(mu=mu, durations=tuple(durations))


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-mel magnitudes, ``F x L`` with ``F = 80``."""

    data: np.ndarray
    frame_rate: Optional[float] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise SynthesisError(f"mel must be a 2-D matrix, got shape {data.shape}")
        if data.shape[0] != N_MELS:
            raise SynthesisError(f"mel must have {N_MELS} bands, got {data.shape[0]}")
        if data.shape[1] < 1:
            raise SynthesisError("mel must have at least one frame")
        if not np.all(np.isfinite(data)):
            raise SynthesisError("mel contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


def synthesize(
    text: TextSequence | str,
    speaker: int,
    score,
    sched: NoiseSchedule,
    n_steps: int = 100,
    rng: Optional[np.random.Generator] = None,
    *,
    table: Optional[EncoderTable] = None,
    t_min: float = 1e-3,
    frame_rate: Optional[float] = None,
) -> MelSpectrogram:
    """Generate a mel-spectrogram for ``text`` spoken by ``speaker``."""
    if not isinstance(text, TextSequence):
        text = TextSequence.from_text(text)
    table = EncoderTable.default() if table is None else table
    rng = np.random.default_rng() if rng is None else rng
    enc = encode_text_stub(text, speaker, table)
    x = reverse_generate(sched, enc.mu, score, n_steps, t_min, rng, speaker=speaker)
    return MelSpectrogram(x, frame_rate)


def _pack(magic: bytes, matrix: np.ndarray) -> bytes:
    rows, cols = matrix.shape
    payload = np.asarray(matrix, dtype="<f4").ravel(order="F").tobytes()
    return _HEADER.pack(magic, rows, cols) + payload


def _unpack(buf: bytes, offset: int, magic: bytes):
    if len(buf) - offset < _HEADER.size:
        raise TruncatedPayloadError(f"header truncated at byte {offset}")
    got, rows, cols = _HEADER.unpack_from(buf, offset)
    if got != magic:
        raise BadMagicError(f"expected magic {magic!r}, got {got!r}")
    offset += _HEADER.size
    n = rows * cols * 4
    if len(buf) - offset < n:
        raise TruncatedPayloadError(f"payload needs {n} bytes, {len(buf) - offset} available")
    data = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=offset)
    return data.reshape((rows, cols), order="F").astype(np.float32), offset + n


def write_mel(mel: MelSpectrogram, path) -> None:
    """Write ``MEL1`` | u32 F | u32 L | F*L float32, frame-major, little-endian."""
    Path(path).write_bytes(_pack(MEL_MAGIC, mel.data))


def read_mel(path, frame_rate: Optional[float] = None) -> MelSpectrogram:
    buf = Path(path).read_bytes()
    if len(buf) >= 4 and buf[:4] != MEL_MAGIC:
        raise BadMagicError(f"{path}: expected magic {MEL_MAGIC!r}, got {buf[:4]!r}")
    data, end = _unpack(buf, 0, MEL_MAGIC)
    if end != len(buf):
        raise DimensionMismatchError(f"{path}: {len(buf) - end} bytes beyond the declared {data.shape} payload")
    if data.shape[0] != N_MELS:
        raise DimensionMismatchError(f"{path}: expected {N_MELS} bands, header declares {data.shape[0]}")
    if data.shape[1] < 1:
        raise DimensionMismatchError(f"{path}: zero frames")
    return MelSpectrogram(data, frame_rate)


def write_tensors(tensors: Sequence[np.ndarray], path, magic: bytes = PARAM_MAGIC) -> None:
    """Write a sequence of 2-D tensors as back-to-back tagged records."""
    out = bytearray()
    for t in tensors:
        t = np.asarray(t)
        out += _pack(magic, t.reshape(t.shape[0], -1) if t.ndim else t.reshape(1, 1))
    Path(path).write_bytes(bytes(out))


def read_tensors(path, magic: bytes = PARAM_MAGIC) -> list:
    buf = Path(path).read_bytes()
    out, offset = [], 0
    while offset < len(buf):
        data, offset = _unpack(buf, offset, magic)
        out.append(data)
    return out


def save_score_net(net, path) -> None:
    """Store ToyScoreNet parameters; vectors are saved as column matrices."""
    from .score import PARAM_NAMES

    write_tensors([np.atleast_1d(net.params[k]).reshape(net.params[k].shape[0], -1) for k in PARAM_NAMES], path)


def load_score_net(path):
    from .score import PARAM_NAMES, ToyScoreNet

    tensors = read_tensors(path)
    if len(tensors) != len(PARAM_NAMES):
        raise DimensionMismatchError(f"expected {len(PARAM_NAMES)} parameter tensors, found {len(tensors)}")
    params = dict(zip(PARAM_NAMES, tensors))
    params["b1"] = params["b1"].ravel()
    params["b2"] = params["b2"].ravel()
    return ToyScoreNet.from_params({k: v.astype(np.float64) for k, v in params.items()})


_manifest_lock = threading.Lock()


def vocoder_handoff(
    mel: MelSpectrogram,
    out_dir,
    manifest,
    *,
    speaker: str,
    text: str,
    utterance_id: Optional[str] = None,
) -> HandoffRecord:
    """Write ``mel`` under ``out_dir`` and append a job line for an external vocoder.

    Without an explicit ``utterance_id`` one is derived from the speaker and
    the number of jobs already in the manifest.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Path(manifest)
    with _manifest_lock:
        if utterance_id is None:
            existing = read_vocoder_manifest(manifest) if manifest.exists() else []
            taken = {r.id for r in existing}
            n = len(existing)
            utterance_id = f"{speaker}-{n:05d}"
            while utterance_id in taken:
                n += 1
                utterance_id = f"{speaker}-{n:05d}"
        mel_path = out_dir / f"{utterance_id}.mel"
        record = HandoffRecord(
            id=utterance_id,
            speaker=speaker,
            text=text,
            mel_path=str(mel_path),
            wav_path=str(out_dir / f"{utterance_id}.wav"),
        )
        write_mel(mel, mel_path)
        append_vocoder_manifest(record, manifest)
    return record
