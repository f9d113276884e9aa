"""Waveform I/O, chunking, and synthetic corpus generation.

WAV support covers RIFF PCM 16-bit mono only, through the stdlib wave
module. Synthetic classes are harmonic sources: a per-class fundamental
(jittered a few percent per utterance) whose harmonic amplitudes are shaped
by class-specific resonance bumps, over a low white-noise floor. That puts
the class identity exactly where a band-pass front-end can find it: in the
pitch and resonance peaks of the spectrum.
"""

import json
import warnings
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError, InvalidSpecError, ShapeError
from .filters import bandpass_impulse_response, hamming_window, windowed_filter

CHUNK_SECONDS = 0.2
CHUNK_OVERLAP_SECONDS = 0.01
NOISE_FILTER_LENGTH = 501

# harmonic amplitude law: (floor + resonance envelope at k*f0) / k^2,
# a -12 dB/octave source so the fundamental stays the strongest line
# in the pitch band even when a resonance sits on a low harmonic
HARMONIC_DECAY = 2.0
ENVELOPE_FLOOR = 0.15

TRAIN = "train"
TEST = "test"
SPLITS = (TRAIN, TEST)
_SPLIT_CODE = {TRAIN: 0, TEST: 1}


def chunk_samples(fs: float) -> int:
    return int(round(CHUNK_SECONDS * fs))


def default_hop(fs: float) -> int:
    """Consecutive chunks share 10 ms of samples by default."""
    return chunk_samples(fs) - int(round(CHUNK_OVERLAP_SECONDS * fs))


@dataclass
class Waveform:
    samples: np.ndarray
    fs: float
    label: int | None = None
    utterance_id: str | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise ShapeError(f"waveform must be a non-empty 1-D vector, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("waveform contains non-finite samples")
        if not self.fs > 0:
            raise InvalidSpecError(f"sample rate must be positive, got {self.fs}")
        self.samples = s

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.fs


@dataclass
class ChunkStream:
    """Fixed-length windows cut from one or more labelled utterances."""

    chunks: np.ndarray           # (n, chunk_len)
    labels: np.ndarray           # (n,) int64
    utterance_ids: list
    fs: float

    def __post_init__(self):
        self.chunks = np.asarray(self.chunks, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.chunks.ndim != 2:
            raise ShapeError(f"chunks must be (n, len), got {self.chunks.shape}")
        n = self.chunks.shape[0]
        if self.labels.shape != (n,) or len(self.utterance_ids) != n:
            raise ShapeError("chunks, labels, and utterance ids must have equal counts")

    @property
    def n_chunks(self) -> int:
        return self.chunks.shape[0]

    @staticmethod
    def empty(chunk_len: int, fs: float) -> "ChunkStream":
        return ChunkStream(np.empty((0, chunk_len)), np.empty(0, dtype=np.int64), [], fs)


def concat_streams(streams) -> "ChunkStream":
    streams = list(streams)
    if not streams:
        raise InvalidInputError("no chunk streams to concatenate")
    fs = streams[0].fs
    width = streams[0].chunks.shape[1]
    for s in streams:
        if s.fs != fs or s.chunks.shape[1] != width:
            raise ShapeError("chunk streams disagree on sample rate or chunk length")
    ids = []
    for s in streams:
        ids.extend(s.utterance_ids)
    return ChunkStream(
        np.concatenate([s.chunks for s in streams], axis=0),
        np.concatenate([s.labels for s in streams]),
        ids,
        fs,
    )


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

def read_wav(path) -> Waveform:
    """Parse a RIFF PCM 16-bit mono file; samples are scaled by 1/32768."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"no such file: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            fs = wf.getframerate()
            n = wf.getnframes()
            raw = wf.readframes(n)
    except (wave.Error, EOFError, OSError) as exc:
        raise FormatError(f"cannot parse {path} as RIFF/WAVE PCM: {exc}") from exc
    if channels != 1:
        raise FormatError(f"{path}: expected mono audio, found {channels} channels")
    if width != 2:
        raise FormatError(f"{path}: expected 16-bit PCM, found {8 * width}-bit samples")
    if len(raw) < 2 * n:
        raise FormatError(f"{path}: file truncated ({len(raw)} bytes for {n} frames)")
    ints = np.frombuffer(raw, dtype="<i2")
    if ints.size == 0:
        raise FormatError(f"{path}: no audio frames")
    return Waveform(ints.astype(np.float64) / 32768.0, float(fs))


def write_wav(path, w: Waveform) -> None:
    ints = np.clip(np.rint(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(round(w.fs)))
        wf.writeframes(ints.tobytes())


# ---------------------------------------------------------------------------
# framing
# ---------------------------------------------------------------------------

def frame_signal(w: Waveform, chunk_len: int | None = None,
                 hop: int | None = None) -> ChunkStream:
    """Cut an utterance into fixed windows starting at 0, hop, 2*hop, ...

    The final partial window is dropped. An utterance shorter than one
    chunk yields an empty stream with a warning rather than an error.
    """
    if chunk_len is None:
        chunk_len = chunk_samples(w.fs)
    if hop is None:
        hop = default_hop(w.fs)
    if chunk_len < 1 or hop < 1:
        raise InvalidSpecError(f"chunk length {chunk_len} and hop {hop} must be >= 1")
    n = w.samples.size
    if n < chunk_len:
        warnings.warn(
            f"utterance {w.utterance_id or '<anonymous>'} has {n} samples, "
            f"shorter than one {chunk_len}-sample chunk; skipping",
            RuntimeWarning,
            stacklevel=2,
        )
        return ChunkStream.empty(chunk_len, w.fs)
    windows = np.lib.stride_tricks.sliding_window_view(w.samples, chunk_len)[::hop]
    chunks = np.ascontiguousarray(windows)
    count = chunks.shape[0]
    label = w.label if w.label is not None else -1
    return ChunkStream(
        chunks,
        np.full(count, label, dtype=np.int64),
        [w.utterance_id] * count,
        w.fs,
    )


def frame_waveforms(waveforms, chunk_len: int | None = None,
                    hop: int | None = None) -> ChunkStream:
    streams = [frame_signal(w, chunk_len, hop) for w in waveforms]
    streams = [s for s in streams if s.n_chunks > 0]
    if not streams:
        raise InvalidInputError("no utterance produced any chunk")
    return concat_streams(streams)


# ---------------------------------------------------------------------------
# band-limited corruption
# ---------------------------------------------------------------------------

def corrupt_band(w: Waveform, lo_hz: float, hi_hz: float, snr_db: float,
                 rng=None, seed: int = 0, return_noise: bool = False):
    """Add band-limited white noise at an exact signal-to-noise ratio.

    The noise is white Gaussian filtered by a 501-tap windowed-sinc
    band-pass over [lo_hz, hi_hz], then scaled so that
    10*log10(signal power / noise power) equals snr_db. The addition is
    purely elementwise; the original signal component is not filtered.
    """
    if not 0.0 <= lo_hz < hi_hz <= w.fs / 2:
        raise InvalidSpecError(
            f"noise band ({lo_hz}, {hi_hz}) Hz must satisfy 0 <= lo < hi <= fs/2 "
            f"with fs = {w.fs}"
        )
    p_signal = float(np.mean(w.samples ** 2))
    if p_signal <= 0.0:
        raise InvalidInputError("cannot set an SNR against an all-zero signal")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
    cutoffs = np.array([lo_hz / w.fs, hi_hz / w.fs])
    taps = windowed_filter(
        bandpass_impulse_response(cutoffs, NOISE_FILTER_LENGTH),
        hamming_window(NOISE_FILTER_LENGTH),
    )
    white = rng.standard_normal(w.samples.size)
    shaped = np.convolve(white, taps, mode="same")
    p_noise = float(np.mean(shaped ** 2))
    if p_noise <= 0.0:
        raise InvalidSpecError(f"noise band ({lo_hz}, {hi_hz}) Hz produced silent noise")
    noise = shaped * np.sqrt(p_signal / p_noise * 10.0 ** (-snr_db / 10.0))
    out = Waveform(w.samples + noise, w.fs, w.label, w.utterance_id)
    if return_noise:
        return out, noise
    return out


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

def default_fundamentals(n_classes: int):
    """Evenly spaced pitches across roughly the human speaking range."""
    if n_classes == 1:
        return [120.0]
    return list(np.linspace(120.0, 250.0, n_classes))


def default_resonances(n_classes: int):
    return [[420.0 + 55.0 * i, 950.0 + 90.0 * i] for i in range(n_classes)]


def default_resonance_widths(n_classes: int):
    return [[110.0, 130.0] for _ in range(n_classes)]


@dataclass
class CorpusSpec:
    """Everything needed to synthesize one labelled corpus deterministically.

    Class ids run from class_offset to class_offset + n_classes - 1, so two
    corpora with different offsets have disjoint label sets (used to build
    verification speaker pools disjoint from training classes).
    """

    n_classes: int
    sample_rate: float = 16000.0
    n_train_utterances: int = 4
    n_test_utterances: int = 6
    train_total_range: tuple = (12.0, 15.0)
    test_duration_range: tuple = (2.0, 6.0)
    fundamentals_hz: list | None = None
    resonances_hz: list | None = None
    resonance_widths_hz: list | None = None
    jitter: float = 0.03
    noise_floor_db: float = -30.0
    noise_band: tuple | None = None    # (lo_hz, hi_hz, snr_db)
    peak: float = 0.95
    class_offset: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1:
            raise InvalidSpecError(f"n_classes must be >= 1, got {self.n_classes}")
        if self.sample_rate <= 0:
            raise InvalidSpecError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.n_train_utterances < 1 or self.n_test_utterances < 0:
            raise InvalidSpecError("need >= 1 train utterance and >= 0 test utterances per class")
        if self.fundamentals_hz is None:
            self.fundamentals_hz = default_fundamentals(self.n_classes)
        if self.resonances_hz is None:
            self.resonances_hz = default_resonances(self.n_classes)
        if self.resonance_widths_hz is None:
            self.resonance_widths_hz = default_resonance_widths(self.n_classes)
        self.train_total_range = tuple(float(v) for v in self.train_total_range)
        self.test_duration_range = tuple(float(v) for v in self.test_duration_range)
        self.fundamentals_hz = [float(f) for f in self.fundamentals_hz]
        self.resonances_hz = [[float(r) for r in rs] for rs in self.resonances_hz]
        self.resonance_widths_hz = [[float(v) for v in vs] for vs in self.resonance_widths_hz]
        self._validate()

    def _validate(self):
        nyq = self.sample_rate / 2
        if len(self.fundamentals_hz) != self.n_classes:
            raise InvalidSpecError(
                f"fundamentals_hz lists {len(self.fundamentals_hz)} entries "
                f"for {self.n_classes} classes"
            )
        if len(self.resonances_hz) != self.n_classes:
            raise InvalidSpecError(
                f"resonances_hz lists {len(self.resonances_hz)} entries "
                f"for {self.n_classes} classes"
            )
        if len(self.resonance_widths_hz) != self.n_classes:
            raise InvalidSpecError(
                f"resonance_widths_hz lists {len(self.resonance_widths_hz)} entries "
                f"for {self.n_classes} classes"
            )
        for f0 in self.fundamentals_hz:
            if not 0 < f0 < nyq:
                raise InvalidSpecError(f"fundamentals_hz value {f0} outside (0, fs/2)")
        for i, (rs, ws) in enumerate(zip(self.resonances_hz, self.resonance_widths_hz)):
            if len(rs) != len(ws):
                raise InvalidSpecError(
                    f"class {i}: {len(rs)} resonances but {len(ws)} widths"
                )
            for r in rs:
                if not 0 < r < nyq:
                    raise InvalidSpecError(
                        f"resonances_hz value {r} for class {i} outside (0, fs/2)"
                    )
            for wdt in ws:
                if wdt <= 0:
                    raise InvalidSpecError(f"resonance width {wdt} must be positive")
        if not 0 < self.jitter < 1:
            raise InvalidSpecError(f"jitter must be in (0, 1), got {self.jitter}")
        if not 0 < self.peak <= 1:
            raise InvalidSpecError(f"peak must be in (0, 1], got {self.peak}")
        lo_t, hi_t = self.train_total_range
        lo_u, hi_u = self.test_duration_range
        if not 0 < lo_t <= hi_t or not 0 < lo_u <= hi_u:
            raise InvalidSpecError("duration ranges must be positive and ordered")
        min_len = CHUNK_SECONDS
        if lo_t / self.n_train_utterances <= min_len:
            raise InvalidSpecError(
                f"train utterances of {lo_t / self.n_train_utterances:.3f} s do not "
                f"exceed one {min_len} s chunk; lower n_train_utterances"
            )
        if self.n_test_utterances > 0 and lo_u <= min_len:
            raise InvalidSpecError(
                f"test utterances of {lo_u} s do not exceed one {min_len} s chunk"
            )
        if self.noise_band is not None:
            band = tuple(float(v) for v in self.noise_band)
            if len(band) != 3:
                raise InvalidSpecError("noise_band must be (lo_hz, hi_hz, snr_db)")
            lo, hi, _ = band
            if not 0 <= lo < hi <= nyq:
                raise InvalidSpecError(
                    f"noise_band ({lo}, {hi}) Hz must satisfy 0 <= lo < hi <= fs/2"
                )
            self.noise_band = band

    @property
    def class_ids(self):
        return list(range(self.class_offset, self.class_offset + self.n_classes))

    def to_dict(self):
        d = {
            "n_classes": self.n_classes,
            "sample_rate": self.sample_rate,
            "n_train_utterances": self.n_train_utterances,
            "n_test_utterances": self.n_test_utterances,
            "train_total_range": list(self.train_total_range),
            "test_duration_range": list(self.test_duration_range),
            "fundamentals_hz": self.fundamentals_hz,
            "resonances_hz": self.resonances_hz,
            "resonance_widths_hz": self.resonance_widths_hz,
            "jitter": self.jitter,
            "noise_floor_db": self.noise_floor_db,
            "noise_band": list(self.noise_band) if self.noise_band else None,
            "peak": self.peak,
            "class_offset": self.class_offset,
            "seed": self.seed,
        }
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("noise_band") is not None:
            d["noise_band"] = tuple(d["noise_band"])
        if "train_total_range" in d:
            d["train_total_range"] = tuple(d["train_total_range"])
        if "test_duration_range" in d:
            d["test_duration_range"] = tuple(d["test_duration_range"])
        return cls(**d)


def _utterance_rng(spec, class_id, split, index):
    return np.random.default_rng(
        np.random.SeedSequence([spec.seed, class_id, _SPLIT_CODE[split], index])
    )


def _class_rng(spec, class_id, split):
    return np.random.default_rng(
        np.random.SeedSequence([spec.seed, class_id, _SPLIT_CODE[split]])
    )


def _synth_utterance(spec, class_index, class_id, split, index, duration_s):
    rng = _utterance_rng(spec, class_id, split, index)
    fs = spec.sample_rate
    n = int(round(duration_s * fs))
    f0 = spec.fundamentals_hz[class_index] * (1.0 + rng.uniform(-spec.jitter, spec.jitter))
    centers = np.asarray(spec.resonances_hz[class_index])
    widths = np.asarray(spec.resonance_widths_hz[class_index])
    n_harmonics = max(1, int(np.floor(0.95 * (fs / 2) / f0)))
    k = np.arange(1, n_harmonics + 1)
    freqs = k * f0
    envelope = ENVELOPE_FLOOR + np.exp(
        -((freqs[:, None] - centers[None, :]) ** 2) / (2.0 * widths[None, :] ** 2)
    ).sum(axis=1)
    amps = envelope / k.astype(np.float64) ** HARMONIC_DECAY
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_harmonics)
    t = np.arange(n) / fs
    x = np.zeros(n)
    for kk in range(n_harmonics):
        x += amps[kk] * np.sin(2.0 * np.pi * freqs[kk] * t + phases[kk])
    rms = np.sqrt(np.mean(x ** 2))
    x += rng.standard_normal(n) * rms * 10.0 ** (spec.noise_floor_db / 20.0)
    x *= spec.peak / np.max(np.abs(x))
    utt_id = f"c{class_id:03d}_{split}_{index:03d}"
    w = Waveform(x, fs, label=class_id, utterance_id=utt_id)
    if spec.noise_band is not None:
        lo, hi, snr = spec.noise_band
        w = corrupt_band(w, lo, hi, snr, rng=rng)
        top = np.max(np.abs(w.samples))
        if top > spec.peak:
            # rescaling both components together preserves the SNR
            w = Waveform(w.samples * (spec.peak / top), fs, class_id, utt_id)
    return w


@dataclass
class Corpus:
    spec: CorpusSpec
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def split(self, name):
        if name not in SPLITS:
            raise InvalidSpecError(f"unknown split {name!r}")
        return self.train if name == TRAIN else self.test

    @property
    def class_ids(self):
        return self.spec.class_ids


def synth_class_corpus(spec: CorpusSpec) -> Corpus:
    """Generate train/test utterance sets; a pure function of the spec."""
    train, test = [], []
    for ci, class_id in enumerate(spec.class_ids):
        total = _class_rng(spec, class_id, TRAIN).uniform(*spec.train_total_range)
        per_utt = total / spec.n_train_utterances
        for ui in range(spec.n_train_utterances):
            train.append(_synth_utterance(spec, ci, class_id, TRAIN, ui, per_utt))
        for ui in range(spec.n_test_utterances):
            dur = _utterance_rng(spec, class_id, TEST, ui).uniform(*spec.test_duration_range)
            test.append(_synth_utterance(spec, ci, class_id, TEST, ui, dur))
    return Corpus(spec, train, test)


# ---------------------------------------------------------------------------
# on-disk corpora: WAVs plus a JSONL manifest
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.jsonl"
SPEC_NAME = "corpus_spec.json"


def save_corpus(corpus: Corpus, out_dir) -> Path:
    """Write WAV files, a JSON-lines manifest, and the generating spec."""
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for split in SPLITS:
        for w in corpus.split(split):
            rel = f"wav/{w.utterance_id}.wav"
            write_wav(out_dir / rel, w)
            lines.append(json.dumps({
                "utterance_id": w.utterance_id,
                "path": rel,
                "class": int(w.label),
                "split": split,
                "duration_s": w.duration_s,
            }))
    manifest = out_dir / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n")
    (out_dir / SPEC_NAME).write_text(json.dumps(corpus.spec.to_dict(), indent=2) + "\n")
    return manifest


def load_manifest(manifest_path):
    """Parse manifest JSONL into a list of entry dicts (no audio loaded)."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FormatError(f"no such manifest: {manifest_path}")
    entries = []
    for i, line in enumerate(manifest_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{manifest_path}:{i}: bad JSON line: {exc}") from exc
        missing = {"utterance_id", "path", "class", "split"} - entry.keys()
        if missing:
            raise FormatError(f"{manifest_path}:{i}: missing fields {sorted(missing)}")
        if entry["split"] not in SPLITS:
            raise FormatError(f"{manifest_path}:{i}: unknown split {entry['split']!r}")
        entries.append(entry)
    if not entries:
        raise FormatError(f"{manifest_path}: manifest is empty")
    return entries


def load_corpus_waveforms(manifest_path, split=None):
    """Load the audio behind a manifest, optionally filtered to one split."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    out = []
    for entry in load_manifest(manifest_path):
        if split is not None and entry["split"] != split:
            continue
        w = read_wav(base / entry["path"])
        out.append(Waveform(w.samples, w.fs, int(entry["class"]), entry["utterance_id"]))
    if not out:
        raise InvalidInputError(
            f"manifest {manifest_path} has no utterances"
            + (f" in split {split!r}" if split else "")
        )
    return out


def manifest_classes(manifest_path):
    return sorted({int(e["class"]) for e in load_manifest(manifest_path)})
