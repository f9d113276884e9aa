"""Band-pass FIR filter construction, windowing, initialization, and spectral analysis.

All cutoff frequencies are normalized by the sample rate (cycles per sample),
so the target band is [0, 0.5]; Hz appears only at initialization and export
boundaries. A band-pass impulse response is the difference of two low-pass
sinc kernels,

    g[n] = 2 f2 sinc(2 pi f2 n) - 2 f1 sinc(2 pi f1 n),    sinc(x) = sin(x)/x,

evaluated at integer offsets n from the center tap, then tapered by a window.
Filter lengths are restricted to odd values so the center index is an integer
and the taps can be built from one half plus a mirror, which makes the
symmetry g[c+k] == g[c-k] hold bitwise.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, InvalidSpecError

HAMMING = "hamming"
RECTANGULAR = "rectangular"
WINDOW_KINDS = (HAMMING, RECTANGULAR)

MEL_SCALE = 2595.0
MEL_BREAK_HZ = 700.0

# default mel-initialization band edges: skip DC, keep a guard below Nyquist
MEL_INIT_LOW_HZ = 30.0
MEL_INIT_HIGH_MARGIN_HZ = 100.0


@dataclass(frozen=True)
class FilterSpec:
    """Static description of one filterbank: tap count, window kind, sample rate."""

    length: int = 251
    window: str = HAMMING
    sample_rate: float = 16000.0

    def __post_init__(self):
        if self.length % 2 == 0 or self.length < 3:
            raise InvalidSpecError(f"filter length must be odd and >= 3, got {self.length}")
        if self.window not in WINDOW_KINDS:
            raise InvalidSpecError(f"unknown window {self.window!r}, expected one of {WINDOW_KINDS}")
        if self.sample_rate <= 0:
            raise InvalidSpecError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def center(self) -> int:
        return (self.length - 1) // 2


@dataclass
class FilterBank:
    """Materialized bank: taps (F, L) plus the constrained cutoffs that produced them."""

    taps: np.ndarray
    cutoffs: np.ndarray

    @property
    def n_filters(self) -> int:
        return self.taps.shape[0]

    @property
    def length(self) -> int:
        return self.taps.shape[1]


def constrain_cutoffs(raw):
    """Map unconstrained cutoff pairs (f1, f2) to (|f1|, |f1| + |f2 - |f1||).

    The image always satisfies f1_abs >= 0 and f2_abs >= f1_abs, whatever the
    sign or ordering of the inputs, and the map is idempotent. No upper clamp
    is applied at 0.5.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != 2:
        raise InvalidParameterError(f"cutoffs must have a trailing axis of 2, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise InvalidParameterError("cutoffs must be finite")
    f1_abs = np.abs(raw[..., 0])
    f2_abs = f1_abs + np.abs(raw[..., 1] - f1_abs)
    return np.stack([f1_abs, f2_abs], axis=-1)


def _check_odd_length(length):
    length = int(length)
    if length % 2 == 0 or length < 1:
        raise InvalidSpecError(f"filter length must be odd and positive, got {length}")
    return length


def bandpass_impulse_response(cutoffs, length):
    """Truncated ideal band-pass taps for constrained cutoffs (f1_abs, f2_abs).

    Returns a vector of `length` taps with the center at (length-1)/2. Built
    from the n > 0 half via (sin(2 pi f2 n) - sin(2 pi f1 n)) / (pi n) and
    mirrored, with center tap 2 (f2 - f1); the mirror keeps the symmetry
    bitwise. f1 == f2 gives the zero filter, (0, 0.5) the unit impulse.
    """
    length = _check_odd_length(length)
    cutoffs = np.asarray(cutoffs, dtype=np.float64)
    if cutoffs.shape != (2,):
        raise InvalidParameterError(f"expected a single (f1, f2) pair, got shape {cutoffs.shape}")
    if not np.all(np.isfinite(cutoffs)):
        raise InvalidParameterError("cutoffs must be finite")
    f1, f2 = cutoffs
    if f1 < 0 or f2 < f1:
        raise InvalidParameterError(f"cutoffs must satisfy 0 <= f1 <= f2, got ({f1}, {f2})")
    return _bandpass_bank(cutoffs[None, :], length)[0]


def _bandpass_bank(cutoffs, length):
    """Vectorized half-and-mirror tap construction for an (F, 2) cutoff array."""
    c = (length - 1) // 2
    f1 = cutoffs[:, 0:1]
    f2 = cutoffs[:, 1:2]
    taps = np.empty((cutoffs.shape[0], length), dtype=np.float64)
    taps[:, c] = 2.0 * (f2[:, 0] - f1[:, 0])
    if c > 0:
        n = np.arange(1, c + 1, dtype=np.float64)
        half = (np.sin(2.0 * np.pi * f2 * n) - np.sin(2.0 * np.pi * f1 * n)) / (np.pi * n)
        taps[:, c + 1:] = half
        taps[:, :c] = half[:, ::-1]
    return taps


def hamming_window(length):
    """Symmetric Hamming taper w[n] = 0.54 - 0.46 cos(2 pi n / (L-1)), mirrored bitwise."""
    length = _check_odd_length(length)
    if length < 3:
        raise InvalidSpecError(f"window length must be >= 3, got {length}")
    c = (length - 1) // 2
    n = np.arange(c + 1, dtype=np.float64)
    half = 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (length - 1))
    return np.concatenate([half, half[:-1][::-1]])


def rectangular_window(length):
    return np.ones(_check_odd_length(length), dtype=np.float64)


def make_window(kind, length):
    if kind == HAMMING:
        return hamming_window(length)
    if kind == RECTANGULAR:
        return rectangular_window(length)
    raise InvalidSpecError(f"unknown window {kind!r}, expected one of {WINDOW_KINDS}")


def windowed_filter(taps, window):
    """Elementwise taper; symmetric inputs give a bitwise-symmetric product."""
    taps = np.asarray(taps, dtype=np.float64)
    window = np.asarray(window, dtype=np.float64)
    if taps.shape != window.shape:
        raise InvalidSpecError(f"length mismatch: taps {taps.shape} vs window {window.shape}")
    return taps * window


def hz_to_mel(hz):
    return MEL_SCALE * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / MEL_BREAK_HZ)


def mel_to_hz(mel):
    return MEL_BREAK_HZ * (10.0 ** (np.asarray(mel, dtype=np.float64) / MEL_SCALE) - 1.0)


def mel_init_cutoffs(n_filters, sample_rate,
                     f_low_hz=MEL_INIT_LOW_HZ, high_margin_hz=MEL_INIT_HIGH_MARGIN_HZ):
    """Cutoff pairs from F+1 band edges equally spaced on the mel scale.

    Edges span [f_low_hz, sample_rate/2 - high_margin_hz]; filter i gets
    (edge[i], edge[i+1]) normalized by the sample rate. The result already
    satisfies the cutoff constraints, so constrain_cutoffs is the identity
    on it.
    """
    n_filters = int(n_filters)
    if n_filters < 1:
        raise InvalidSpecError(f"need at least one filter, got {n_filters}")
    if sample_rate <= 0:
        raise InvalidSpecError(f"sample rate must be positive, got {sample_rate}")
    f_high_hz = sample_rate / 2.0 - high_margin_hz
    if f_high_hz <= f_low_hz:
        raise InvalidSpecError(
            f"sample rate {sample_rate} Hz too small for band edges in "
            f"[{f_low_hz}, fs/2 - {high_margin_hz}] Hz"
        )
    edges_mel = np.linspace(hz_to_mel(f_low_hz), hz_to_mel(f_high_hz), n_filters + 1)
    edges_hz = mel_to_hz(edges_mel)
    cutoffs = np.stack([edges_hz[:-1], edges_hz[1:]], axis=1) / sample_rate
    return cutoffs


def frequency_response(taps, n_points):
    """Magnitude of the DTFT sampled at n_points frequencies uniform in [0, 0.5].

    Direct evaluation, O(L * n_points); no FFT involved, so the result is an
    easily audited sum.
    """
    taps = np.asarray(taps, dtype=np.float64)
    if taps.ndim != 1:
        raise InvalidSpecError(f"expected a 1-d tap vector, got shape {taps.shape}")
    n_points = int(n_points)
    if n_points < taps.shape[0]:
        raise InvalidSpecError(f"n_points {n_points} must be >= filter length {taps.shape[0]}")
    freqs = response_frequencies(n_points)
    n = np.arange(taps.shape[0], dtype=np.float64)
    phases = np.exp(-2j * np.pi * freqs[:, None] * n[None, :])
    return np.abs(phases @ taps)


def response_frequencies(n_points):
    """The normalized frequency grid used by frequency_response."""
    return np.linspace(0.0, 0.5, int(n_points))


def cumulative_frequency_response(bank, n_points, normalize=False):
    """Sum of the per-filter magnitude responses; shows the bands the bank covers.

    With normalize=True the sum is scaled so its maximum is 1.0 (unless it is
    identically zero).
    """
    taps = bank.taps if isinstance(bank, FilterBank) else np.asarray(bank, dtype=np.float64)
    if taps.ndim != 2 or taps.shape[0] < 1:
        raise InvalidSpecError(f"need a non-empty (F, L) tap matrix, got shape {np.shape(taps)}")
    total = np.zeros(int(n_points), dtype=np.float64)
    for row in taps:
        total += frequency_response(row, n_points)
    if normalize:
        peak = total.max()
        if peak > 0:
            total = total / peak
    return total


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def export_bank_csv(path, taps, sample_rate, cutoffs=None):
    """One row per filter: f1_abs_hz, f2_abs_hz, then the taps.

    For banks without cutoff parameters (learned-taps filters) the two cutoff
    columns are omitted.
    """
    taps = np.asarray(taps, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        tap_names = [f"tap_{i}" for i in range(taps.shape[1])]
        if cutoffs is not None:
            writer.writerow(["f1_abs_hz", "f2_abs_hz"] + tap_names)
            for cut, row in zip(np.asarray(cutoffs), taps):
                writer.writerow([repr(float(cut[0] * sample_rate)),
                                 repr(float(cut[1] * sample_rate))]
                                + [repr(float(v)) for v in row])
        else:
            writer.writerow(tap_names)
            for row in taps:
                writer.writerow([repr(float(v)) for v in row])


def export_bank_json(path, taps, sample_rate, n_points, cutoffs=None):
    """JSON schema: {filters: [{f1_hz, f2_hz, taps[], response[]}],
    cumulative[], n_points, fs}."""
    taps = np.asarray(taps, dtype=np.float64)
    filters = []
    cumulative = np.zeros(int(n_points), dtype=np.float64)
    for i, row in enumerate(taps):
        entry = {}
        if cutoffs is not None:
            entry["f1_hz"] = float(cutoffs[i][0] * sample_rate)
            entry["f2_hz"] = float(cutoffs[i][1] * sample_rate)
        entry["taps"] = row.tolist()
        response = frequency_response(row, n_points)
        cumulative += response
        entry["response"] = response.tolist()
        filters.append(entry)
    payload = {
        "filters": filters,
        "cumulative": cumulative.tolist(),
        "n_points": int(n_points),
        "fs": float(sample_rate),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
    return payload
