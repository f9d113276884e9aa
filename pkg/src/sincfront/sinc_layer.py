"""The learnable front-end: cutoff-parametrized band-pass convolution.

Only the 2F raw cutoff pairs are learnable; the taps are re-materialized from
them on every forward pass (constrain -> sinc difference -> window). The
backward pass is the exact chain rule through those three stages:

* correlation adjoints give d(loss)/d(windowed tap) and d(loss)/d(input);
* each windowed tap depends on the constrained cutoffs through
  d g_w[n] / d f2_abs =  2 cos(2 pi f2_abs n) w[n]
  d g_w[n] / d f1_abs = -2 cos(2 pi f1_abs n) w[n]
  (n measured from the center tap);
* the constraint map contributes sign factors, with sign(0) taken as 0 at
  the non-differentiable kinks.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidParameterError, ShapeError
from .filters import FilterBank, FilterSpec, _bandpass_bank, constrain_cutoffs, make_window


@dataclass
class SincLayerParams:
    """Learnable state of the front-end: F raw cutoff pairs plus the static spec."""

    raw_cutoffs: np.ndarray
    spec: FilterSpec

    def __post_init__(self):
        self.raw_cutoffs = np.asarray(self.raw_cutoffs, dtype=np.float64)
        if self.raw_cutoffs.ndim != 2 or self.raw_cutoffs.shape[1] != 2:
            raise ShapeError(
                f"raw cutoffs must have shape (F, 2), got {self.raw_cutoffs.shape}"
            )
        if not np.all(np.isfinite(self.raw_cutoffs)):
            raise InvalidParameterError("raw cutoffs must be finite")

    @property
    def n_filters(self) -> int:
        return self.raw_cutoffs.shape[0]

    @property
    def learnable_count(self) -> int:
        # two scalars per filter, independent of the tap count
        return 2 * self.n_filters


def materialize(params: SincLayerParams) -> FilterBank:
    """Build the (F, L) windowed tap matrix from the raw cutoffs.

    Taps are computed for one half of each filter and mirrored, so the
    symmetry about the center index holds bitwise.
    """
    constrained = constrain_cutoffs(params.raw_cutoffs)
    taps = _bandpass_bank(constrained, params.spec.length)
    window = make_window(params.spec.window, params.spec.length)
    return FilterBank(taps=taps * window, cutoffs=constrained)


def forward(x, params: SincLayerParams, impl=None):
    """Valid-mode correlation of (B, 1, T) input with the materialized bank."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != 1:
        raise ShapeError(f"expected input of shape (B, 1, T), got {x.shape}")
    if x.shape[2] < params.spec.length:
        raise ShapeError(f"input length {x.shape[2]} shorter than filter length {params.spec.length}")
    bank = materialize(params)
    return kernels.corr1d_forward(x, bank.taps[:, None, :], impl=impl)


def backward(x, params: SincLayerParams, upstream, impl=None):
    """Gradients of a scalar loss w.r.t. the raw cutoffs and the input.

    upstream is d(loss)/d(output) with the forward output's shape; returns
    (grad_raw_cutoffs (F, 2), grad_input (B, 1, T)).
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    length = params.spec.length
    t_out = x.shape[2] - length + 1
    if upstream.shape != (x.shape[0], params.n_filters, t_out):
        raise ShapeError(
            f"upstream shape {upstream.shape} inconsistent with "
            f"(B={x.shape[0]}, F={params.n_filters}, T_out={t_out})"
        )
    bank = materialize(params)
    window = make_window(params.spec.window, length)

    grad_taps = kernels.corr1d_grad_weights(x, upstream, length, impl=impl)[:, 0, :]
    grad_input = kernels.corr1d_grad_input(upstream, bank.taps[:, None, :], impl=impl)

    offsets = np.arange(length, dtype=np.float64) - params.spec.center
    f1_abs = bank.cutoffs[:, 0:1]
    f2_abs = bank.cutoffs[:, 1:2]
    weighted = grad_taps * window
    grad_f1_abs = -2.0 * np.sum(weighted * np.cos(2.0 * np.pi * f1_abs * offsets), axis=1)
    grad_f2_abs = 2.0 * np.sum(weighted * np.cos(2.0 * np.pi * f2_abs * offsets), axis=1)

    s1 = np.sign(params.raw_cutoffs[:, 0])
    s2 = np.sign(params.raw_cutoffs[:, 1] - bank.cutoffs[:, 0])
    grad_raw = np.empty_like(params.raw_cutoffs)
    grad_raw[:, 0] = grad_f1_abs * s1 + grad_f2_abs * s1 * (1.0 - s2)
    grad_raw[:, 1] = grad_f2_abs * s2
    return grad_raw, grad_input


def mel_initialized(n_filters, spec: FilterSpec) -> SincLayerParams:
    """Raw cutoffs at the mel-spaced band edges for the bank's sample rate."""
    from .filters import mel_init_cutoffs

    return SincLayerParams(mel_init_cutoffs(n_filters, spec.sample_rate), spec)


def nyquist_violations(params: SincLayerParams):
    """Indices of filters whose constrained upper cutoff exceeds 0.5.

    Training never clamps the cutoffs; this is the diagnostic used to check
    that the bound stays satisfied on its own.
    """
    constrained = constrain_cutoffs(params.raw_cutoffs)
    return np.flatnonzero(constrained[:, 1] > 0.5)
