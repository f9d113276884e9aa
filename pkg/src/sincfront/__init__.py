"""Learnable band-pass filterbank front-end for raw-waveform classification.

The front-end convolution is parametrized by per-filter cutoff frequencies of
windowed-sinc band-pass kernels (2 learnable scalars per filter) instead of
free taps, trained with hand-written gradients inside a small from-scratch
network stack. The package also ships a free-taps baseline front-end, a
synthetic corpus generator, speaker-verification metrics, and a CLI.

Hot correlation/pooling kernels are numba-compiled with a pure-numpy fallback;
set SINCFRONT_NO_NUMBA=1 to force the fallback.
"""

from . import audio, cli, filters, kernels, nn, sinc_layer, training
from .errors import SincFrontError

__version__ = "0.1.0"

__all__ = [
    "audio",
    "cli",
    "filters",
    "kernels",
    "nn",
    "sinc_layer",
    "training",
    "SincFrontError",
    "__version__",
]
