"""Noise kernel backend selection.

Prefers the compiled Cython kernels when the extension built; otherwise the
numpy fallback, which implements the identical generator. ``BACKEND`` records
which one is active. Stream-key derivation always uses the exact python-int
reference so keys match across backends.
"""

from softbits._kernels import fallback
from softbits._kernels.fallback import mix64, stream_key

try:
    from softbits._kernels import _core as _impl

    BACKEND = "compiled"
except ImportError:
    _impl = fallback
    BACKEND = "fallback"

bulk_uniform = _impl.bulk_uniform
bulk_gumbel = _impl.bulk_gumbel
bulk_logistic = _impl.bulk_logistic

__all__ = [
    "BACKEND",
    "bulk_uniform",
    "bulk_gumbel",
    "bulk_logistic",
    "mix64",
    "stream_key",
    "fallback",
]
