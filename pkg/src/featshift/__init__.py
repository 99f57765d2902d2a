"""Adult-to-child acoustic feature conversion: front end, converters, auto-encoder and diagnostics."""
from .errors import FeatshiftError
from .melfeat import GmvnStats, Spectrogram, extract_logmel, gmvn_apply, gmvn_fit, gmvn_invert

__version__ = "0.1.0"

__all__ = [
    "FeatshiftError",
    "GmvnStats",
    "Spectrogram",
    "extract_logmel",
    "gmvn_apply",
    "gmvn_fit",
    "gmvn_invert",
    "__version__",
]
