"""divmix: measure the visual diversity of labeled image corpora and curate
class-balanced training subsets that mix similar and diverse images."""

__version__ = "0.1.0"

from .errors import DivmixError, RunError, ValidationError

__all__ = ["DivmixError", "RunError", "ValidationError", "__version__"]
