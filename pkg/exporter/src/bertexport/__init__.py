"""Convert pretrained BERT base-uncased checkpoints to the neutral tensor format."""

__version__ = "0.1.0"

from .convert import ExportError, export, verify

__all__ = ["ExportError", "export", "verify", "__version__"]
