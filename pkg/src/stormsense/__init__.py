"""Typhoon intensity classification from storm observations and social-media text.

The package pairs a small reverse-mode automatic differentiation core with the
layers, feature extraction, and training loop needed to classify typhoon
intensity categories from best-track observations combined with tweet-derived
sentiment statistics.
"""

from stormsense.autodiff import ShapeError, Tape, Tensor, gradient_check, no_grad

__all__ = [
    "ShapeError",
    "Tape",
    "Tensor",
    "gradient_check",
    "no_grad",
]

__version__ = "0.1.0"
