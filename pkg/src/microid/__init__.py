"""Person identification from micro-movement dynamics.

Apex-centered clip preprocessing, a dual-pathway (slow/fast) spatiotemporal
CNN, ensemble voting, rank-1 identification metrics, Grad-CAM saliency
verification, and a synthetic motion-signature dataset for end-to-end
validation without license-gated corpora.
"""

__version__ = "0.1.0"

from . import data, ensemble, evaluation, gradcam, model, packfile, synth, training

__all__ = [
    "data",
    "ensemble",
    "evaluation",
    "gradcam",
    "model",
    "packfile",
    "synth",
    "training",
    "__version__",
]
