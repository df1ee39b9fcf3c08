"""EEG motor-activity topogram pipeline.

Synthetic trial generation, filtering, mu-band topogram images, a
supervised CNN classifier, and a semi-supervised adversarial-autoencoder
classifier, all deterministic under explicit seeds.
"""

from . import aae, cnn, dsp, gradcheck, montage, synthgen, tensor, topomap

__version__ = "0.1.0"

__all__ = ["aae", "cnn", "dsp", "gradcheck", "montage", "synthgen",
           "tensor", "topomap", "__version__"]
