"""firedet: frequency-guided reconstruction-error detection of generated
images, with a desk-scale surrogate autoencoder."""

__version__ = "0.1.0"
