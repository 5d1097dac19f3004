"""EEG-conditioned geometric shape reconstruction with a multi-task conditional GAN."""
__version__ = "0.1.0"
