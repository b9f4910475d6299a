"""Self-supervised joint deblurring and denoising from long/short exposure pairs."""

__version__ = "0.1.0"
