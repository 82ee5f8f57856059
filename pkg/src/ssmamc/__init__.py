"""Selective state-space modulation classifier.

Synthetic I/Q signal generation, a small selective state-space network with
a learnable denoising front end, training/evaluation loops, and runtime
benchmarks — all on a numpy autodiff substrate.
"""

__version__ = "0.1.0"
