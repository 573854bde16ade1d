"""Desk-scale CTC scene-text recognition toolkit.

Modules: ``charset`` (limited character set), ``datastats`` (corpus
analysis), ``imaging`` (PGM/PPM codec, resizing), ``augment`` (seeded
augmentation chain), ``ctc`` (loss, gradient, decoders), ``network`` (numpy
CRNN), ``trainer`` (Adam, warm restarts, over-fit ladder) and
``evalmetrics`` (sequence accuracy, TTA).
"""

__version__ = "0.1.0"
