"""Gloss-level sign language representation learning and translation.

Masked-autoencoder pretraining over skeletal keypoint sequences with
adaptive per-part loss weighting, plus the downstream sign-to-text,
text-to-sign, and recognition heads, evaluation metrics, a synthetic
corpus generator, and a command-line interface.
"""

__version__ = "0.1.0"
