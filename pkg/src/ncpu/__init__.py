"""Positive-unlabeled learning with phantom label disambiguation and a
noisy-pair-robust non-contrastive representation loss.

The sklearn-style entry points are :class:`NcPUClassifier` and
:class:`PUBaselineClassifier`; :func:`ncpu.experiment.run` drives
config-based runs with file output.
"""
from .estimator import NcPUClassifier, PUBaselineClassifier, check_pu_labels

__version__ = "0.1.0"

__all__ = ["NcPUClassifier", "PUBaselineClassifier", "check_pu_labels", "__version__"]
