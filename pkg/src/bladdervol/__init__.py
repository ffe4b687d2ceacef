"""Bladder volume estimation from bio-impedance with artefact suppression.

Subpackages follow the processing chain: ``preprocess`` (windows, LOWESS,
calibration), ``features``, ``classify`` (SVM and MLP artefact labels),
``estimate`` (gated Kalman filter and volume), ``simulate`` (synthetic
sessions with ground truth) and ``evaluate`` (endpoint and agreement
analysis).
"""

__version__ = "0.1.0"

from .core import (
    ArtefactLabel,
    BladderVolError,
    MeasurementContext,
    SessionMeta,
    SessionRecording,
    VolumeTrace,
    read_session,
    write_session,
)
from .estimate import EstimatorConfig, SensitivityModel, analyse_session, run_session

__all__ = [
    "ArtefactLabel", "BladderVolError", "EstimatorConfig", "MeasurementContext", "SensitivityModel",
    "SessionMeta", "SessionRecording", "VolumeTrace", "analyse_session", "read_session", "run_session",
    "write_session",
]
