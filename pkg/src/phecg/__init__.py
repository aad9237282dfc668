"""Pulmonary-hypertension screening from 12-lead ECGs.

WFDB ingest, RVH/RAE rule criteria, and a small dense network trained from
scratch with NumPy.
"""
from .dnn import MlpModel, TrainConfig, TrainHistory, forward, init_model, predict, train
from .features import CriteriaResult, FiducialSet, evaluate_criteria, frontal_axis
from .wfdb_ingest import LEAD_NAMES, EcgRecord, decode_signal, parse_header, read_record

__all__ = [
    "LEAD_NAMES", "EcgRecord", "decode_signal", "parse_header", "read_record",
    "CriteriaResult", "FiducialSet", "evaluate_criteria", "frontal_axis",
    "MlpModel", "TrainConfig", "TrainHistory", "forward", "init_model", "predict", "train",
]
__version__ = "0.1.0"
