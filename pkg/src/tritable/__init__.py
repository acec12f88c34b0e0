"""Relational triple extraction via per-relation table filling with
iterative feature reasoning, on synthetic corpora."""

from .metrics import EvalReport, MatchMode, OverlapPattern, build_report, micro_prf
from .model import Model, ModelConfig
from .schema import Dataset, Entity, RelationVocab, Sentence, Triple
from .synth import SynthConfig, generate
from .tagging import Label, TagTable, decode_tables, encode_tables, is_roundtrip_safe
from .train import TrainConfig, gradient_check, table_loss

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Entity", "EvalReport", "Label", "MatchMode", "Model",
    "ModelConfig", "OverlapPattern", "RelationVocab", "Sentence", "SynthConfig",
    "TagTable", "TrainConfig", "Triple", "build_report", "decode_tables",
    "encode_tables", "generate", "gradient_check", "is_roundtrip_safe",
    "micro_prf", "table_loss",
]
