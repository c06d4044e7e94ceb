"""ViT-Base frame feature exporter for the affectseq trainer."""

from affect_exporter.backbone import FEATURE_DIM, MODEL_NAME, Backbone
from affect_exporter.export import ExportJob, VideoResult, export

__all__ = [
    "Backbone",
    "ExportJob",
    "VideoResult",
    "export",
    "FEATURE_DIM",
    "MODEL_NAME",
]
