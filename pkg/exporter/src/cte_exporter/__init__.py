"""Frozen-encoder token embedding exporter (CTE1 store format)."""

from .export import (
    ENT_END,
    ENT_START,
    EncoderBundle,
    ExportRequest,
    encode_words,
    export,
    load_encoder,
    write_cte1,
)

__version__ = "0.1.0"

__all__ = [
    "ENT_END", "ENT_START", "EncoderBundle", "ExportRequest",
    "encode_words", "export", "load_encoder", "write_cte1", "__version__",
]
