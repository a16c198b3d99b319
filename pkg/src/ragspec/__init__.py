"""Retrieval-augmented speculative decoding on exact toy language models."""

__version__ = "0.1.0"

from .engine import EngineConfig, GenerationStats, RapidDecoder, StepTrace, generate
from .lm import ContextOracleLM, LMBackend, NGramLM, TableLM, Vocab
from .retrieval import ChunkRetriever, RetrievalConfig, select_chunks
from .sampling import RngStream, kd_gradient, softmax_t

__all__ = [
    "__version__",
    "ChunkRetriever",
    "ContextOracleLM",
    "EngineConfig",
    "GenerationStats",
    "LMBackend",
    "NGramLM",
    "RapidDecoder",
    "RetrievalConfig",
    "RngStream",
    "StepTrace",
    "TableLM",
    "Vocab",
    "generate",
    "kd_gradient",
    "select_chunks",
    "softmax_t",
]
