"""Generate-then-read grounding for multiple-choice question answering.

The pipeline samples artificial grounding contexts from a generator model
(option-focused and option-free views per question), scrubs answer leaks,
optionally mixes in passages retrieved from a chunked corpus, and prompts a
reader model through byte-exact few-shot templates.  An evaluation suite
measures accuracy, rerank recall, option-position bias and judged grounding
quality, all deterministically enough to diff run outputs byte for byte.
"""

__version__ = "0.1.0"

from .contexts import ContextBundle, ContextCache, ContextGenerator, GeneratedContext
from .corpus import (
    BenchmarkRecord,
    load_benchmark,
    record_rng,
    save_benchmark,
    shuffle_options,
    summarize,
    synthetic_benchmark,
)
from .errors import (
    ConfigError,
    ContextWindowExceeded,
    CtxgenieError,
    DataError,
    EndpointError,
)
from .gateway import Completion, EndpointProfile, GenerationRequest, LlmGateway
from .reader import Prediction, Reader
from .retrieval import Chunk, MixedCorpus, VectorIndex, mixed_corpus, split_text

__all__ = [
    "BenchmarkRecord",
    "Chunk",
    "Completion",
    "ConfigError",
    "ContextBundle",
    "ContextCache",
    "ContextGenerator",
    "ContextWindowExceeded",
    "CtxgenieError",
    "DataError",
    "EndpointError",
    "EndpointProfile",
    "GeneratedContext",
    "GenerationRequest",
    "LlmGateway",
    "MixedCorpus",
    "Prediction",
    "Reader",
    "VectorIndex",
    "__version__",
    "load_benchmark",
    "mixed_corpus",
    "record_rng",
    "save_benchmark",
    "shuffle_options",
    "split_text",
    "summarize",
    "synthetic_benchmark",
]
