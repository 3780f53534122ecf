"""Training, sampling, generation methods and the completion-service client."""

from quartet.pipelines.generate import GenerationError, GenerationRequest, GenerationResult, Resources, generate
from quartet.pipelines.llm import (
    HttpLlmClient,
    JobHandle,
    LlmJob,
    MockLlmClient,
    ServiceError,
    TokenLimitError,
    estimate_tokens,
    llm_complete,
    llm_finetune,
)
from quartet.pipelines.sampling import sample, sample_pitches, sample_tokens
from quartet.pipelines.training import TrainConfig, TrainingError, TrainResult, split_corpus, train

__all__ = [
    "GenerationError",
    "GenerationRequest",
    "GenerationResult",
    "HttpLlmClient",
    "JobHandle",
    "LlmJob",
    "MockLlmClient",
    "Resources",
    "ServiceError",
    "TokenLimitError",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "estimate_tokens",
    "generate",
    "llm_complete",
    "llm_finetune",
    "sample",
    "sample_pitches",
    "sample_tokens",
    "split_corpus",
    "train",
]
