from .validation import (
    check_logits,
    check_prob_vector,
    check_temperature,
    check_tokens,
)

__all__ = ["check_logits", "check_prob_vector", "check_temperature", "check_tokens"]
