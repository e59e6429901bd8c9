"""Grammar-constrained decoding and the rejection baseline."""

from src.gcd.decoder import (
    ConstrainedDecoder,
    GcdSample,
    MaskedStep,
    decoder_for,
    gcd_continuation_logprob,
    gcd_sample,
    masked_step,
)
from src.gcd.rejection import RejectionResult, acceptance_trials, rejection_sample

__all__ = [
    "ConstrainedDecoder",
    "GcdSample",
    "MaskedStep",
    "decoder_for",
    "gcd_continuation_logprob",
    "gcd_sample",
    "masked_step",
    "RejectionResult",
    "acceptance_trials",
    "rejection_sample",
]
