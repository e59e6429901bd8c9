"""
GRAMMCMC - Grammar-aligned sampling from language models.
Grammar-constrained decoding as a proposal inside Metropolis-Hastings.
"""

__version__ = "1.0.0"
__author__ = "GRAMMCMC Team"
