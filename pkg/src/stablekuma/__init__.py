"""Numerically stable Kumaraswamy distribution, its oracles, and a bandit encoder."""

__version__ = "0.1.0"

from .kumaraswamy import (  # noqa: E402
    BetaParams,
    GradPair,
    LogParams,
    UnitValue,
    cdf,
    entropy,
    entropy_grads,
    icdf,
    icdf_grads,
    icdf_log_grads,
    kl_to_beta,
    kl_to_beta_grads,
    log_pdf,
    log_pdf_grads,
    moment,
    sample,
    sf,
)
from .scalar import DomainError, log1mexp, log1mexp_f32  # noqa: E402

__all__ = [
    "BetaParams",
    "DomainError",
    "GradPair",
    "LogParams",
    "UnitValue",
    "cdf",
    "entropy",
    "entropy_grads",
    "icdf",
    "icdf_grads",
    "icdf_log_grads",
    "kl_to_beta",
    "kl_to_beta_grads",
    "log1mexp",
    "log1mexp_f32",
    "log_pdf",
    "log_pdf_grads",
    "moment",
    "sample",
    "sf",
]
