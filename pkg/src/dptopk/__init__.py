"""Differentially private top-k selection with budget accounting and an
exact-distribution verifier."""

from dptopk.core import (
    BOTTOM,
    Histogram,
    PrivacyParams,
    SensitivitySetting,
    TopKOutput,
    TopKRequest,
    UNRESTRICTED,
    ingest_csv,
    limited_domain,
    sorted_view,
    strict_limited_domain,
)

__version__ = "0.1.0"

__all__ = [
    "BOTTOM",
    "Histogram",
    "PrivacyParams",
    "SensitivitySetting",
    "TopKOutput",
    "TopKRequest",
    "UNRESTRICTED",
    "ingest_csv",
    "limited_domain",
    "sorted_view",
    "strict_limited_domain",
    "__version__",
]
