"""Sequential Bayesian experimental design for calibrated simulator models."""

from .compress import CompressionConfig, compress
from .criteria import ComplexityConfig, NmcConfig, mi_nmc
from .campaign import CampaignConfig, CampaignResult, run_campaign
from .mixture import GaussianMixture
from .model import (KohData, KohModelState, McmcConfig, PosteriorSample,
                    fit_posterior, predict, predictive_mixture)
from .scenarios import JakStatScenario, ToyScenario, load_scenario

__version__ = "0.1.0"

__all__ = [
    "CampaignConfig", "CampaignResult", "ComplexityConfig",
    "CompressionConfig", "GaussianMixture", "JakStatScenario", "KohData",
    "KohModelState", "McmcConfig", "NmcConfig", "PosteriorSample",
    "ToyScenario", "compress", "fit_posterior", "load_scenario", "mi_nmc",
    "predict", "predictive_mixture", "run_campaign",
]
