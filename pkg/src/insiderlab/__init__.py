"""Insider-purchase signal pipeline for microcap equities.

Parses Form 4 ownership filings, computes factor-adjusted post-disclosure
abnormal returns with point-in-time discipline, trains a gradient-boosted
classifier on disclosure-time features, and reproduces the evaluation and
stratification analyses on synthetic or user-supplied data.
"""

__version__ = "0.1.0"

from .errors import PipelineError  # noqa: F401
from .eventstudy import LabelConfig  # noqa: F401
from .filings import FilterConfig, InsiderTransaction, parse_form4  # noqa: F401
from .gbm import GbmConfig  # noqa: F401
from .learn import SplitSpec  # noqa: F401
from .marketdata import MarketData, load_market  # noqa: F401
from .synth import SynthConfig  # noqa: F401
