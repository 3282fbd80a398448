"""Localized makeup transfer by optimizing pixels against region-masked deep-feature losses."""

__version__ = "0.1.0"

from .convnet import forward_all, backward_to_image, load_network, random_network, default_template  # noqa: E402,F401
from .losses import Objective, TransferConfig, total_objective  # noqa: E402,F401
from .optimizer import run_transfer, lightness_sweep  # noqa: E402,F401
