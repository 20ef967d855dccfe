"""epochnoise - SGD with momentum under epoch-based minibatch noise."""

__version__ = "0.1.0"
__author__ = "K7ZVX"
