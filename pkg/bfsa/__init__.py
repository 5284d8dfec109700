"""Gaussian-process maximum likelihood with the block full-scale covariance approximation."""
import logging

# noinspection PyArgumentList
logging.basicConfig(handlers=[logging.StreamHandler()], level=logging.INFO)

__version__ = "0.1.0"
