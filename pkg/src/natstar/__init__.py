"""Jet-level verification workbench for natural star-products on cotangent bundles."""
from .jets import Jet, HbarSeries

__all__ = ["Jet", "HbarSeries"]
__version__ = "0.1.0"
