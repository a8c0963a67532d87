"""Cascaded 2D liver / lesion segmentation on CT volumes, written on numpy."""

__version__ = "0.1.0"
