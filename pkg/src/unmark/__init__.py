"""Learned removal of audio watermarks: models, victims, attacks and evaluation."""
__version__ = "0.1.0"
