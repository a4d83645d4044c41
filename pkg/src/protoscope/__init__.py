"""Dataless evaluation of trained one-hot neural classifiers."""

__version__ = "0.1.0"
