"""Autoencoders trained with Adam and Lookahead on a small numpy autodiff engine."""

from .tensor import Tape, Var, backward

__version__ = "0.1.0"

__all__ = ["Tape", "Var", "backward", "__version__"]
