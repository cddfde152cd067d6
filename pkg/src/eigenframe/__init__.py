"""eigenframe: analysis of extension/entropy and flux systems attached to a
prescribed frame of eigenvector fields."""

__version__ = "0.1.0"
