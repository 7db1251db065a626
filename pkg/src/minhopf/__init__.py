"""Global dynamics toolkit for the minimal Hopf reaction system."""

__version__ = "0.1.0"
