"""Joint multi-agent motion prediction: marginal recombination, scene-level losses and a CVAE."""

__version__ = "0.1.0"
