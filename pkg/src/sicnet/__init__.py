"""Iterative multi-user MIMO detectors (classical SIC, DeepSIC, GNNSIC) built on a
small numpy MLP core, plus generalization-bound calculators and an experiment harness."""

__version__ = "0.1.0"
