"""Survival risk modelling: Cox and neural Cox models, backward feature
elimination, TPE hyperparameter search, concordance and calibration."""

__version__ = "0.1.0"
