"""Part-based weapon detection toolkit: a numpy CNN engine, part ensembles and reproduction studies."""

__version__ = "0.1.0"
