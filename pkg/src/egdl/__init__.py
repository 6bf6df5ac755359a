"""Epidemic-guided spatiotemporal incidence forecasting.

A networked SIR model with saturated incidence and graph-Laplacian
diffusion, Bayesian calibration of its parameters, and hybrid pipelines
that feed the mechanistic infected curve into neural forecasters.
"""

__version__ = "0.1.0"
