"""Portfolio management with autoencoded indicators, Chebyshev graph
convolution over an asset-correlation graph, and an actor-critic agent."""

__version__ = "0.1.0"
