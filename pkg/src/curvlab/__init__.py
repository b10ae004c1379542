"""curvlab: curvature equations of holomorphic immersions on discretized hyperbolic surfaces."""

__version__ = "0.1.0"
