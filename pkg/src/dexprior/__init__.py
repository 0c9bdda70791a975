"""dexprior: human hand-video observations to robot trajectories and policies."""

__version__ = "0.1.0"
