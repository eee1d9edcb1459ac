"""heavyflow: normalizing-flow density estimation for heavy-tailed data.

Gaussian-based flows whose final layer converts Gaussian tails into
generalized-Pareto tails with learnable, per-tail, per-dimension weights.
"""

__version__ = "0.1.0"

from .tails import TailMode, TailParams  # noqa: F401
