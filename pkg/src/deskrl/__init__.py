"""deskrl: a desk-scale reinforcement-learning lab.

Frame stacking, 3D convolutions, and channel-width scaling on top of PPO
and VSOP agents, with seeded procedurally generated environments and
aggregate-metric evaluation (median / IQM / mean / optimality gap with
stratified bootstrap confidence intervals).
"""

from .rng import Rng
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = ["Rng", "Tensor", "__version__"]
