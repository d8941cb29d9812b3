"""Energy- and time-aware exploration planning for a terrestrial-aerial bimodal robot.

The package couples a deterministic voxel-grid world simulator with a
budget-aware Monte Carlo tree search planner that picks both the next
viewpoint and the locomotion modality (rolling vs. flying) under energy
and time budgets.
"""

from bimodal_explorer.kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
