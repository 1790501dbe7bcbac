"""Memory-based flow-map surrogate control toolkit.

Learns a flow-map model with memory for control-excited drag and lift,
then runs PPO and receding-horizon MPC controllers entirely inside the
surrogate while a true plant is controlled in closed loop.
"""

from .plant import PlantParams, PlantState, QoiSample, make_plant, observe, plant_step, spinup

__all__ = [
    "PlantParams",
    "PlantState",
    "QoiSample",
    "make_plant",
    "observe",
    "plant_step",
    "spinup",
]

__version__ = "0.1.0"
