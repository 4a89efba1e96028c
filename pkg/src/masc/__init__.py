"""Mars adaptive sensing and communication simulation library.

End-to-end deterministic pipeline: dusty-channel synthesis, hybrid sensing
precoder optimisation, sensing-to-communication parameter mapping, robust
directional precoding under dust/CSI uncertainty, epsilon-constraint
resource allocation, and estimation-bound evaluation, with a batch CLI that
reproduces the reference figure sweeps as CSV artifacts.
"""

from .scenario import (FrameConfig, ScenarioConfig, SceneFields,
                       TOOL_VERSION, UncertaintyModel, build_scene_fields,
                       scenario_preset)

__version__ = TOOL_VERSION

__all__ = [
    "FrameConfig",
    "ScenarioConfig",
    "SceneFields",
    "UncertaintyModel",
    "build_scene_fields",
    "scenario_preset",
    "TOOL_VERSION",
]
