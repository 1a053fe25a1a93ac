"""
Error types for the ball-balancing lab.

The CLI maps ConfigError to exit status 1 and every other LabError to 2.
"""

from typing import Optional, Sequence


class LabError(Exception):
    """Base class for all errors raised by the lab"""


class ConfigError(LabError):
    """Invalid or inconsistent configuration"""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class SimulationFault(LabError):
    """Non-finite or otherwise unusable simulation state"""

    def __init__(self, field: str, env_indices: Sequence[int] = ()):
        self.field = field
        self.env_indices = list(env_indices)
        where = f" (envs {self.env_indices})" if self.env_indices else ""
        super().__init__(f"non-finite value in {field}{where}")


class ModelShapeError(LabError):
    """Observation or parameter shape does not match the network"""


class CheckpointError(LabError):
    """Checkpoint file is missing, malformed or incompatible"""


class TrainingFault(LabError):
    """Non-finite loss during an update"""

    def __init__(self, term: str):
        self.term = term
        super().__init__(f"non-finite loss term: {term}")
