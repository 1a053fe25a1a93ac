"""
Base model for parameter blocks loaded from experiment config files.
"""

from pydantic import BaseModel, ConfigDict


class ParamsModel(BaseModel):
    """Immutable parameter block; unknown keys are rejected"""

    model_config = ConfigDict(extra="forbid", frozen=True)
