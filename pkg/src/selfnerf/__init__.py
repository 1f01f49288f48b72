"""Few-shot neural radiance fields trained by iterative self-training with pseudo-views."""

from .config import RunConfig, load_config
from .field import FieldConfig, Provenance, UncertaintyField, init_params
from .geometry import Camera, DomainError

__all__ = ["Camera", "DomainError", "FieldConfig", "Provenance", "RunConfig", "UncertaintyField", "init_params",
           "load_config"]
__version__ = "0.1.0"
