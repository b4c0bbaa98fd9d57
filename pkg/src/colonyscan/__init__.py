"""Detection-uncertainty, augmentation and survey-planning tools for sparse
small-object colonies in aerial orthomosaics."""

from ._accel import BACKEND, NUMBA_AVAILABLE

__version__ = "0.1.0"

__all__ = ["BACKEND", "NUMBA_AVAILABLE", "__version__"]
