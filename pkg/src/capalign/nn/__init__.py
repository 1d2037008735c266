from .params import Param, ParameterStore, glorot_limit
from .adam import Adam
from .gradcheck import finite_difference_check, relative_error
from . import ops

__all__ = [
    "Param",
    "ParameterStore",
    "glorot_limit",
    "Adam",
    "finite_difference_check",
    "relative_error",
    "ops",
]
