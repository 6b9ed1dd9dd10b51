"""Small reverse-mode autodiff engine over NumPy arrays."""

from .ops import *  # noqa: F401,F403
from .ops import __all__ as _ops_all
from .tensor import (SecondOrderError, Tensor, backward, enable_grad, grad, is_checked,
                     is_grad_enabled, no_grad, set_checked)

__all__ = list(_ops_all) + [
    "Tensor", "SecondOrderError", "backward", "grad", "no_grad", "enable_grad",
    "is_grad_enabled", "set_checked", "is_checked",
]
