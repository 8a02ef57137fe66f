from . import autodiff as ops
from .autodiff import GradientTape, Tensor, UnsupportedOpError, as_tensor
from .gradcheck import check_gradients, grad, numerical_grad, relative_error, value_and_grad
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "GradientTape",
    "Tensor",
    "UnsupportedOpError",
    "adam_step",
    "as_tensor",
    "check_gradients",
    "grad",
    "numerical_grad",
    "ops",
    "relative_error",
    "value_and_grad",
]
