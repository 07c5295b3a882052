from . import tensor
from .gradcheck import gradient_check
from .layers import GruLayer, GruStack, Linear, Parameter, ParamStore
from .optim import Adam, clip_grad_norm
from .rng import Rng
from .tensor import NonFiniteError, ShapeError, Tensor, no_grad

__all__ = [
    "tensor",
    "gradient_check",
    "GruLayer",
    "GruStack",
    "Linear",
    "Parameter",
    "ParamStore",
    "Adam",
    "clip_grad_norm",
    "Rng",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "no_grad",
]
