from .autodiff import Tensor, backward as backward_tensor, cross_entropy, no_grad
from .layers import (
    ARCHITECTURES,
    AvgPool,
    BatchNorm,
    Conv,
    Dense,
    Graph,
    LayerSpec,
    MaxPool,
    ReLU,
    ShapeError,
    Softmax,
    architecture,
    backward,
    forward,
)
from .optim import SGD, Adam, adam_step, sgd_step
