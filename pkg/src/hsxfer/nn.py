"""Parameter containers and the handful of layers the models need."""
from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    def __init__(self, data, requires_grad=True, name=None):
        super().__init__(data, requires_grad=requires_grad, name=name)


class Module:
    """Base class. Parameters, buffers and children are discovered in attribute order."""

    training = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix=""):
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                out.append((prefix + name, value))
        for name, child in self._children():
            out.extend(child.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        out = [(prefix + n, getattr(self, n)) for n in getattr(self, "_buffer_names", ())]
        for name, child in self._children():
            out.extend(child.named_buffers(f"{prefix}{name}."))
        return out

    def state_dict(self):
        state = OrderedDict((n, p.data) for n, p in self.named_parameters())
        state.update((n, b) for n, b in self.named_buffers())
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)}")
        for name, p in params.items():
            p.data = np.array(state[name], dtype=p.data.dtype)
        for name, buf in buffers.items():
            buf[...] = state[name]

    def copy_state(self):
        return OrderedDict((k, np.array(v, copy=True)) for k, v in self.state_dict().items())

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def set_requires_grad(self, flag):
        for p in self.parameters():
            p.requires_grad = flag
            p.grad = np.zeros_like(p.data) if flag else None

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def he_normal(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def xavier_uniform(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        self.weight = Parameter(xavier_uniform(rng, (n_in, n_out), n_in, n_out))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, c_in, c_out, size, rng):
        self.weight = Parameter(he_normal(rng, (size, size, c_in, c_out), size * size * c_in))
        self.bias = Parameter(np.zeros(c_out))

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, c_in, c_out, size, rng):
        self.weight = Parameter(he_normal(rng, (size, c_in, c_out), size * c_in))
        self.bias = Parameter(np.zeros(c_out))

    def __call__(self, x):
        return T.conv1d(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta)


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.1):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=T.get_dtype())
        self.running_var = np.ones(channels, dtype=T.get_dtype())
        self._buffer_names = ("running_mean", "running_var")
        self.momentum = momentum

    def __call__(self, x):
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum)
