"""Small layer library over the autodiff core."""
import numpy as np

from . import ops
from .core import Tensor, relu

DTYPE = np.float32


def parameter(data, dtype=DTYPE):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def kaiming_uniform(rng, shape, fan_in, a=np.sqrt(5.0), dtype=DTYPE):
    """U(-b, b) with b = sqrt(6 / ((1 + a^2) fan_in)).

    The default leaky slope a = sqrt(5) gives b = 1 / sqrt(fan_in), the usual
    conv-layer default; a = 0 is the plain ReLU gain.
    """
    bound = np.sqrt(6.0 / ((1.0 + a * a) * fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Container with deterministic (definition-order) parameter naming."""

    training = True

    def _children(self):
        for name, v in vars(self).items():
            if isinstance(v, (Module, Tensor)):
                yield name, v
            elif isinstance(v, (list, tuple)):
                for i, item in enumerate(v):
                    if isinstance(item, (Module, Tensor)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, v in self._children():
            if isinstance(v, Module):
                yield from v.named_parameters(prefix + name + ".")
            elif v.requires_grad:
                yield prefix + name, v

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, v in vars(self).items():
            if name.startswith("buf_") and isinstance(v, np.ndarray):
                yield prefix + name, v
        for name, v in self._children():
            if isinstance(v, Module):
                yield from v.named_buffers(prefix + name + ".")

    def state(self):
        """Ordered name -> array of every parameter and buffer."""
        out = {n: p.data for n, p in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def load_state(self, arrays):
        params = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        for name, arr in arrays.items():
            if name in params:
                tgt = params[name]
                if tgt.shape != arr.shape:
                    raise ValueError(f"shape mismatch for {name}: {tgt.shape} vs {arr.shape}")
                tgt.data = np.array(arr, dtype=tgt.dtype)
            elif name in bufs:
                bufs[name][...] = arr
            else:
                raise KeyError(f"unexpected tensor {name}")
        missing = (set(params) | set(bufs)) - set(arrays)
        if missing:
            raise KeyError(f"missing tensors: {sorted(missing)}")

    def train(self, mode=True):
        self.training = mode
        for _, v in self._children():
            if isinstance(v, Module):
                v.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv1d(Module):
    def __init__(self, cin, cout, k, stride=1, padding=0, rng=None, bias=True):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = parameter(kaiming_uniform(rng, (cout, cin, k), cin * k))
        self.bias = parameter(np.zeros(cout)) if bias else None
        self.stride, self.padding = stride, padding

    def forward(self, x):
        return ops.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose1d(Module):
    def __init__(self, cin, cout, k, stride=1, padding=0, output_padding=0, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = parameter(kaiming_uniform(rng, (cin, cout, k), cin * k))
        self.bias = parameter(np.zeros(cout))
        self.stride, self.padding, self.output_padding = stride, padding, output_padding

    def forward(self, x):
        return ops.conv_transpose1d(x, self.weight, self.bias, self.stride, self.padding,
                                    self.output_padding)


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride=1, padding=0, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = parameter(kaiming_uniform(rng, (cout, cin, k, k), cin * k * k))
        self.bias = parameter(np.zeros(cout))
        self.stride, self.padding = stride, padding

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, cin, cout, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = parameter(kaiming_uniform(rng, (cin, cout), cin))
        self.bias = parameter(np.zeros(cout))

    def forward(self, x):
        return x @ self.weight + self.bias


class BatchNorm(Module):
    """Batch normalisation over channel axis 1 (works for 1-D and 2-D maps)."""

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.buf_mean = np.zeros(channels, dtype=DTYPE)
        self.buf_var = np.ones(channels, dtype=DTYPE)
        self.momentum, self.eps = momentum, eps

    def forward(self, x):
        return ops.batch_norm(x, self.gamma, self.beta, self.buf_mean, self.buf_var,
                              self.training, self.momentum, self.eps)


class ReLU(Module):
    def forward(self, x):
        return relu(x)
