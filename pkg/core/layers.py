from typing import Dict, List, Literal, Sequence, Tuple

import numpy as np

from core.tensor import Tensor, scaled_dot_product_attention
from utils.error_handler import ShapeError, ValidationError


def glorot_init(shape: Sequence[int], rng: np.random.Generator) -> Tensor:
    """Glorot uniform: U[-b, b] with b = sqrt(6 / (fan_in + fan_out))"""
    shape = tuple(int(s) for s in shape)
    if not shape:
        raise ValidationError('glorot_init needs at least one axis')
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_in = shape[0] * receptive
    fan_out = (shape[1] if len(shape) > 1 else shape[0]) * receptive
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def sinusoidal_encoding(length: int, d: int) -> np.ndarray:
    """Classic transformer positional table of shape (length, d)"""
    position = np.arange(length, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, d, 2, dtype=np.float64) * (-np.log(10000.0) / d))
    table = np.zeros((length, d))
    table[:, 0::2] = np.sin(position * div)
    table[:, 1::2] = np.cos(position * div)[:, : d // 2]
    return table


class Module:
    """Container of named parameters and sub-modules (insertion ordered)"""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._modules: Dict[str, 'Module'] = {}

    def add_parameter(self, name: str, tensor: Tensor) -> Tensor:
        tensor.name = name
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def add_module(self, name: str, module: 'Module') -> 'Module':
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = '') -> Dict[str, Tensor]:
        params = {f'{prefix}{name}': p for name, p in self._params.items()}
        for name, module in self._modules.items():
            params.update(module.named_parameters(f'{prefix}{name}.'))
        return params

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    def requires_grad_(self, flag: bool) -> 'Module':
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise ValidationError(f'Missing parameters in state: {sorted(missing)}')
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError('load_state', [p.shape, value.shape], name)
            p.data = value.copy()

    def zero_(self) -> 'Module':
        """Set every parameter to zero (used for analytic reference outputs)"""
        for p in self.parameters():
            p.data = np.zeros_like(p.data)
        return self


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.weight = self.add_parameter('weight', glorot_init((in_features, out_features), rng))
        self.bias = self.add_parameter('bias', Tensor(np.zeros(out_features)))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class MLP(Module):
    """Stack of tanh-activated dense layers"""

    def __init__(self, in_features: int, hidden: Sequence[int], rng: np.random.Generator):
        super().__init__()
        self.layers: List[Dense] = []
        width = in_features
        for idx, units in enumerate(hidden):
            self.layers.append(self.add_module(f'fc{idx}', Dense(width, units, rng)))
            width = units
        self.out_features = width

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x).tanh()
        return x


class ExchangeableLayer(Module):
    """Row/column permutation-equivariant layer on (batch, rows, cols, channels) tensors.

    Each output channel is tanh of a weighted sum of the element, its row mean,
    its column mean and the global mean, plus a bias.
    """

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.w_elem = self.add_parameter('w_elem', glorot_init((in_channels, out_channels), rng))
        self.w_row = self.add_parameter('w_row', glorot_init((in_channels, out_channels), rng))
        self.w_col = self.add_parameter('w_col', glorot_init((in_channels, out_channels), rng))
        self.w_all = self.add_parameter('w_all', glorot_init((in_channels, out_channels), rng))
        self.bias = self.add_parameter('bias', Tensor(np.zeros(out_channels)))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise ShapeError('exchangeable', [x.shape], 'expected (batch, rows, cols, channels)')
        row_mean = x.mean(axis=2, keepdims=True)
        col_mean = x.mean(axis=1, keepdims=True)
        all_mean = x.mean(axis=(1, 2), keepdims=True)
        out = (x @ self.w_elem + row_mean @ self.w_row + col_mean @ self.w_col
               + all_mean @ self.w_all + self.bias)
        return out.tanh()


class MultiHeadSelfAttention(Module):
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if d_model % heads != 0:
            raise ShapeError('attention', [(d_model,), (heads,)], 'd_model not divisible by heads')
        self.d_model = d_model
        self.heads = heads
        self.query = self.add_module('query', Dense(d_model, d_model, rng))
        self.key = self.add_module('key', Dense(d_model, d_model, rng))
        self.value = self.add_module('value', Dense(d_model, d_model, rng))
        self.out = self.add_module('out', Dense(d_model, d_model, rng))

    def _split(self, x: Tensor) -> Tensor:
        n, length, _ = x.shape
        return x.reshape(n, length, self.heads, self.d_model // self.heads).transpose(0, 2, 1, 3)

    def attend(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """x: (batch, seq, d) -> (projected attention output, weights (batch, heads, seq, seq))"""
        n, length, _ = x.shape
        out, weights = scaled_dot_product_attention(
            self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x)))
        out = out.transpose(0, 2, 1, 3).reshape(n, length, self.d_model)
        return self.out(out), weights


class AxisAttention(Module):
    """Self-attention along one axis of a (batch, rows, cols, d) tensor, plus a residual.

    The complementary axis is folded into the batch, so both axes are kept.
    """

    def __init__(self,
                 d_model: int,
                 heads: int,
                 axis: Literal['first', 'second'],
                 rng: np.random.Generator):
        super().__init__()
        if axis not in ('first', 'second'):
            raise ValidationError(f'axis must be "first" or "second", got {axis!r}')
        self.axis = axis
        self.attention = self.add_module('attention', MultiHeadSelfAttention(d_model, heads, rng))

    def __call__(self, x: Tensor) -> Tensor:
        return self.attend(x)[0]

    def attend(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        if x.ndim != 4:
            raise ShapeError('axis_attention', [x.shape], 'expected (batch, rows, cols, d)')
        batch, rows, cols, d = x.shape
        if self.axis == 'first':
            seq = x.transpose(0, 2, 1, 3).reshape(batch * cols, rows, d)
        else:
            seq = x.reshape(batch * rows, cols, d)
        attended, weights = self.attention.attend(seq)
        out = seq + attended
        if self.axis == 'first':
            return out.reshape(batch, cols, rows, d).transpose(0, 2, 1, 3), weights
        return out.reshape(batch, rows, cols, d), weights
