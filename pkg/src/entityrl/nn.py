"""Parameter containers, initialization, Adam, and binary checkpoints."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor, get_default_dtype, parameter

CHECKPOINT_MAGIC = b"ERLW1"


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)), the linear-layer default."""
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


def linear_params(rng: np.random.Generator, fan_in: int, fan_out: int, bias: bool = True):
    """Weight (fan_in, fan_out) and optional bias (fan_out,) tensors."""
    w = parameter(uniform_init(rng, fan_in, (fan_in, fan_out)))
    if not bias:
        return w
    return w, parameter(uniform_init(rng, fan_in, (fan_out,)))


class ParamDict(dict):
    """Named parameter tensors; name order is insertion order."""

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self:
            raise ValueError(f"duplicate parameter name {name!r}")
        self[name] = tensor
        return tensor

    def num_params(self) -> int:
        return sum(t.size for t in self.values())

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self) - set(values)
        extra = set(values) - set(self)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, t in self.items():
            arr = np.asarray(values[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"parameter {name!r}: shape {arr.shape} != {t.data.shape}")
            t.data = arr.copy()


class Adam:
    """Adam over a ParamDict (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: ParamDict, lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / bias1
            v_hat = v / bias2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_grad_norm(params: ParamDict, max_norm: float) -> float:
    """Scale all grads so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale  # grads may be shared views; never mutate
    return norm


# -- checkpoint format ---------------------------------------------------------
# magic "ERLW1", then per entry (little-endian):
#   u32 name length, name bytes (utf-8), u32 rank, u32 x rank shape,
#   float32 x prod(shape) data. Entries run to EOF.

def save_checkpoint(path: str | Path, params: dict[str, Tensor] | ParamDict) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        for name, tensor in params.items():
            data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
            arr = np.ascontiguousarray(data, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:5] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an ERLW1 checkpoint")
    out: dict[str, np.ndarray] = {}
    offset = 5
    while offset < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
        out[name] = arr.copy()
    return out
