"""
Fully-connected layers on blocked layouts.

Every pass is the same shape of computation: a grid of output blocks, each
the batch-reduce GEMM of one row of ``A`` blocks against one row of ``B``
blocks. Output blocks are split statically across the worker pool and a
reduction is never split, so the result does not depend on thread count.
"""

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import ShapeError
from ..core.logging_config import get_logger
from .tensor import (
    BlockedTensor4,
    BlockRole,
    DenseTensor,
    as_dense,
    bf16_truncate,
    from_blocked,
    pick_block,
    to_blocked,
)
from .workers import WorkerPool, get_pool

logger = get_logger(__name__)


class Activation(str, Enum):
    NONE = "none"
    RELU = "relu"
    SIGMOID = "sigmoid"


@dataclass
class KernelConfig:
    """Blocking knobs for the MLP kernels."""
    block_n: int = 32
    block_c: int = 32
    block_k: int = 32
    cache_tile: Optional[int] = None


def batch_reduce_gemm(a_blocks, b_blocks, out: np.ndarray, count: int) -> None:
    """
    ``out += sum(B_i @ A_i for i < count)`` with ``A_i`` of shape ``[r][q]``
    and ``B_i`` of shape ``[p][r]``.

    Leading dimensions before the ``count`` axis are batch dimensions, so one
    call can produce many output blocks. Products are accumulated one
    reduction index at a time in ascending order (block, then element), the
    same order as a scalar triple loop.
    """
    if count == 0:
        return
    a = np.asarray(a_blocks, dtype=np.float32)
    b = np.asarray(b_blocks, dtype=np.float32)
    depth = a.shape[-2]
    for i in range(count):
        a_i = a[..., i, :, :]
        b_i = b[..., i, :, :]
        for r in range(depth):
            out += b_i[..., :, r, None] * a_i[..., None, r, :]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return (np.float32(1.0) / (np.float32(1.0) + np.exp(-x))).astype(np.float32)


def apply_activation(act: Activation, pre: np.ndarray) -> np.ndarray:
    if act is Activation.RELU:
        return np.where(pre > 0, pre, np.float32(0.0)).astype(np.float32)
    if act is Activation.SIGMOID:
        return _sigmoid(pre)
    return pre.copy()


def _grid_gemm(
    A: np.ndarray,
    B: np.ndarray,
    out: np.ndarray,
    pool: WorkerPool,
    cache_tile: Optional[int] = None,
    epilogue: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], None]] = None,
) -> None:
    """
    ``out[i, j] = sum_R B[j, R] @ A[i, R]`` over the full ``(I, J)`` grid.

    ``A`` is ``(I, R, r, q)``, ``B`` is ``(J, R, p, r)``, ``out`` is
    ``(I, J, p, q)``. ``epilogue(i_ids, j_ids, acc)`` runs in place on each finished
    group of blocks before it is written.
    """
    n_i, n_j = out.shape[0], out.shape[1]
    reduce_len = A.shape[1]
    total = n_i * n_j

    def run(b0: int, b1: int) -> None:
        step = cache_tile or max(b1 - b0, 1)
        for t0 in range(b0, b1, step):
            ids = np.arange(t0, min(t0 + step, b1))
            i_ids, j_ids = ids // n_j, ids % n_j
            acc = np.zeros((len(ids),) + out.shape[2:], dtype=np.float32)
            batch_reduce_gemm(A[i_ids], B[j_ids], acc, reduce_len)
            if epilogue is not None:
                epilogue(i_ids, j_ids, acc)
            out[i_ids, j_ids] = acc

    pool.map_partitions(total, run, parts=min(pool.size, total))


@dataclass
class FCLayer:
    """One fully-connected layer ``y = act(W x + b)`` with blocked weights."""
    weight: BlockedTensor4
    bias: DenseTensor
    activation: Activation = Activation.RELU

    def __post_init__(self):
        if self.weight.role is not BlockRole.WEIGHT:
            raise ShapeError("FCLayer weight must use the weight layout")
        if self.bias.shape != (self.K,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.K},)")

    @classmethod
    def from_dense(
        cls,
        weight: DenseTensor,
        bias: DenseTensor,
        activation: Activation = Activation.RELU,
        kernel: Optional[KernelConfig] = None,
    ) -> "FCLayer":
        kernel = kernel or KernelConfig()
        weight = as_dense(weight, ndim=2)
        K, C = weight.shape
        blocked = to_blocked(weight, BlockRole.WEIGHT,
                             pick_block(K, kernel.block_k), pick_block(C, kernel.block_c))
        return cls(blocked, as_dense(bias, ndim=1), Activation(activation))

    @property
    def K(self) -> int:
        return self.weight.dense_shape[0]

    @property
    def C(self) -> int:
        return self.weight.dense_shape[1]

    @property
    def b_c(self) -> int:
        return self.weight.inner1

    @property
    def b_k(self) -> int:
        return self.weight.inner2

    def dense_weight(self) -> DenseTensor:
        return from_blocked(self.weight)

    def parameters(self) -> List[np.ndarray]:
        """Trainable arrays in a fixed order: blocked weight, then bias."""
        return [self.weight.data, self.bias]


@dataclass
class FCCache:
    """Forward state kept for the backward passes."""
    x: BlockedTensor4
    pre: np.ndarray
    out: np.ndarray


def _log_rate(name: str, flops: float, start: float) -> None:
    elapsed = time.perf_counter() - start
    if elapsed > 0:
        logger.debug("gemm pass", op=name, gflops=round(flops / elapsed / 1e9, 3),
                     elapsed_ms=round(elapsed * 1e3, 3))


def _check_activation_input(layer: FCLayer, X: BlockedTensor4) -> None:
    if X.role is not BlockRole.ACTIVATION:
        raise ShapeError("input must use the activation layout")
    if X.dense_shape[1] != layer.C or X.inner2 != layer.b_c:
        raise ShapeError(
            f"input {X.dense_shape} with b_c={X.inner2} does not fit layer "
            f"C={layer.C}, b_c={layer.b_c}"
        )


def fc_forward(
    layer: FCLayer,
    X: BlockedTensor4,
    pool: Optional[WorkerPool] = None,
    cache_tile: Optional[int] = None,
    bf16: bool = False,
) -> Tuple[BlockedTensor4, FCCache]:
    """
    Forward pass; returns the activation-layout output and its cache.

    With ``bf16`` the GEMM and bias read the parameters truncated to BF16.
    """
    _check_activation_input(layer, X)
    pool = pool or get_pool(1)
    W4 = bf16_truncate(layer.weight.data) if bf16 else layer.weight.data
    bias = bf16_truncate(layer.bias) if bf16 else layer.bias
    K_b, b_k = layer.weight.outer1, layer.b_k
    N_b, b_n = X.outer2, X.inner1
    pre = np.empty((K_b, N_b, b_n, b_k), dtype=np.float32)
    out = np.empty_like(pre)
    bias4 = bias.reshape(K_b, 1, b_k)
    act = layer.activation

    def bias_and_activate(i_ids: np.ndarray, j_ids: np.ndarray, acc: np.ndarray) -> None:
        acc += bias4[i_ids]
        pre[i_ids, j_ids] = acc
        acc[...] = apply_activation(act, acc)

    start = time.perf_counter()
    _grid_gemm(W4, X.data.transpose(1, 0, 2, 3), out, pool, cache_tile, bias_and_activate)
    _log_rate("fc_forward", 2.0 * X.dense_shape[0] * layer.C * layer.K, start)
    return BlockedTensor4(out, BlockRole.ACTIVATION), FCCache(X, pre, out)


def activation_backward(layer: FCLayer, dY: BlockedTensor4, cache: FCCache) -> np.ndarray:
    """Gradient with respect to the pre-activation, blocked like the output."""
    dy = dY.data
    if layer.activation is Activation.RELU:
        return np.where(cache.pre > 0, dy, np.float32(0.0)).astype(np.float32)
    if layer.activation is Activation.SIGMOID:
        s = cache.out
        return (dy * s * (np.float32(1.0) - s)).astype(np.float32)
    return dy


def fc_backward_data(
    layer: FCLayer,
    dY: BlockedTensor4,
    cache: Optional[FCCache] = None,
    pool: Optional[WorkerPool] = None,
    cache_tile: Optional[int] = None,
    bf16: bool = False,
) -> BlockedTensor4:
    """
    ``dX = W^T dZ`` where ``dZ`` is ``dY`` through the activation derivative.

    Without a cache ``dY`` is taken to already be ``dZ``.
    """
    pool = pool or get_pool(1)
    dZ = activation_backward(layer, dY, cache) if cache is not None else dY.data
    if dZ.shape[0] != layer.weight.outer1 or dZ.shape[3] != layer.b_k:
        raise ShapeError(f"gradient blocks {dZ.shape} do not fit layer K={layer.K}")
    W4 = bf16_truncate(layer.weight.data) if bf16 else layer.weight.data
    C_b, b_c = layer.weight.outer2, layer.b_c
    N_b, b_n = dZ.shape[1], dZ.shape[2]
    dX = np.empty((C_b, N_b, b_n, b_c), dtype=np.float32)

    start = time.perf_counter()
    _grid_gemm(W4.transpose(1, 0, 3, 2), dZ.transpose(1, 0, 2, 3), dX, pool, cache_tile)
    _log_rate("fc_backward_data", 2.0 * N_b * b_n * layer.C * layer.K, start)
    return BlockedTensor4(dX, BlockRole.ACTIVATION)


def fc_backward_weights(
    layer: FCLayer,
    X: BlockedTensor4,
    dY: BlockedTensor4,
    cache: Optional[FCCache] = None,
    pool: Optional[WorkerPool] = None,
    cache_tile: Optional[int] = None,
) -> Tuple[BlockedTensor4, DenseTensor]:
    """``dW = dZ^T X`` in the weight layout and ``db`` = sum of ``dZ`` over samples."""
    _check_activation_input(layer, X)
    pool = pool or get_pool(1)
    dZ = activation_backward(layer, dY, cache) if cache is not None else dY.data
    if dZ.shape[1:3] != X.data.shape[1:3]:
        raise ShapeError(f"gradient blocks {dZ.shape} do not match input {X.data.shape}")
    dW = np.empty_like(layer.weight.data)

    start = time.perf_counter()
    _grid_gemm(dZ, X.data.transpose(0, 1, 3, 2), dW, pool, cache_tile)
    _log_rate("fc_backward_weights", 2.0 * X.dense_shape[0] * layer.C * layer.K, start)
    db = dZ.sum(axis=(1, 2), dtype=np.float32).reshape(layer.K)
    return BlockedTensor4(dW, BlockRole.WEIGHT), db


@dataclass
class LayerGrads:
    dW: BlockedTensor4
    db: DenseTensor

    def arrays(self) -> List[np.ndarray]:
        return [self.dW.data, self.db]


@dataclass
class MLP:
    """Chain of FC layers; activations stay blocked between layers."""
    layers: List[FCLayer]
    kernel: KernelConfig = field(default_factory=KernelConfig)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("an MLP needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.K != nxt.C:
                raise ShapeError(f"layer widths do not chain: {prev.K} -> {nxt.C}")

    @property
    def sizes(self) -> List[int]:
        return [self.layers[0].C] + [layer.K for layer in self.layers]

    def parameters(self) -> List[np.ndarray]:
        return [p for layer in self.layers for p in layer.parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


@dataclass
class MLPState:
    """Per-layer caches from one ``mlp_forward`` call."""
    caches: List[FCCache]
    b_n: int


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    sigmoid_last: bool = False,
    kernel: Optional[KernelConfig] = None,
) -> MLP:
    """
    Build an MLP with the usual DLRM initialisation: weights from
    ``N(0, sqrt(2 / (in + out)))`` and biases from ``N(0, sqrt(1 / out))``.
    """
    kernel = kernel or KernelConfig()
    layers = []
    for idx, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        W = rng.normal(0.0, np.sqrt(2.0 / (n_in + n_out)), size=(n_out, n_in)).astype(np.float32)
        b = rng.normal(0.0, np.sqrt(1.0 / n_out), size=n_out).astype(np.float32)
        last = idx == len(sizes) - 2
        act = Activation.SIGMOID if (sigmoid_last and last) else Activation.RELU
        layers.append(FCLayer.from_dense(W, b, act, kernel))
    return MLP(layers, kernel)


def _reblock(X: BlockedTensor4, b_n: int, b_c: int) -> BlockedTensor4:
    if X.inner1 == b_n and X.inner2 == b_c:
        return X
    return to_blocked(from_blocked(X), BlockRole.ACTIVATION, b_n, b_c)


def mlp_forward(
    mlp: MLP,
    X: DenseTensor,
    pool: Optional[WorkerPool] = None,
    bf16: bool = False,
) -> Tuple[DenseTensor, MLPState]:
    """Dense ``[N][C]`` in, dense ``[N][K]`` out; ``bf16`` reads truncated parameters."""
    X = as_dense(X, ndim=2)
    if X.shape[1] != mlp.layers[0].C:
        raise ShapeError(f"input width {X.shape[1]} != MLP input {mlp.layers[0].C}")
    b_n = pick_block(X.shape[0], mlp.kernel.block_n)
    h = to_blocked(X, BlockRole.ACTIVATION, b_n, mlp.layers[0].b_c)
    caches = []
    for idx, layer in enumerate(mlp.layers):
        h = _reblock(h, b_n, layer.b_c)
        h, cache = fc_forward(layer, h, pool, mlp.kernel.cache_tile, bf16=bf16)
        caches.append(cache)
    return from_blocked(h), MLPState(caches, b_n)


def mlp_backward(
    mlp: MLP,
    d_out: DenseTensor,
    state: MLPState,
    pool: Optional[WorkerPool] = None,
    bf16: bool = False,
    on_layer_grads: Optional[Callable[[int, LayerGrads], None]] = None,
) -> Tuple[DenseTensor, List[LayerGrads]]:
    """
    Backward through all layers, last to first.

    Returns ``dInput`` and per-layer gradients in forward order.
    ``on_layer_grads(idx, grads)`` fires as soon as a layer's weight
    gradients are ready, which lets callers start communication early.
    """
    d_out = as_dense(d_out, ndim=2)
    last = mlp.layers[-1]
    dy = to_blocked(d_out, BlockRole.ACTIVATION, state.b_n, last.b_k)
    grads: List[Optional[LayerGrads]] = [None] * len(mlp.layers)
    tile = mlp.kernel.cache_tile
    for idx in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[idx]
        cache = state.caches[idx]
        dy = _reblock(dy, state.b_n, layer.b_k)
        dZ = BlockedTensor4(activation_backward(layer, dy, cache), BlockRole.ACTIVATION)
        dW, db = fc_backward_weights(layer, cache.x, dZ, pool=pool, cache_tile=tile)
        grads[idx] = LayerGrads(dW, db)
        if on_layer_grads is not None:
            on_layer_grads(idx, grads[idx])
        dy = fc_backward_data(layer, dZ, pool=pool, cache_tile=tile, bf16=bf16)
    return from_blocked(dy), grads

