"""
Частотно-динамическая свертка: ядро в каждом частотном бине - взвешенная
вниманием смесь K базисных ядер 3x3.

Сеть внимания: среднее по времени -> affine Cin->Cin/r в каждом бине -> relu ->
affine Cin/r->K -> softmax с температурой по K.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

import numpy as np
from loguru import logger

from errors import GradCheckError, ShapeError
from models import AttentionMap
from tensor_core import (
    affine,
    conv2d_backward,
    conv2d_forward,
    conv_windows,
    relu,
    softmax_tempered,
)

KERNEL_SIZE = 3


@dataclass
class FdyConvLayer:
    basis_kernels: np.ndarray  # [K, Cout, Cin, 3, 3]
    basis_bias: np.ndarray  # [K, Cout]
    squeeze_w: np.ndarray  # [H, Cin]
    squeeze_b: np.ndarray  # [H]
    excite_w: np.ndarray  # [K, H]
    excite_b: np.ndarray  # [K]
    temperature: float = 45.0

    @property
    def n_basis(self) -> int:
        return self.basis_kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.basis_kernels.shape[2]

    @property
    def out_channels(self) -> int:
        return self.basis_kernels.shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "temperature"}

    def astype(self, dtype) -> FdyConvLayer:
        params = {k: v.astype(dtype) for k, v in self.parameters().items()}
        return FdyConvLayer(temperature=self.temperature, **params)

    def stacked_kernel(self) -> tuple[np.ndarray, np.ndarray]:
        """Базисные ядра как одна свертка с K * Cout выходными каналами"""
        k, cout, cin, kh, kw = self.basis_kernels.shape
        return self.basis_kernels.reshape(k * cout, cin, kh, kw), self.basis_bias.reshape(k * cout)


@dataclass
class FdyGradients:
    input: np.ndarray
    basis_kernels: np.ndarray
    basis_bias: np.ndarray
    squeeze_w: np.ndarray
    squeeze_b: np.ndarray
    excite_w: np.ndarray
    excite_b: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def squeeze_width(in_channels: int, ratio: int) -> int:
    return max(1, in_channels // ratio)


def init_fdy_layer(
    rng: np.random.Generator,
    in_channels: int,
    out_channels: int,
    n_basis: int = 4,
    temperature: float = 45.0,
    squeeze_ratio: int = 4,
    random_attention: bool = False,
    dtype=np.float32,
) -> FdyConvLayer:
    """
    Случайная инициализация слоя.

    Базисные ядра ~ U(±sqrt(1/(Cin*9))). Веса excite нулевые, поэтому внимание
    стартует равномерным; random_attention=True делает их случайными (для проверки градиентов).
    """
    bound = np.sqrt(1.0 / (in_channels * KERNEL_SIZE * KERNEL_SIZE))
    hidden = squeeze_width(in_channels, squeeze_ratio)
    shape = (n_basis, out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE)

    kernels = rng.uniform(-bound, bound, size=shape)
    bias = rng.uniform(-bound, bound, size=(n_basis, out_channels))
    sq_bound = np.sqrt(1.0 / in_channels)
    squeeze_w = rng.uniform(-sq_bound, sq_bound, size=(hidden, in_channels))
    squeeze_b = np.zeros(hidden)
    if random_attention:
        squeeze_b = rng.uniform(-sq_bound, sq_bound, size=hidden)
        excite_w = rng.uniform(-1.0, 1.0, size=(n_basis, hidden))
        excite_b = rng.uniform(-1.0, 1.0, size=n_basis)
    else:
        excite_w = np.zeros((n_basis, hidden))
        excite_b = np.zeros(n_basis)

    return FdyConvLayer(
        basis_kernels=kernels.astype(dtype),
        basis_bias=bias.astype(dtype),
        squeeze_w=squeeze_w.astype(dtype),
        squeeze_b=squeeze_b.astype(dtype),
        excite_w=excite_w.astype(dtype),
        excite_b=excite_b.astype(dtype),
        temperature=temperature,
    )


def _attention(x: np.ndarray, layer: FdyConvLayer):
    """Промежуточные значения сети внимания; att имеет форму [B, F, K]"""
    if x.ndim != 4:
        raise ShapeError([f"fdy: ожидается вход [B, Cin, F, T], получено {x.shape}"])
    if x.shape[1] != layer.in_channels:
        raise ShapeError([f"fdy: ось channel = {x.shape[1]}, ожидается {layer.in_channels}"])

    pooled = x.mean(axis=3).transpose(0, 2, 1)  # [B, F, Cin]
    pre = affine(pooled, layer.squeeze_w, layer.squeeze_b)
    hidden = relu(pre)
    logits = affine(hidden, layer.excite_w, layer.excite_b)
    att = softmax_tempered(logits, layer.temperature, axis=-1)
    return pooled, pre, hidden, att


def frequency_attention(x: np.ndarray, layer: FdyConvLayer) -> AttentionMap:
    """Веса смеси базисных ядер для каждого (пример, частотный бин): [B, K, F]"""
    *_, att = _attention(x, layer)
    return AttentionMap(values=np.ascontiguousarray(att.transpose(0, 2, 1)))


def _basis_outputs(x: np.ndarray, layer: FdyConvLayer) -> np.ndarray:
    """Свертки входа со всеми базисными ядрами: [B, K, Cout, F, T]"""
    kernel, bias = layer.stacked_kernel()
    y = conv2d_forward(x, kernel, bias)
    b, _, f, t = y.shape
    return y.reshape(b, layer.n_basis, layer.out_channels, f, t)


def fdy_conv_forward(x: np.ndarray, layer: FdyConvLayer) -> np.ndarray:
    """
    out[b, :, f, :] = sum_k att[b, k, f] * conv_k(x)[b, :, f, :]

    Returns:
        [B, Cout, F, T]
    """
    att = frequency_attention(x, layer).values
    y = _basis_outputs(x, layer)
    return np.einsum("bkcft,bkf->bcft", y, att).astype(x.dtype, copy=False)


def fdy_conv_forward_mixed_kernels(x: np.ndarray, layer: FdyConvLayer) -> np.ndarray:
    """
    Эквивалентная форма: в каждом бине (b, f) свертка смешанным ядром
    W(b, f) = sum_k att[b, k, f] * W_k и смешанным смещением.
    """
    att = frequency_attention(x, layer).values
    kernels = np.einsum("bkf,kocij->bfocij", att, layer.basis_kernels)
    bias = np.einsum("bkf,ko->bof", att, layer.basis_bias)
    pad = (KERNEL_SIZE - 1) // 2
    win = conv_windows(x, KERNEL_SIZE, KERNEL_SIZE, pad, pad)  # [B, Cin, F, T, 3, 3]
    out = np.einsum("bcftij,bfocij->boft", win, kernels, optimize=True)
    return (out + bias[..., None]).astype(x.dtype, copy=False)


def fdy_conv_backward(x: np.ndarray, layer: FdyConvLayer, grad_out: np.ndarray) -> FdyGradients:
    """
    Аналитические градиенты fdy_conv_forward по входу и всем параметрам слоя.

    Путь свертки: градиенты базисных ядер взвешены вниманием.
    Путь внимания: softmax (с множителем 1/tau) -> excite -> relu -> squeeze -> среднее по времени.
    """
    b, _, f, t = x.shape
    k, cout = layer.n_basis, layer.out_channels
    if grad_out.shape != (b, cout, f, t):
        raise ShapeError([f"fdy: grad_out {grad_out.shape}, ожидается {(b, cout, f, t)}"])

    pooled, pre, hidden, att = _attention(x, layer)
    y = _basis_outputs(x, layer)

    grad_att = np.einsum("bcft,bkcft->bfk", grad_out, y)

    kernel, _ = layer.stacked_kernel()
    grad_y = np.einsum("bfk,bcft->bkcft", att, grad_out).reshape(b, k * cout, f, t)
    grad_x_conv, grad_kernel, grad_bias = conv2d_backward(x, kernel, grad_y)

    dot = (grad_att * att).sum(axis=-1, keepdims=True)
    grad_logits = att * (grad_att - dot) / layer.temperature

    grad_excite_w = np.einsum("bfk,bfh->kh", grad_logits, hidden)
    grad_excite_b = grad_logits.sum(axis=(0, 1))
    grad_pre = (grad_logits @ layer.excite_w) * (pre > 0)

    grad_squeeze_w = np.einsum("bfh,bfc->hc", grad_pre, pooled)
    grad_squeeze_b = grad_pre.sum(axis=(0, 1))
    grad_pooled = grad_pre @ layer.squeeze_w  # [B, F, Cin]

    grad_x_att = grad_pooled.transpose(0, 2, 1)[..., None] / t
    return FdyGradients(
        input=grad_x_conv + grad_x_att,
        basis_kernels=grad_kernel.reshape(layer.basis_kernels.shape),
        basis_bias=grad_bias.reshape(k, cout),
        squeeze_w=grad_squeeze_w,
        squeeze_b=grad_squeeze_b,
        excite_w=grad_excite_w,
        excite_b=grad_excite_b,
    )


# ---- Проверка градиентов конечными разностями ----
LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def summary(self) -> str:
        groups = ", ".join(f"{name}={err:.2e}" for name, err in self.max_rel_error.items())
        status = "OK" if self.passed else "FAIL"
        return f"{status} (tol={self.tolerance:g}): {groups}"


def sum_of_squares(out: np.ndarray) -> tuple[float, np.ndarray]:
    return float(np.sum(out * out)), 2.0 * out


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def finite_diff_gradcheck(
    layer: FdyConvLayer,
    x: np.ndarray,
    loss: LossFn | None = None,
    h: float = 1e-4,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """
    Сравнить аналитические градиенты с центральными разностями (в float64).

    Args:
        layer: Проверяемый слой
        x: Вход [B, Cin, F, T]
        loss: Скалярная функция выхода, возвращает (значение, dL/dout);
            по умолчанию сумма квадратов выходов
        h: Шаг конечной разности
        tolerance: Порог максимальной относительной ошибки

    Returns:
        Отчет с максимальной относительной ошибкой по каждой группе параметров
    """
    layer64 = layer.astype(np.float64)
    x64 = np.array(x, dtype=np.float64)

    out = fdy_conv_forward(x64, layer64)
    _, grad_out = (loss or sum_of_squares)(out)
    analytic = fdy_conv_backward(x64, layer64, grad_out).as_dict()

    targets = {"input": x64, **layer64.parameters()}
    report = {}
    for name, param in targets.items():
        numeric = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            orig = param[idx]
            param[idx] = orig + h
            plus = fdy_conv_forward(x64, layer64)
            param[idx] = orig - h
            minus = fdy_conv_forward(x64, layer64)
            param[idx] = orig
            if loss is None:
                # Разность сумм квадратов без вычитания больших чисел
                numeric[idx] = np.sum((plus - minus) * (plus + minus)) / (2 * h)
            else:
                numeric[idx] = (loss(plus)[0] - loss(minus)[0]) / (2 * h)

        for label, grad in (("analytic", analytic[name]), ("numeric", numeric)):
            bad = np.argwhere(~np.isfinite(grad))
            if len(bad):
                raise GradCheckError([f"{label} градиент {name}{tuple(bad[0])} не конечен"])

        err = _relative_error(analytic[name], numeric)
        report[name] = float(err.max()) if err.size else 0.0

    return GradCheckReport(max_rel_error=report, tolerance=tolerance)


def run_gradcheck_suite(
    trials: int = 100,
    tolerance: float = 1e-4,
    seed: int = 0,
    h: float = 1e-4,
    n_basis: int = 4,
    temperature: float = 45.0,
) -> list[GradCheckReport]:
    """Серия проверок на случайных малых экземплярах (B<=2, Cin/Cout<=4, F/T<=8)"""
    rng = np.random.default_rng(seed)
    reports = []
    for trial in range(trials):
        b = int(rng.integers(1, 2, endpoint=True))
        cin, cout = (int(v) for v in rng.integers(1, 4, size=2, endpoint=True))
        f, t = (int(v) for v in rng.integers(2, 8, size=2, endpoint=True))
        layer = init_fdy_layer(
            rng, cin, cout, n_basis=n_basis, temperature=temperature,
            random_attention=True, dtype=np.float64,
        )
        x = rng.standard_normal((b, cin, f, t))
        report = finite_diff_gradcheck(layer, x, h=h, tolerance=tolerance)
        logger.debug(f"gradcheck #{trial}: B={b} Cin={cin} Cout={cout} F={f} T={t} -> {report.summary()}")
        reports.append(report)
    return reports
