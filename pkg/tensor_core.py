"""
Плотные тензорные примитивы поверх numpy: свертка (прямой и обратный проход),
пулинг, batch norm, softmax с температурой, ячейка GRU, аффинное отображение.

Раскладка 4-D тензоров везде [batch, channel, frequency, time], row-major.
Рабочий тип float32; float64 используется только для проверки градиентов.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from loguru import logger
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, softmax

from errors import ShapeError, ValidationError

AXES_4D = ("batch", "channel", "frequency", "time")


def _check_rank(name: str, x: np.ndarray, rank: int):
    if x.ndim != rank:
        raise ShapeError([f"{name}: ожидается {rank}-мерный тензор, получено {x.ndim} осей {x.shape}"])
    if any(n < 1 for n in x.shape):
        raise ShapeError([f"{name}: все размерности должны быть >= 1, получено {x.shape}"])


def _check_axis(name: str, axis: str, got: int, expected: int):
    if got != expected:
        raise ShapeError([f"{name}: ось {axis} = {got}, ожидается {expected}"])


def conv_windows(x: np.ndarray, kh: int, kw: int, ph: int, pw: int) -> np.ndarray:
    """Окна свертки [B, C, F', T', kh, kw] по дополненному нулями входу"""
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))


def same_padding(kernel: np.ndarray) -> Tuple[int, int]:
    return (kernel.shape[-2] - 1) // 2, (kernel.shape[-1] - 1) // 2


def conv2d_forward(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray,
    padding: Tuple[int, int] | None = None,
) -> np.ndarray:
    """
    Двумерная свертка (кросс-корреляция) с шагом 1 и нулевым дополнением.

    Args:
        x: Вход [B, Cin, F, T]
        kernel: Ядро [Cout, Cin, kh, kw], kh и kw нечетные
        bias: Смещение [Cout]
        padding: (ph, pw); по умолчанию same-padding

    Returns:
        Выход [B, Cout, F + 2ph - kh + 1, T + 2pw - kw + 1]
    """
    _check_rank("input", x, 4)
    _check_rank("kernel", kernel, 4)
    cout, cin, kh, kw = kernel.shape
    _check_axis("input", "channel", x.shape[1], cin)
    _check_axis("bias", "channel", bias.shape[0], cout)
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError([f"kernel: размеры окна должны быть нечетными, получено {kh}x{kw}"])
    ph, pw = padding if padding is not None else same_padding(kernel)
    if x.shape[2] + 2 * ph < kh or x.shape[3] + 2 * pw < kw:
        raise ShapeError([f"input: окно {kh}x{kw} больше дополненного входа {x.shape[2:]}"])

    win = conv_windows(x, kh, kw, ph, pw)
    out = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3]))  # [B, F', T', Cout]
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += bias[None, :, None, None]
    return out.astype(np.result_type(x, kernel), copy=False)


def conv2d_backward(
    x: np.ndarray,
    kernel: np.ndarray,
    grad_out: np.ndarray,
    padding: Tuple[int, int] | None = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Аналитические градиенты conv2d_forward.

    Returns:
        (grad_input, grad_kernel, grad_bias)
    """
    _check_rank("input", x, 4)
    _check_rank("kernel", kernel, 4)
    _check_rank("grad_out", grad_out, 4)
    cout, cin, kh, kw = kernel.shape
    _check_axis("input", "channel", x.shape[1], cin)
    ph, pw = padding if padding is not None else same_padding(kernel)
    out_f = x.shape[2] + 2 * ph - kh + 1
    out_t = x.shape[3] + 2 * pw - kw + 1
    for axis, got, expected in zip(AXES_4D, grad_out.shape, (x.shape[0], cout, out_f, out_t)):
        _check_axis("grad_out", axis, got, expected)

    grad_bias = grad_out.sum(axis=(0, 2, 3))

    win = conv_windows(x, kh, kw, ph, pw)
    grad_kernel = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))  # [Cout, Cin, kh, kw]

    # Полная корреляция градиента с перевернутым ядром дает градиент дополненного входа
    gwin = conv_windows(grad_out, kh, kw, kh - 1, kw - 1)  # [B, Cout, F+2ph, T+2pw, kh, kw]
    flipped = kernel[:, :, ::-1, ::-1]
    grad_padded = np.tensordot(gwin, flipped, axes=([1, 4, 5], [0, 2, 3]))  # [B, Fp, Tp, Cin]
    grad_padded = grad_padded.transpose(0, 3, 1, 2)
    grad_input = np.ascontiguousarray(grad_padded[:, :, ph:ph + x.shape[2], pw:pw + x.shape[3]])

    return grad_input, grad_kernel, grad_bias


def avg_pool2d(x: np.ndarray, window: Tuple[int, int]) -> np.ndarray:
    """
    Усредняющий пулинг без перекрытия, окно (pf, pt) по (частота, время).
    Хвостовые кадры, не заполняющие окно, отбрасываются.
    """
    _check_rank("input", x, 4)
    pf, pt = window
    b, c, f, t = x.shape
    if pf > f or pt > t:
        raise ShapeError([f"avg_pool2d: окно {window} больше входа ({f}, {t})"])

    nf, nt = f // pf, t // pt
    dropped_f, dropped_t = f - nf * pf, t - nt * pt
    if dropped_f or dropped_t:
        logger.debug(f"avg_pool2d: отброшено {dropped_f} частотных бинов и {dropped_t} кадров")

    x = x[:, :, :nf * pf, :nt * pt]
    return x.reshape(b, c, nf, pf, nt, pt).mean(axis=(3, 5), dtype=x.dtype)


def batch_norm_inference(
    x: np.ndarray,
    mean: np.ndarray,
    var: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = 1e-5,
) -> np.ndarray:
    """Batch norm в режиме инференса по оси каналов (ось 1) с накопленной статистикой"""
    channels = x.shape[1]
    for name, v in (("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)):
        _check_axis(name, "channel", v.shape[0], channels)
    if np.any(var < 0):
        raise ValidationError(["batch_norm: дисперсия не может быть отрицательной"])

    shape = (1, channels) + (1,) * (x.ndim - 2)
    scale = (gamma / np.sqrt(var + eps)).reshape(shape)
    return ((x - mean.reshape(shape)) * scale + beta.reshape(shape)).astype(x.dtype, copy=False)


def softmax_tempered(logits: np.ndarray, tau: float, axis: int = -1) -> np.ndarray:
    """softmax(logits / tau) со стабилизацией вычитанием максимума"""
    if tau <= 0:
        raise ValidationError([f"softmax: температура ({tau}) должна быть больше нуля"])
    logits = np.asarray(logits)
    return softmax(logits / tau, axis=axis).astype(logits.dtype, copy=False)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """W x + b по последней оси x; W имеет форму [out, in]"""
    if w.ndim != 2:
        raise ShapeError([f"affine: матрица весов должна быть 2-мерной, получено {w.shape}"])
    _check_axis("affine", "in", x.shape[-1], w.shape[1])
    _check_axis("affine", "out", b.shape[0], w.shape[0])
    return x @ w.T + b


@dataclass
class GruParams:
    """Параметры одной ячейки GRU; блоки весов в порядке (z, r, n)"""
    w_x: np.ndarray  # [3H, E]
    w_h: np.ndarray  # [3H, H]
    b_x: np.ndarray  # [3H] = (b_z, b_r, b_in)
    b_hn: np.ndarray  # [H]

    @property
    def hidden(self) -> int:
        return self.w_h.shape[1]


def gru_cell_forward(x: np.ndarray, h_prev: np.ndarray, params: GruParams) -> np.ndarray:
    """
    Один шаг GRU:
        z = σ(W_z x + U_z h + b_z)
        r = σ(W_r x + U_r h + b_r)
        n = tanh(W_n x + r ⊙ (U_n h + b_hn) + b_in)
        h' = (1 − z) ⊙ n + z ⊙ h

    x может быть вектором [E] или пакетом [B, E].
    """
    hidden = params.hidden
    _check_axis("gru", "input", x.shape[-1], params.w_x.shape[1])
    _check_axis("gru", "hidden", h_prev.shape[-1], hidden)
    _check_axis("gru", "gates", params.w_x.shape[0], 3 * hidden)

    gx = x @ params.w_x.T + params.b_x
    gh = h_prev @ params.w_h.T
    z = expit(gx[..., :hidden] + gh[..., :hidden])
    r = expit(gx[..., hidden:2 * hidden] + gh[..., hidden:2 * hidden])
    n = np.tanh(gx[..., 2 * hidden:] + r * (gh[..., 2 * hidden:] + params.b_hn))
    return (1 - z) * n + z * h_prev
