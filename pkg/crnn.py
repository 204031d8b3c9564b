"""
Прямой проход CRNN: 7 CNN-блоков (первый - обычная свертка, остальные - FDY),
2 слоя BiGRU, покадровая (strong) и клиповая (weak) головы.

Имена тензоров в ModelWeights:
    b1.conv.w/b                     обычная свертка первого блока
    b{k}.fdy.w/b, .sq.w/b, .ex.w/b  FDY-свертка блоков 2..7
    b{k}.bn.mean/var/gamma/beta     batch norm
    b{k}.cg.w/b                     context gating
    gru{j}.{fwd|bwd}.w_x/w_h/b_x/b_hn
    strong.w/b, weak.w/b
"""
import numpy as np
from loguru import logger
from scipy.special import softmax

from errors import ShapeError, ValidationError
from fdy_conv import FdyConvLayer, fdy_conv_forward, squeeze_width
from models import FramePredictions, FrontendConfig, ModelConfig, ModelWeights
from tensor_core import (
    GruParams,
    affine,
    avg_pool2d,
    batch_norm_inference,
    conv2d_forward,
    gru_cell_forward,
    sigmoid,
)
from validators import VALID_ATTENTION_DIMS, ConfigValidator

ATTENTION_CLAMP = (1e-7, 1.0)
DIRECTIONS = ("fwd", "bwd")


def weight_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ожидаемые имена и формы всех тензоров модели"""
    shapes = {}
    cin = 1
    for k, cout in enumerate(config.channels, start=1):
        if k == 1:
            shapes[f"b{k}.conv.w"] = (cout, cin, 3, 3)
            shapes[f"b{k}.conv.b"] = (cout,)
        else:
            hidden = squeeze_width(cin, config.squeeze_ratio)
            shapes[f"b{k}.fdy.w"] = (config.n_basis, cout, cin, 3, 3)
            shapes[f"b{k}.fdy.b"] = (config.n_basis, cout)
            shapes[f"b{k}.sq.w"] = (hidden, cin)
            shapes[f"b{k}.sq.b"] = (hidden,)
            shapes[f"b{k}.ex.w"] = (config.n_basis, hidden)
            shapes[f"b{k}.ex.b"] = (config.n_basis,)
        for name in ("mean", "var", "gamma", "beta"):
            shapes[f"b{k}.bn.{name}"] = (cout,)
        shapes[f"b{k}.cg.w"] = (cout, cout)
        shapes[f"b{k}.cg.b"] = (cout,)
        cin = cout

    hidden = config.gru_hidden
    feat = config.channels[-1]
    for j in range(config.gru_layers):
        for d in DIRECTIONS:
            shapes[f"gru{j}.{d}.w_x"] = (3 * hidden, feat)
            shapes[f"gru{j}.{d}.w_h"] = (3 * hidden, hidden)
            shapes[f"gru{j}.{d}.b_x"] = (3 * hidden,)
            shapes[f"gru{j}.{d}.b_hn"] = (hidden,)
        feat = 2 * hidden

    for head in ("strong", "weak"):
        shapes[f"{head}.w"] = (config.n_classes, feat)
        shapes[f"{head}.b"] = (config.n_classes,)
    return shapes


def check_weights(weights: ModelWeights, config: ModelConfig):
    """Проверить набор имен и формы; ошибка называет блок"""
    expected = weight_shapes(config)
    errors = []
    missing = sorted(set(expected) - set(weights))
    extra = sorted(set(weights) - set(expected))
    if missing:
        errors.append(f"отсутствуют тензоры: {', '.join(missing)}")
    if extra:
        errors.append(f"лишние тензоры: {', '.join(extra)}")
    for name, shape in expected.items():
        if name in weights and tuple(weights[name].shape) != shape:
            block = name.split(".")[0]
            errors.append(f"блок {block}: {name} имеет форму {tuple(weights[name].shape)}, ожидается {shape}")
    if errors:
        raise ShapeError(errors)


def init_weights(config: ModelConfig, seed: int = 0, zero: bool = False) -> ModelWeights:
    """
    Детерминированная инициализация всех весов из зерна.

    Args:
        config: Конфигурация модели
        seed: Зерно генератора PCG64
        zero: Все веса нулевые, batch norm тождественный (mean 0, var 1, gamma 1, beta 0)

    Returns:
        ModelWeights с тензорами float32
    """
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in weight_shapes(config).items():
        if name.endswith((".bn.var", ".bn.gamma")):
            value = np.ones(shape)
        elif name.endswith((".bn.mean", ".bn.beta")) or zero:
            value = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            if name.endswith(".fdy.w"):
                fan_in = int(np.prod(shape[2:]))
            bound = np.sqrt(1.0 / max(fan_in, 1))
            value = rng.uniform(-bound, bound, size=shape)
        weights[name] = value.astype(np.float32)
    return weights


def fdy_layer_from_weights(weights: ModelWeights, block: int, config: ModelConfig) -> FdyConvLayer:
    p = f"b{block}"
    return FdyConvLayer(
        basis_kernels=weights[f"{p}.fdy.w"],
        basis_bias=weights[f"{p}.fdy.b"],
        squeeze_w=weights[f"{p}.sq.w"],
        squeeze_b=weights[f"{p}.sq.b"],
        excite_w=weights[f"{p}.ex.w"],
        excite_b=weights[f"{p}.ex.b"],
        temperature=config.temperature,
    )


def context_gating(u: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = u * sigmoid(G u + g), G действует поточечно по каналам (ось 1)"""
    gate = sigmoid(affine(np.moveaxis(u, 1, -1), w, b))
    return (u * np.moveaxis(gate, -1, 1)).astype(u.dtype, copy=False)


def cnn_block_forward(x: np.ndarray, weights: ModelWeights, block: int, config: ModelConfig) -> np.ndarray:
    """conv -> batch norm -> context gating -> dropout (тождество) -> avg pool"""
    p = f"b{block}"
    if block == 1:
        y = conv2d_forward(x, weights[f"{p}.conv.w"], weights[f"{p}.conv.b"])
    else:
        y = fdy_conv_forward(x, fdy_layer_from_weights(weights, block, config))
    y = batch_norm_inference(
        y, weights[f"{p}.bn.mean"], weights[f"{p}.bn.var"], weights[f"{p}.bn.gamma"], weights[f"{p}.bn.beta"]
    )
    y = context_gating(y, weights[f"{p}.cg.w"], weights[f"{p}.cg.b"])
    pool_t, pool_f = config.pooling[block - 1]
    return avg_pool2d(y, (pool_f, pool_t))


def cnn_stack_forward(x: np.ndarray, weights: ModelWeights, config: ModelConfig) -> np.ndarray:
    """
    Args:
        x: Нормализованный лог-мел пакет [B, 1, n_mels, T]

    Returns:
        [B, channels[-1], 1, T / time_pool]
    """
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != config.n_mels:
        raise ShapeError([f"cnn: ожидается вход [B, 1, {config.n_mels}, T], получено {x.shape}"])

    for block in range(1, len(config.channels) + 1):
        try:
            x = cnn_block_forward(x, weights, block, config)
        except ShapeError as e:
            raise ShapeError([f"блок b{block}: {msg}" for msg in e.errors])
        logger.debug(f"cnn: после блока b{block} форма {x.shape}")
    return x


def gru_params(weights: ModelWeights, layer: int, direction: str) -> GruParams:
    p = f"gru{layer}.{direction}"
    return GruParams(
        w_x=weights[f"{p}.w_x"],
        w_h=weights[f"{p}.w_h"],
        b_x=weights[f"{p}.b_x"],
        b_hn=weights[f"{p}.b_hn"],
    )


def gru_sequence(seq: np.ndarray, params: GruParams, reverse: bool = False) -> np.ndarray:
    """Однонаправленный проход GRU по оси -2 с нулевым начальным состоянием"""
    n_steps = seq.shape[-2]
    h = np.zeros(seq.shape[:-2] + (params.hidden,), dtype=seq.dtype)
    out = np.empty(seq.shape[:-1] + (params.hidden,), dtype=seq.dtype)
    steps = range(n_steps - 1, -1, -1) if reverse else range(n_steps)
    for t in steps:
        h = gru_cell_forward(seq[..., t, :], h, params).astype(seq.dtype, copy=False)
        out[..., t, :] = h
    return out


def bigru_forward(seq: np.ndarray, weights: ModelWeights, n_layers: int = 2) -> np.ndarray:
    """
    Стек двунаправленных GRU.

    Args:
        seq: [T', E] или [B, T', E]

    Returns:
        [..., T', 2H]: конкатенация прямого и обратного проходов
    """
    if seq.shape[-2] < 1:
        raise ShapeError(["bigru: последовательность должна содержать хотя бы один кадр"])
    for layer in range(n_layers):
        fwd = gru_sequence(seq, gru_params(weights, layer, "fwd"))
        bwd = gru_sequence(seq, gru_params(weights, layer, "bwd"), reverse=True)
        seq = np.concatenate([fwd, bwd], axis=-1)
    return seq


def strong_head(features: np.ndarray, weights: ModelWeights) -> np.ndarray:
    """Покадровые вероятности: sigmoid(W f + b)"""
    return sigmoid(affine(features, weights["strong.w"], weights["strong.b"])).astype(features.dtype, copy=False)


def weak_head(strong: np.ndarray, att_logits: np.ndarray, dim: str = "class") -> np.ndarray:
    """
    Клиповые вероятности как взвешенное вниманием среднее по времени.

    Args:
        strong: [T', C]
        att_logits: [T', C]
        dim: Ось softmax внимания: class (по классам в каждом кадре) или time (по кадрам для каждого класса)

    Returns:
        [C]: weak[c] = sum_t strong[t, c] * att[t, c] / sum_t att[t, c]
    """
    if strong.shape != att_logits.shape:
        raise ShapeError([f"weak_head: strong {strong.shape} и att_logits {att_logits.shape} не совпадают"])
    if dim not in VALID_ATTENTION_DIMS:
        raise ValidationError([f"model.attention_dim ({dim}) должно быть одним из {VALID_ATTENTION_DIMS}"])

    axis = -1 if dim == "class" else -2
    att = np.clip(softmax(att_logits, axis=axis), *ATTENTION_CLAMP)
    return ((strong * att).sum(axis=-2) / att.sum(axis=-2)).astype(strong.dtype, copy=False)


def model_forward(
    logmel_batch: np.ndarray,
    weights: ModelWeights,
    config: ModelConfig,
    frontend: FrontendConfig | None = None,
    clip_ids: list[str] | None = None,
) -> list[FramePredictions]:
    """
    Полный проход: CNN -> сжатие частотной оси -> BiGRU -> strong и weak головы.

    Args:
        logmel_batch: [B, n_mels, T] или [B, 1, n_mels, T]
        weights: Веса модели
        config: Конфигурация модели
        frontend: Параметры извлечения признаков (для длительности кадра)
        clip_ids: Идентификаторы клипов пакета

    Returns:
        Список FramePredictions, по одному на элемент пакета
    """
    check_weights(weights, config)
    x = np.asarray(logmel_batch, dtype=np.float32)
    if x.ndim == 3:
        x = x[:, None]

    feats = cnn_stack_forward(x, weights, config)
    if feats.shape[2] != 1:
        raise ShapeError([f"cnn: частотная ось не схлопнулась в 1 (получено {feats.shape[2]})"])
    seq = feats[:, :, 0, :].transpose(0, 2, 1)  # [B, T', C]

    hidden = bigru_forward(seq, weights, config.gru_layers)
    strong = strong_head(hidden, weights)
    att_logits = affine(hidden, weights["weak.w"], weights["weak.b"])

    frame_duration = config.frame_duration_s(frontend)
    clip_ids = clip_ids or [""] * len(strong)
    return [
        FramePredictions(
            strong=strong[i],
            weak=weak_head(strong[i], att_logits[i], config.attention_dim),
            frame_duration_s=frame_duration,
            clip_id=clip_ids[i],
        )
        for i in range(len(strong))
    ]


def mean_teacher_update(teacher: ModelWeights, student: ModelWeights, momentum: float = 0.999) -> ModelWeights:
    """EMA весов: theta_t <- m * theta_t + (1 - m) * theta_s"""
    valid, errors = ConfigValidator.validate_momentum(momentum)
    if not valid:
        raise ValidationError(errors)
    if set(teacher) != set(student):
        diff = sorted(set(teacher) ^ set(student))
        raise ShapeError([f"mean teacher: наборы параметров различаются: {', '.join(diff)}"])

    updated = {}
    for name, t in teacher.items():
        s = student[name]
        if t.shape != s.shape:
            raise ShapeError([f"mean teacher: {name} имеет формы {t.shape} и {s.shape}"])
        updated[name] = (momentum * t + (1 - momentum) * s).astype(t.dtype, copy=False)
    return updated
