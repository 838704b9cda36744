"""Time-delay network over frame features: forward, embeddings, gradients, fine-tuning.

The canonical architecture is five frame-level layers with explicit temporal
context offsets, a mean+std statistics pooling layer, two dense layers and a
softmax head (receptive field 15 frames, 33-dim input).  Everything runs on
plain numpy with a hand-written backward pass so gradients are exact,
training is bit-reproducible under a seed, and per-layer learning-rate
multipliers (freeze or slow the first six layers) behave predictably.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .formats import TDN_MAGIC, FormatError, encode_header_blob, read_header_blob, take, write_atomic

VAR_FLOOR = 1e-10


class ModelError(Exception):
    """Structural problem with a model or its inputs."""


class TrainingError(Exception):
    """Training could not proceed (bad labels, empty data, diverged loss)."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str                 # tdnn | stats_pool | dense | softmax
    in_dim: int
    out_dim: int
    context_offsets: tuple[int, ...] = (0,)
    nonlinearity: bool = True
    dropout: bool = False     # eligible for dropout on its output (dense only)

    def __post_init__(self):
        if self.kind not in ("tdnn", "stats_pool", "dense", "softmax"):
            raise ModelError(f"unknown layer kind {self.kind!r}")
        offs = tuple(self.context_offsets)
        if self.kind == "tdnn":
            if any(b <= a for a, b in zip(offs, offs[1:])):
                raise ModelError(f"context offsets must be strictly increasing, got {offs}")
        object.__setattr__(self, "context_offsets", offs)

    @property
    def span(self) -> int:
        if self.kind != "tdnn":
            return 0
        return self.context_offsets[-1] - self.context_offsets[0]

    @property
    def has_params(self) -> bool:
        return self.kind != "stats_pool"


@dataclass
class TdnnModel:
    input_dim: int
    layers: list[LayerSpec]
    params: list  # per layer: (W, b) ndarray pair, or None for stats_pool
    class_labels: list[str] = field(default_factory=list)
    dtype: type = np.float32

    def __post_init__(self):
        validate_structure(self.input_dim, self.layers)
        if len(self.params) != len(self.layers):
            raise ModelError("params and layers length mismatch")
        for spec, p in zip(self.layers, self.params):
            if not spec.has_params:
                if p is not None:
                    raise ModelError("stats_pool layer must not carry parameters")
                continue
            w, b = p
            if w.shape != (spec.out_dim, spec.in_dim) or b.shape != (spec.out_dim,):
                raise ModelError(
                    f"{spec.kind} parameter shapes {w.shape}/{b.shape} do not match "
                    f"spec {spec.out_dim}x{spec.in_dim}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ModelError("non-finite parameters")

    @property
    def receptive_field(self) -> int:
        return 1 + sum(spec.span for spec in self.layers)

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    def param_layers(self) -> "list[tuple[int, LayerSpec]]":
        """(layer list position, spec) for parameterized layers, in order."""
        return [(i, s) for i, s in enumerate(self.layers) if s.has_params]

    def embedding_ordinals(self) -> "list[int]":
        """1-based parameter-layer ordinals usable as embedding layers.

        These are the dense layers after statistics pooling, excluding the
        softmax head; 6 and 7 (and 8 with an extra layer) for the canonical
        stack.
        """
        pool_pos = next(i for i, s in enumerate(self.layers) if s.kind == "stats_pool")
        out = []
        for ordinal, (pos, spec) in enumerate(self.param_layers(), start=1):
            if pos > pool_pos and spec.kind == "dense":
                out.append(ordinal)
        return out

    def copy(self) -> "TdnnModel":
        params = [None if p is None else (p[0].copy(), p[1].copy()) for p in self.params]
        return TdnnModel(self.input_dim, list(self.layers), params,
                         list(self.class_labels), self.dtype)


@dataclass
class FinetuneConfig:
    lr_initial: float = 1e-3
    lr_final: float = 1e-4
    batch_size: int = 64
    dropout: float = 0.5
    epochs: int = 3
    momentum: float = 0.9
    first_six_lr_multiplier: float = 0.0
    add_layer8: bool = False
    noise_aug: bool = False
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lr_final > self.lr_initial:
            raise ValueError("lr_final must not exceed lr_initial")
        if self.first_six_lr_multiplier < 0:
            raise ValueError("first_six_lr_multiplier must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass
class TrainingLog:
    epoch_losses: list = field(default_factory=list)
    step_lrs: list = field(default_factory=list)
    skipped_utterances: list = field(default_factory=list)
    config: dict = field(default_factory=dict)


@dataclass
class ForwardResult:
    logits: np.ndarray
    activations: list  # post-nonlinearity output of every layer, input first


def validate_structure(input_dim: int, layers: "list[LayerSpec]") -> None:
    if not layers:
        raise ModelError("model needs at least one layer")
    pools = [s for s in layers if s.kind == "stats_pool"]
    if len(pools) != 1:
        raise ModelError(f"model must contain exactly one stats_pool layer, found {len(pools)}")
    prev = input_dim
    seen_pool = False
    for spec in layers:
        if spec.kind == "tdnn":
            if seen_pool:
                raise ModelError("tdnn layers cannot follow stats pooling")
            expected = prev * len(spec.context_offsets)
            if spec.in_dim != expected:
                raise ModelError(
                    f"tdnn in_dim {spec.in_dim} != previous out {prev} x "
                    f"{len(spec.context_offsets)} offsets = {expected}"
                )
        elif spec.kind == "stats_pool":
            seen_pool = True
            if spec.in_dim != prev or spec.out_dim != 2 * prev:
                raise ModelError(
                    f"stats_pool dims {spec.in_dim}->{spec.out_dim} must be {prev}->{2 * prev}"
                )
        else:
            if not seen_pool:
                raise ModelError(f"{spec.kind} layer before stats pooling")
            if spec.in_dim != prev:
                raise ModelError(f"{spec.kind} in_dim {spec.in_dim} != previous out {prev}")
        prev = spec.out_dim
    if layers[-1].kind != "softmax":
        raise ModelError("last layer must be the softmax head")


def table4_layers(num_classes: int, input_dim: int = 33) -> "list[LayerSpec]":
    """The canonical x-vector stack: 512-wide frame layers, 1500 pre-pool, 512 dense."""
    return make_layers(
        input_dim,
        frame=[((-2, -1, 0, 1, 2), 512), ((-2, 0, 2), 512), ((-3, 0, 3), 512),
               ((0,), 512), ((0,), 1500)],
        dense=[512, 512],
        num_classes=num_classes,
    )


def mini_layers(num_classes: int, input_dim: int = 33) -> "list[LayerSpec]":
    """A narrow stack with the same shape and receptive field, for desk-scale runs."""
    return make_layers(
        input_dim,
        frame=[((-2, -1, 0, 1, 2), 48), ((-2, 0, 2), 48), ((-3, 0, 3), 48),
               ((0,), 48), ((0,), 96)],
        dense=[64, 64],
        num_classes=num_classes,
    )


def make_layers(input_dim: int, frame: list, dense: "list[int]", num_classes: int) -> "list[LayerSpec]":
    layers = []
    prev = input_dim
    for offsets, out_dim in frame:
        offsets = tuple(offsets)
        layers.append(LayerSpec("tdnn", prev * len(offsets), out_dim, offsets))
        prev = out_dim
    layers.append(LayerSpec("stats_pool", prev, 2 * prev))
    prev = 2 * prev
    for out_dim in dense:
        layers.append(LayerSpec("dense", prev, out_dim, (0,), True, True))
        prev = out_dim
    layers.append(LayerSpec("softmax", prev, num_classes, (0,), False, False))
    return layers


def init_params(layers: "list[LayerSpec]", seed: int, dtype=np.float32) -> list:
    """Fan-in scaled uniform weights (ReLU gain), zero biases, one child stream per layer."""
    streams = np.random.SeedSequence(seed).spawn(len(layers))
    params = []
    for spec, ss in zip(layers, streams):
        if not spec.has_params:
            params.append(None)
            continue
        rng = np.random.default_rng(ss)
        bound = np.sqrt(6.0 / spec.in_dim)
        w = rng.uniform(-bound, bound, size=(spec.out_dim, spec.in_dim)).astype(dtype)
        b = np.zeros(spec.out_dim, dtype=dtype)
        params.append((w, b))
    return params


def build_model(layers: "list[LayerSpec]", input_dim: int = 33, class_labels=None,
                seed: int = 0, dtype=np.float32) -> TdnnModel:
    return TdnnModel(input_dim, list(layers), init_params(layers, seed, dtype),
                     list(class_labels or []), dtype)


def _ordered_mean(columns: np.ndarray) -> np.ndarray:
    """Column means summed in ascending value order: frame order cannot matter."""
    return np.sort(columns, axis=0).sum(axis=0) / columns.shape[0]


def _pool_stats(frames: np.ndarray):
    acc = frames.astype(np.float64, copy=False)
    mean = _ordered_mean(acc)
    centered = acc - mean
    var = _ordered_mean(centered**2)
    std = np.sqrt(np.maximum(var, VAR_FLOOR))
    return mean, centered, var, std


def stats_pool(frames: np.ndarray) -> np.ndarray:
    """Concatenate per-dimension mean and population std (variance floored).

    Accumulates in double precision with a canonical summation order, so any
    permutation of the frames produces bit-identical output.
    """
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ModelError(f"stats_pool expects (T, D) with T >= 1, got {frames.shape}")
    mean, _, _, std = _pool_stats(frames)
    return np.concatenate([mean, std])


def _splice(x: np.ndarray, offsets: "tuple[int, ...]") -> np.ndarray:
    span = offsets[-1] - offsets[0]
    t_out = x.shape[0] - span
    if t_out < 1:
        raise ModelError(f"input of {x.shape[0]} frames too short for context span {span + 1}")
    cols = [x[o - offsets[0] : o - offsets[0] + t_out] for o in offsets]
    return np.concatenate(cols, axis=1)


def _dropout_mask(shape, rate: float, rng: np.random.Generator, dtype) -> np.ndarray:
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype(1.0 - rate)


def forward(model: TdnnModel, feats: np.ndarray, mode: str = "infer",
            dropout: float = 0.0, seed: int = 0) -> ForwardResult:
    """Run the network over a (T, D) feature matrix.

    Frame layers use valid (unpadded) context, so T must be at least the
    receptive field; infer mode ignores `dropout` entirely.
    """
    if mode not in ("train", "infer"):
        raise ModelError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(feats, dtype=model.dtype)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ModelError(f"expected (T, {model.input_dim}) features, got {x.shape}")
    if x.shape[0] < model.receptive_field:
        raise ModelError(
            f"utterance has {x.shape[0]} frames, below the receptive field "
            f"of {model.receptive_field}"
        )
    use_dropout = mode == "train" and dropout > 0.0
    rng = np.random.default_rng(seed) if use_dropout else None

    activations = [x]
    for spec, p in zip(model.layers, model.params):
        if spec.kind == "tdnn":
            z = _splice(x, spec.context_offsets) @ p[0].T + p[1]
            x = np.maximum(z, 0) if spec.nonlinearity else z
        elif spec.kind == "stats_pool":
            x = stats_pool(x).astype(model.dtype)
        else:
            z = p[0] @ x + p[1]
            x = np.maximum(z, 0) if spec.nonlinearity else z
            if use_dropout and spec.dropout:
                x = x * _dropout_mask(x.shape, dropout, rng, model.dtype)
        activations.append(x)
    return ForwardResult(logits=x, activations=activations)


def extract_embedding(model: TdnnModel, feats: np.ndarray, layer_index: int) -> np.ndarray:
    """Pre-nonlinearity output of the dense layer with the given ordinal (6, 7, 8...).

    Deterministic: dropout is always off here.
    """
    valid = model.embedding_ordinals()
    if layer_index not in valid:
        raise ModelError(
            f"layer {layer_index} is not an embedding layer of this model (valid: {valid})"
        )
    x = np.asarray(feats, dtype=model.dtype)
    if x.shape[0] < model.receptive_field:
        raise ModelError(
            f"utterance has {x.shape[0]} frames, below the receptive field "
            f"of {model.receptive_field}"
        )
    ordinal = 0
    for spec, p in zip(model.layers, model.params):
        if spec.kind == "tdnn":
            z = _splice(x, spec.context_offsets) @ p[0].T + p[1]
            x = np.maximum(z, 0) if spec.nonlinearity else z
        elif spec.kind == "stats_pool":
            x = stats_pool(x).astype(model.dtype)
        else:
            z = p[0] @ x + p[1]
            if ordinal + 1 == layer_index:
                return z
            x = np.maximum(z, 0) if spec.nonlinearity else z
        if spec.has_params:
            ordinal += 1
    raise ModelError(f"layer {layer_index} not reached")  # pragma: no cover


def _loss_and_dlogits(logits: np.ndarray, label: int):
    shifted = logits - np.max(logits)
    log_z = np.log(np.sum(np.exp(shifted)))
    loss = float(log_z - shifted[label])
    probs = np.exp(shifted - log_z)
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    return loss, dlogits


def compute_gradients(model: TdnnModel, batch, dropout: float = 0.0,
                      dropout_seed: int = 0):
    """Mean cross-entropy gradients over a batch of (feats, label) pairs.

    Returns (gradients, mean loss); gradients mirror model.params (None for
    the pooling layer).  Per-sample dropout masks derive from dropout_seed.
    """
    batch = list(batch)
    if not batch:
        raise TrainingError("empty batch")
    n_classes = model.num_classes
    for _, label in batch:
        if not (0 <= int(label) < n_classes):
            raise TrainingError(f"label {label} out of range for {n_classes} classes")

    grads = [None if p is None else (np.zeros_like(p[0]), np.zeros_like(p[1]))
             for p in model.params]
    total_loss = 0.0
    for i, (feats, label) in enumerate(batch):
        loss = _backprop_sample(model, np.asarray(feats, dtype=model.dtype), int(label),
                                grads, dropout, dropout_seed + i)
        total_loss += loss
    scale = model.dtype(1.0 / len(batch))
    for g in grads:
        if g is not None:
            gw, gb = g
            gw *= scale
            gb *= scale
    return grads, total_loss / len(batch)


def _backprop_sample(model, x, label, grads, dropout, seed):
    use_dropout = dropout > 0.0
    rng = np.random.default_rng(seed) if use_dropout else None

    # forward with caches
    caches = []
    for spec, p in zip(model.layers, model.params):
        if spec.kind == "tdnn":
            spliced = _splice(x, spec.context_offsets)
            z = spliced @ p[0].T + p[1]
            out = np.maximum(z, 0) if spec.nonlinearity else z
            caches.append(("tdnn", x.shape[0], spliced, z))
            x = out
        elif spec.kind == "stats_pool":
            t = x.shape[0]
            mean, centered, var, std = _pool_stats(x)
            caches.append(("pool", t, centered, var, std))
            x = np.concatenate([mean, std]).astype(model.dtype)
        else:
            a_in = x
            z = p[0] @ x + p[1]
            out = np.maximum(z, 0) if spec.nonlinearity else z
            mask = None
            if use_dropout and spec.dropout:
                mask = _dropout_mask(out.shape, dropout, rng, model.dtype)
                out = out * mask
            caches.append(("dense", a_in, z, mask))
            x = out

    loss, dx = _loss_and_dlogits(x, label)
    dx = dx.astype(model.dtype)

    for idx in range(len(model.layers) - 1, -1, -1):
        spec, p, cache = model.layers[idx], model.params[idx], caches[idx]
        if cache[0] == "dense":
            _, a_in, z, mask = cache
            if mask is not None:
                dx = dx * mask
            if spec.nonlinearity:
                dx = dx * (z > 0)
            gw, gb = grads[idx]
            gw += np.outer(dx, a_in)
            gb += dx
            dx = p[0].T @ dx
        elif cache[0] == "pool":
            _, t, centered, var, std = cache
            d = centered.shape[1]
            dmean = dx[:d].astype(np.float64)
            dstd = dx[d:].astype(np.float64)
            live = var > VAR_FLOOR
            factor = np.where(live, dstd / (t * std), 0.0)
            dx = (np.broadcast_to(dmean / t, centered.shape) + centered * factor).astype(model.dtype)
        else:
            _, t_in, spliced, z = cache
            if spec.nonlinearity:
                dx = dx * (z > 0)
            gw, gb = grads[idx]
            gw += dx.T @ spliced
            gb += dx.sum(axis=0)
            dspliced = dx @ p[0]
            offsets = spec.context_offsets
            d_in = spliced.shape[1] // len(offsets)
            dx_prev = np.zeros((t_in, d_in), dtype=model.dtype)
            t_out = dspliced.shape[0]
            for k, o in enumerate(offsets):
                start = o - offsets[0]
                dx_prev[start : start + t_out] += dspliced[:, k * d_in : (k + 1) * d_in]
            dx = dx_prev
    return loss


def adapt_head(model: TdnnModel, num_classes: int = 5, add_layer8: bool = False,
               seed: int = 0, class_labels=None) -> TdnnModel:
    """Replace the softmax head (optionally inserting one more dense layer).

    Every pre-existing parameter is copied bit-exactly; only the new layers
    draw from the seed.
    """
    if num_classes < 2:
        raise ModelError(f"need at least 2 classes, got {num_classes}")
    new = model.copy()
    head_in = new.layers[-1].in_dim
    new.layers = new.layers[:-1]
    new.params = new.params[:-1]

    streams = np.random.SeedSequence(seed).spawn(2)
    bound = np.sqrt(6.0 / head_in)
    if add_layer8:
        spec8 = LayerSpec("dense", head_in, head_in, (0,), True, True)
        rng = np.random.default_rng(streams[0])
        w8 = rng.uniform(-bound, bound, size=(head_in, head_in)).astype(model.dtype)
        new.layers.append(spec8)
        new.params.append((w8, np.zeros(head_in, dtype=model.dtype)))

    head = LayerSpec("softmax", head_in, num_classes, (0,), False, False)
    rng = np.random.default_rng(streams[1])
    w = rng.uniform(-bound, bound, size=(num_classes, head_in)).astype(model.dtype)
    new.layers.append(head)
    new.params.append((w, np.zeros(num_classes, dtype=model.dtype)))
    return TdnnModel(new.input_dim, new.layers, new.params,
                     list(class_labels or []), model.dtype)


def learning_rate(step: int, total_steps: int, lr_initial: float, lr_final: float) -> float:
    """Exponential per-step decay hitting lr_final exactly on the last step."""
    if total_steps <= 1:
        return lr_initial
    return lr_initial * (lr_final / lr_initial) ** (step / (total_steps - 1))


def finetune(model: TdnnModel, dataset, cfg: FinetuneConfig):
    """SGD with momentum over (feats, label) pairs; returns (model, TrainingLog).

    Parameter layers 1..6 see the configured first-six multiplier on their
    learning rate (0 freezes them bit-exactly).  Utterances shorter than the
    receptive field are skipped and reported in the log.
    """
    model = model.copy()
    usable, skipped = [], []
    for i, (feats, label) in enumerate(dataset):
        if np.asarray(feats).shape[0] < model.receptive_field:
            skipped.append(i)
        else:
            usable.append((feats, int(label)))
    if not usable:
        raise TrainingError("no usable utterances (empty dataset or all below receptive field)")
    for _, label in usable:
        if not (0 <= label < model.num_classes):
            raise TrainingError(f"label {label} out of range for {model.num_classes} classes")

    n = len(usable)
    n_batches = -(-n // cfg.batch_size)
    total_steps = cfg.epochs * n_batches

    ss_order, ss_dropout = np.random.SeedSequence(cfg.seed).spawn(2)
    order_rng = np.random.default_rng(ss_order)
    dropout_base = int(ss_dropout.generate_state(1)[0])

    ordinals = {pos: ordinal for ordinal, (pos, _) in enumerate(model.param_layers(), start=1)}
    velocity = [None if p is None else (np.zeros_like(p[0]), np.zeros_like(p[1]))
                for p in model.params]

    log = TrainingLog(config=dict(vars(cfg)))
    log.skipped_utterances = skipped
    step = 0
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(n)
        epoch_loss = 0.0
        for b in range(n_batches):
            batch = [usable[j] for j in order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            grads, loss = compute_gradients(
                model, batch, dropout=cfg.dropout,
                dropout_seed=(dropout_base + step * cfg.batch_size) & 0x7FFFFFFF,
            )
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} at epoch {epoch + 1}, step {step}; aborting"
                )
            lr = learning_rate(step, total_steps, cfg.lr_initial, cfg.lr_final)
            log.step_lrs.append(lr)
            for pos, p in enumerate(model.params):
                if p is None:
                    continue
                mult = cfg.first_six_lr_multiplier if ordinals[pos] <= 6 else 1.0
                lr_layer = model.dtype(lr * mult)
                vw, vb = velocity[pos]
                gw, gb = grads[pos]
                vw *= model.dtype(cfg.momentum)
                vw += gw
                vb *= model.dtype(cfg.momentum)
                vb += gb
                p[0][...] -= lr_layer * vw
                p[1][...] -= lr_layer * vb
            epoch_loss += loss * len(batch)
            step += 1
        log.epoch_losses.append(epoch_loss / n)
    return model, log


# ---------------------------------------------------------------------------
# TDN1 serialization
# ---------------------------------------------------------------------------

def save_model(path: str, model: TdnnModel, config_echo: dict | None = None) -> None:
    header = {
        "input_dim": model.input_dim,
        "class_labels": model.class_labels,
        "layers": [
            {
                "kind": s.kind,
                "in_dim": s.in_dim,
                "out_dim": s.out_dim,
                "offsets": list(s.context_offsets),
                "nonlinearity": s.nonlinearity,
                "dropout": s.dropout,
            }
            for s in model.layers
        ],
        "config": config_echo or {},
    }
    arrays = []
    for p in model.params:
        if p is not None:
            arrays.extend(p)
    write_atomic(path, encode_header_blob(TDN_MAGIC, header, arrays))


def load_model(path: str) -> TdnnModel:
    header, flat = read_header_blob(path, TDN_MAGIC)
    layers = [
        LayerSpec(h["kind"], int(h["in_dim"]), int(h["out_dim"]),
                  tuple(h.get("offsets", [0])), bool(h["nonlinearity"]), bool(h["dropout"]))
        for h in header["layers"]
    ]
    params = []
    cursor = 0
    for spec in layers:
        if not spec.has_params:
            params.append(None)
            continue
        w, cursor = take(flat, (spec.out_dim, spec.in_dim), cursor, path)
        b, cursor = take(flat, (spec.out_dim,), cursor, path)
        params.append((w, b))
    if cursor != flat.size:
        raise FormatError(f"{path}: {flat.size - cursor} trailing values after parameters")
    return TdnnModel(int(header["input_dim"]), layers, params,
                     list(header.get("class_labels", [])), np.float32)
