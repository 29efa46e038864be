"""
Hierarchical Classifier
MLP trunk, one linear head per taxonomy level and a unit-norm projection
head, plus the binary checkpoint format
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src import diffcore as dc
from src.diffcore import Tensor
from src.errors import InputError
from src.seeding import make_rng
from src.taxonomy.tree import Taxonomy, validate

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"FGCK"
DEFAULT_HIDDEN_DIMS = (128, 128)
DEFAULT_PROJECTION_DIM = 32

Layer = Tuple[Tensor, Tensor]


@dataclass
class ModelParams:
    level_sizes: Tuple[int, ...]
    feature_dim: int
    hidden_dims: Tuple[int, ...]
    projection_dim: int
    head_layers: Tuple[int, ...]
    init_seed: int
    trunk: List[Layer] = field(default_factory=list)
    heads: List[Layer] = field(default_factory=list)
    projection: Optional[Layer] = None

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        """Every trainable tensor with a stable name, in checkpoint order"""
        named = []
        for i, (w, b) in enumerate(self.trunk, start=1):
            named += [(f"trunk.{i}.weight", w), (f"trunk.{i}.bias", b)]
        for level, (w, b) in enumerate(self.heads, start=1):
            named += [(f"head.{level}.weight", w), (f"head.{level}.bias", b)]
        w, b = self.projection
        named += [("projection.weight", w), ("projection.bias", b)]
        return named

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def head_parameters(self, level: int) -> List[Tensor]:
        return list(self.heads[level - 1])

    def header(self) -> dict:
        return {
            "level_sizes": list(self.level_sizes),
            "feature_dim": self.feature_dim,
            "hidden_dims": list(self.hidden_dims),
            "projection_dim": self.projection_dim,
            "head_layers": list(self.head_layers),
            "init_seed": self.init_seed,
            "shapes": {name: list(t.shape) for name, t in self.named_parameters()},
        }


@dataclass
class ForwardOutput:
    logits_per_level: List[Tensor]
    projected: Tensor
    trunk_features: Tensor

    def predictions(self) -> np.ndarray:
        """(n, L) argmax labels"""
        return np.stack([np.argmax(l.data, axis=1) for l in self.logits_per_level], axis=1)


def _linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> Layer:
    bound = 1.0 / np.sqrt(fan_in)
    weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    return dc.tensor(weight, requires_grad=True), dc.tensor(np.zeros(fan_out), requires_grad=True)


def init(t: Taxonomy, feature_dim: int, hidden_dims: Sequence[int] = DEFAULT_HIDDEN_DIMS,
         text_dim: Optional[int] = None, seed: int = 0,
         head_layers: Optional[Sequence[int]] = None) -> ModelParams:
    """
    Fan-in scaled uniform weights, zero biases. head_layers gives, per
    level, the 1-based hidden layer the head reads from (default: the last
    one for every level). The projection width is text_dim when given.
    """
    violations = validate(t)
    if violations:
        raise InputError(f"invalid taxonomy: {violations[0].kind} at level {violations[0].level}")
    hidden_dims = tuple(int(h) for h in hidden_dims)
    if feature_dim < 1 or not hidden_dims or any(h < 1 for h in hidden_dims):
        raise InputError(f"dimensions must be positive: feature_dim={feature_dim}, hidden={hidden_dims}")
    projection_dim = int(text_dim) if text_dim is not None else DEFAULT_PROJECTION_DIM
    if projection_dim < 1:
        raise InputError(f"text_dim must be positive, got {text_dim}")
    H = len(hidden_dims)
    if head_layers is None:
        head_layers = (H,) * t.num_levels
    head_layers = tuple(int(h) for h in head_layers)
    if len(head_layers) != t.num_levels:
        raise InputError(f"{len(head_layers)} head layers for a {t.num_levels}-level taxonomy")
    if any(not 1 <= h <= H for h in head_layers):
        raise InputError(f"head layers {head_layers} must lie in 1..{H}")

    rng = make_rng(seed, "model.init")
    params = ModelParams(tuple(t.level_sizes), int(feature_dim), hidden_dims, projection_dim, head_layers, int(seed))
    fan_in = feature_dim
    for width in hidden_dims:
        params.trunk.append(_linear(rng, fan_in, width))
        fan_in = width
    for level, size in enumerate(t.level_sizes, start=1):
        params.heads.append(_linear(rng, hidden_dims[head_layers[level - 1] - 1], size))
    params.projection = _linear(rng, hidden_dims[-1], projection_dim)
    logger.debug("Initialized model %s", params.header()["shapes"])
    return params


def forward(p: ModelParams, batch) -> ForwardOutput:
    """Logits per level, unit-norm projections and top trunk features"""
    x = batch if isinstance(batch, Tensor) else dc.tensor(batch)
    if x.data.ndim != 2 or x.shape[1] != p.feature_dim:
        raise InputError(f"batch shape {x.shape} does not match feature_dim {p.feature_dim}")
    hidden = []
    h = x
    for w, b in p.trunk:
        h = dc.relu(dc.add(dc.matmul(h, w), b))
        hidden.append(h)
    logits = [dc.add(dc.matmul(hidden[layer - 1], w), b) for layer, (w, b) in zip(p.head_layers, p.heads)]
    w, b = p.projection
    projected = dc.l2_normalize_rows(dc.add(dc.matmul(h, w), b))
    return ForwardOutput(logits_per_level=logits, projected=projected, trunk_features=h)


def predict(p: ModelParams, features: np.ndarray, batch_size: int = 1024) -> List[np.ndarray]:
    """Per-level logits as plain arrays, computed in chunks"""
    chunks = [[] for _ in p.level_sizes]
    for start in range(0, len(features), batch_size):
        out = forward(p, features[start:start + batch_size])
        for level, logits in enumerate(out.logits_per_level):
            chunks[level].append(logits.data)
    if not len(features):
        return [np.zeros((0, size)) for size in p.level_sizes]
    return [np.concatenate(c, axis=0) for c in chunks]


def save_checkpoint(p: ModelParams, path: str, config_hash: Optional[str] = None, extra: Optional[Dict] = None):
    """
    Magic, little-endian uint64 header length, JSON header, then every
    parameter flattened in named_parameters() order as little-endian float64.
    """
    header = p.header()
    header["config_hash"] = config_hash
    if extra:
        header["extra"] = extra
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = np.concatenate([t.data.ravel() for t in p.parameters()]).astype("<f8").tobytes()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(blob)
    logger.debug("Saved checkpoint %s (%d parameters)", path, len(blob) // 8)


def load_checkpoint(path: str) -> Tuple[ModelParams, dict]:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise InputError("file not found", path=path)
    if raw[:4] != CHECKPOINT_MAGIC or len(raw) < 12:
        raise InputError("not a freegrain checkpoint", path=path)
    (header_len,) = struct.unpack("<Q", raw[4:12])
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InputError(f"corrupt checkpoint header: {e}", path=path)
    blob = raw[12 + header_len:]
    if len(blob) % 8:
        raise InputError("checkpoint blob is not a whole number of float64 values", path=path)
    values = np.frombuffer(blob, dtype="<f8").astype(np.float64)

    try:
        p = ModelParams(tuple(header["level_sizes"]), header["feature_dim"], tuple(header["hidden_dims"]),
                        header["projection_dim"], tuple(header["head_layers"]), header["init_seed"])
        shapes = dict(header["shapes"])
    except KeyError as e:
        raise InputError(f"checkpoint header lacks {e}", path=path)
    except (TypeError, ValueError) as e:
        raise InputError(f"malformed checkpoint header: {e}", path=path)
    offset = 0

    def take(name: str) -> Tensor:
        nonlocal offset
        if name not in shapes:
            raise InputError(f"checkpoint header has no shape for {name}", path=path)
        shape = tuple(shapes[name])
        count = int(np.prod(shape)) if shape else 1
        if offset + count > len(values):
            raise InputError(f"checkpoint blob too short at {name}", path=path)
        t = dc.tensor(values[offset:offset + count].reshape(shape), requires_grad=True)
        offset += count
        return t

    for i in range(1, len(p.hidden_dims) + 1):
        p.trunk.append((take(f"trunk.{i}.weight"), take(f"trunk.{i}.bias")))
    for level in range(1, len(p.level_sizes) + 1):
        p.heads.append((take(f"head.{level}.weight"), take(f"head.{level}.bias")))
    p.projection = (take("projection.weight"), take("projection.bias"))
    if offset != len(values):
        raise InputError(f"checkpoint blob has {len(values) - offset} trailing values", path=path)
    return p, header
