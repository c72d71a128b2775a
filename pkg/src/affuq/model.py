"""The affordance classifier head.

The head fuses three inputs into a categorical prediction:

* a one-hot object-class vector, mapped by ``w_class``;
* an object feature vector, mapped by ``w_feat``;
* a global scene feature vector.

The two mapped branches pass through ReLU and are multiplied elementwise,
giving the object representation.  That representation is concatenated with
the scene features, pushed through a ReLU fusion layer (``w_fuse``), then
through two fully connected layers (``w_hidden``, ``w_out``) and a softmax.

Dropout, when active, is applied to the inputs of the fusion layer and of
both fully connected layers, using inverted scaling (surviving entries are
multiplied by 1/(1-rate)) so that mask-free inference needs no correction.

``backward`` returns the exact analytic gradient of the cross-entropy loss
with respect to every weight and bias, including the product rule through
the elementwise multiplication and the split across the concatenation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    FormatError,
    InvalidInputError,
    ShapeError,
    StateError,
)
from .numeric import RngStream, one_hot, relu, softmax

MODEL_FORMAT_VERSION = 1
MODEL_KIND = "affordance-head"

PARAM_FIELDS = (
    "w_class", "b_class",
    "w_feat", "b_feat",
    "w_fuse", "b_fuse",
    "w_hidden", "b_hidden",
    "w_out", "b_out",
)


@dataclass(frozen=True)
class HeadConfig:
    """Architecture hyperparameters of the classifier head."""

    num_object_classes: int
    obj_feature_dim: int = 576
    global_feature_dim: int = 576
    hidden_dim: int = 128
    fc_hidden_dim: int = 64
    num_categories: int = 7
    dropout_rate: float = 0.0

    def __post_init__(self):
        for name in ("num_object_classes", "obj_feature_dim", "global_feature_dim",
                     "hidden_dim", "fc_hidden_dim", "num_categories"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidInputError(f"{name} must be a positive integer, got {value!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidInputError(
                f"dropout_rate must be in [0, 1), got {self.dropout_rate}"
            )

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        h, f = self.hidden_dim, self.fc_hidden_dim
        return {
            "w_class": (h, self.num_object_classes), "b_class": (h,),
            "w_feat": (h, self.obj_feature_dim), "b_feat": (h,),
            "w_fuse": (h, h + self.global_feature_dim), "b_fuse": (h,),
            "w_hidden": (f, h), "b_hidden": (f,),
            "w_out": (self.num_categories, f), "b_out": (self.num_categories,),
        }


@dataclass(frozen=True)
class HeadParams:
    """All learnable weights and biases.  Treated as immutable; every update
    builds a new instance."""

    w_class: np.ndarray
    b_class: np.ndarray
    w_feat: np.ndarray
    b_feat: np.ndarray
    w_fuse: np.ndarray
    b_fuse: np.ndarray
    w_hidden: np.ndarray
    b_hidden: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}


def param_map(fn, *params: HeadParams) -> HeadParams:
    """Apply ``fn`` to corresponding arrays of one or more HeadParams."""
    return HeadParams(**{
        name: fn(*(getattr(p, name) for p in params)) for name in PARAM_FIELDS
    })


def zeros_like_params(config: HeadConfig) -> HeadParams:
    return HeadParams(**{
        name: np.zeros(shape) for name, shape in config.layer_shapes().items()
    })


def validate_params(params: HeadParams, config: HeadConfig) -> None:
    """Raise ShapeError if any array disagrees with the config."""
    for name, shape in config.layer_shapes().items():
        actual = getattr(params, name).shape
        if actual != shape:
            raise ShapeError(f"{name} has shape {actual}, expected {shape}")


def init_params(config: HeadConfig, rng: RngStream) -> HeadParams:
    """Fan-in-scaled uniform initialization, biases at zero.

    Each weight entry is drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    The draw order over layers is fixed, so identical (config, stream)
    pairs produce bit-identical parameters.
    """
    gen = rng.generator()
    values = {}
    for name, shape in config.layer_shapes().items():
        if name.startswith("w_"):
            bound = 1.0 / np.sqrt(shape[1])
            values[name] = gen.uniform(-bound, bound, size=shape)
        else:
            values[name] = np.zeros(shape)
    return HeadParams(**values)


@dataclass(frozen=True)
class MaskProvenance:
    seed: int
    stream_id: int
    pass_index: int


@dataclass(frozen=True)
class DropoutMask:
    """Inverted-dropout masks for the three masked layer inputs.

    Entries are 0 (dropped) or 1/(1-rate) (kept), so each entry has unit
    expectation.  ``fuse_keep`` masks the concatenated input of the fusion
    layer, ``hidden_keep`` the input of the first FC layer, ``out_keep``
    the input of the output layer.
    """

    fuse_keep: np.ndarray
    hidden_keep: np.ndarray
    out_keep: np.ndarray
    rate: float
    provenance: MaskProvenance | None = None


class MaskSampler:
    """Sequential dropout-mask source bound to one random stream.

    A sampler owns its stream; independent consumers must use distinct
    streams rather than sharing a sampler.
    """

    def __init__(self, config: HeadConfig, rate: float, stream: RngStream):
        if not 0.0 <= rate < 1.0:
            raise InvalidInputError(f"dropout rate must be in [0, 1), got {rate}")
        self._dims = (
            config.hidden_dim + config.global_feature_dim,
            config.hidden_dim,
            config.fc_hidden_dim,
        )
        self._rate = rate
        self._stream = stream
        self._gen = stream.generator()
        self._count = 0

    def next_mask(self) -> DropoutMask:
        scale = 1.0 / (1.0 - self._rate)
        vecs = [
            np.where(self._gen.random(d) >= self._rate, scale, 0.0)
            for d in self._dims
        ]
        prov = MaskProvenance(self._stream.seed, self._stream.stream_id, self._count)
        self._count += 1
        return DropoutMask(vecs[0], vecs[1], vecs[2], self._rate, prov)


@dataclass(frozen=True)
class ForwardTrace:
    """Every intermediate needed to backpropagate one sample.

    ``*_pre`` are pre-activation values, ``*_in`` are the (possibly masked)
    inputs actually fed to each linear layer.
    """

    class_onehot: np.ndarray
    obj_feat: np.ndarray
    glob_feat: np.ndarray
    class_pre: np.ndarray
    class_act: np.ndarray
    feat_pre: np.ndarray
    feat_act: np.ndarray
    obj_rep: np.ndarray
    fuse_in: np.ndarray
    fuse_pre: np.ndarray
    scene_rep: np.ndarray
    hidden_in: np.ndarray
    hidden_pre: np.ndarray
    hidden_act: np.ndarray
    out_in: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def forward(
    params: HeadParams,
    class_id: int,
    obj_feat,
    glob_feat,
    mask: DropoutMask | None = None,
) -> ForwardTrace:
    """Run the head on one sample, returning the full activation trace.

    ``mask`` must be present exactly when dropout is meant to be active
    (training steps or posterior sampling); mask-free calls are the
    deterministic inference path.
    """
    obj_feat = np.asarray(obj_feat, dtype=np.float64)
    glob_feat = np.asarray(glob_feat, dtype=np.float64)
    hidden_dim, num_obj_classes = params.w_class.shape
    if obj_feat.shape != (params.w_feat.shape[1],):
        raise ShapeError(
            f"object features have shape {obj_feat.shape}, "
            f"expected ({params.w_feat.shape[1]},)"
        )
    glob_dim = params.w_fuse.shape[1] - hidden_dim
    if glob_feat.shape != (glob_dim,):
        raise ShapeError(
            f"global features have shape {glob_feat.shape}, expected ({glob_dim},)"
        )
    if mask is not None:
        if mask.fuse_keep.shape != (hidden_dim + glob_dim,) \
                or mask.hidden_keep.shape != (hidden_dim,) \
                or mask.out_keep.shape != (params.w_hidden.shape[0],):
            raise ShapeError("dropout mask dimensions do not match the head")

    class_onehot = one_hot(class_id, num_obj_classes)
    class_pre = params.w_class @ class_onehot + params.b_class
    class_act = relu(class_pre)
    feat_pre = params.w_feat @ obj_feat + params.b_feat
    feat_act = relu(feat_pre)
    obj_rep = class_act * feat_act

    fuse_raw = np.concatenate([obj_rep, glob_feat])
    fuse_in = fuse_raw if mask is None else fuse_raw * mask.fuse_keep
    fuse_pre = params.w_fuse @ fuse_in + params.b_fuse
    scene_rep = relu(fuse_pre)

    hidden_in = scene_rep if mask is None else scene_rep * mask.hidden_keep
    hidden_pre = params.w_hidden @ hidden_in + params.b_hidden
    hidden_act = relu(hidden_pre)

    out_in = hidden_act if mask is None else hidden_act * mask.out_keep
    logits = params.w_out @ out_in + params.b_out
    probs = softmax(logits)

    return ForwardTrace(
        class_onehot=class_onehot, obj_feat=obj_feat, glob_feat=glob_feat,
        class_pre=class_pre, class_act=class_act,
        feat_pre=feat_pre, feat_act=feat_act, obj_rep=obj_rep,
        fuse_in=fuse_in, fuse_pre=fuse_pre, scene_rep=scene_rep,
        hidden_in=hidden_in, hidden_pre=hidden_pre, hidden_act=hidden_act,
        out_in=out_in, logits=logits, probs=probs,
    )


def loss_cross_entropy(probs, label: int) -> float:
    """Negative log probability of ``label``; the input probability is
    clamped at 1e-300 so the loss stays finite."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[0]:
        raise InvalidInputError(
            f"label {label} out of range [0, {probs.shape[0]})"
        )
    return float(-np.log(max(probs[label], 1e-300)))


def _check_trace(trace: ForwardTrace, params: HeadParams, mask: DropoutMask | None) -> None:
    hidden_dim, num_obj_classes = params.w_class.shape
    if trace.class_onehot.shape != (num_obj_classes,):
        raise StateError("trace does not match params: object-class width differs")
    if trace.fuse_in.shape != (params.w_fuse.shape[1],):
        raise StateError("trace does not match params: fusion input width differs")
    if trace.out_in.shape != (params.w_out.shape[1],):
        raise StateError("trace does not match params: output input width differs")
    if trace.probs.shape != (params.w_out.shape[0],):
        raise StateError("trace does not match params: category count differs")
    if not np.allclose(trace.probs, softmax(trace.logits), atol=1e-12):
        raise StateError("trace is internally inconsistent: probs != softmax(logits)")
    fuse_raw = np.concatenate([trace.obj_rep, trace.glob_feat])
    if mask is None:
        expected = (fuse_raw, trace.scene_rep, trace.hidden_act)
    else:
        expected = (
            fuse_raw * mask.fuse_keep,
            trace.scene_rep * mask.hidden_keep,
            trace.hidden_act * mask.out_keep,
        )
    for got, want in zip((trace.fuse_in, trace.hidden_in, trace.out_in), expected):
        if not np.array_equal(got, want):
            raise StateError("trace was produced with a different dropout mask")


def backward(
    trace: ForwardTrace,
    params: HeadParams,
    label: int,
    mask: DropoutMask | None = None,
) -> HeadParams:
    """Exact gradient of the cross-entropy loss w.r.t. every parameter.

    ``trace`` must come from ``forward`` with the same params and mask.
    The ReLU subgradient at exactly 0 is taken to be 0.
    """
    num_categories = params.w_out.shape[0]
    if not 0 <= label < num_categories:
        raise InvalidInputError(f"label {label} out of range [0, {num_categories})")
    _check_trace(trace, params, mask)

    hidden_dim = params.w_class.shape[0]

    d_logits = trace.probs - one_hot(label, num_categories)
    g_w_out = np.outer(d_logits, trace.out_in)
    g_b_out = d_logits

    d_out_in = params.w_out.T @ d_logits
    d_hidden_act = d_out_in if mask is None else d_out_in * mask.out_keep
    d_hidden_pre = d_hidden_act * (trace.hidden_pre > 0)
    g_w_hidden = np.outer(d_hidden_pre, trace.hidden_in)
    g_b_hidden = d_hidden_pre

    d_hidden_in = params.w_hidden.T @ d_hidden_pre
    d_scene = d_hidden_in if mask is None else d_hidden_in * mask.hidden_keep
    d_fuse_pre = d_scene * (trace.fuse_pre > 0)
    g_w_fuse = np.outer(d_fuse_pre, trace.fuse_in)
    g_b_fuse = d_fuse_pre

    d_fuse_in = params.w_fuse.T @ d_fuse_pre
    d_fuse_raw = d_fuse_in if mask is None else d_fuse_in * mask.fuse_keep
    d_obj_rep = d_fuse_raw[:hidden_dim]

    # product rule through obj_rep = class_act * feat_act
    d_class_act = d_obj_rep * trace.feat_act
    d_feat_act = d_obj_rep * trace.class_act
    d_class_pre = d_class_act * (trace.class_pre > 0)
    d_feat_pre = d_feat_act * (trace.feat_pre > 0)

    return HeadParams(
        w_class=np.outer(d_class_pre, trace.class_onehot), b_class=d_class_pre,
        w_feat=np.outer(d_feat_pre, trace.obj_feat), b_feat=d_feat_pre,
        w_fuse=g_w_fuse, b_fuse=g_b_fuse,
        w_hidden=g_w_hidden, b_hidden=g_b_hidden,
        w_out=g_w_out, b_out=g_b_out,
    )


def serialize(params: HeadParams, config: HeadConfig) -> bytes:
    """Encode params + config as the versioned JSON model document."""
    validate_params(params, config)
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": MODEL_KIND,
        "config": {
            "num_object_classes": config.num_object_classes,
            "obj_feature_dim": config.obj_feature_dim,
            "global_feature_dim": config.global_feature_dim,
            "hidden_dim": config.hidden_dim,
            "fc_hidden_dim": config.fc_hidden_dim,
            "num_categories": config.num_categories,
            "dropout_rate": config.dropout_rate,
        },
        "layers": {
            name: {
                "shape": list(arr.shape),
                "values": arr.reshape(-1).tolist(),
            }
            for name, arr in params.arrays().items()
        },
    }
    return json.dumps(doc).encode("utf-8")


def deserialize(blob: bytes | str) -> tuple[HeadParams, HeadConfig]:
    """Decode a model document, validating version, shapes, and payload.

    The round trip ``deserialize(serialize(p, c))`` reproduces every float
    bit-exactly (JSON numbers are written in shortest round-trip form).
    """
    try:
        doc = json.loads(blob)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"model document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError("model document must be a JSON object")
    if doc.get("kind") != MODEL_KIND:
        raise FormatError(f"unrecognized document kind {doc.get('kind')!r}")
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise FormatError(
            f"unsupported format_version {doc.get('format_version')!r}, "
            f"expected {MODEL_FORMAT_VERSION}"
        )
    try:
        config = HeadConfig(**doc["config"])
    except (KeyError, TypeError, InvalidInputError) as exc:
        raise FormatError(f"model config is invalid: {exc}") from exc

    layers = doc.get("layers")
    if not isinstance(layers, dict):
        raise FormatError("model document has no layers table")
    arrays = {}
    for name, shape in config.layer_shapes().items():
        entry = layers.get(name)
        if entry is None:
            raise FormatError(f"layer {name!r} missing from model document")
        got_shape = tuple(entry.get("shape", ()))
        if got_shape != shape:
            raise FormatError(
                f"layer {name!r} has shape {got_shape}, expected {shape} "
                "for this config"
            )
        values = entry.get("values")
        if not isinstance(values, list) or len(values) != int(np.prod(shape)):
            raise FormatError(f"layer {name!r} payload does not match its shape")
        arr = np.array(values, dtype=np.float64).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"layer {name!r} contains non-finite values")
        arrays[name] = arr
    return HeadParams(**arrays), config


def save_model(path, params: HeadParams, config: HeadConfig) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(params, config))


def load_model(path) -> tuple[HeadParams, HeadConfig]:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
