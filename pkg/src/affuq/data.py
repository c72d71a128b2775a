"""Feature-record datasets: loading, validation, statistics, splits, and
synthetic generators.

File format (one object per line):

* line 1 is the header object::

    {"format_version": 1, "kind": "affordance-dataset",
     "obj_feature_dim": 576, "global_feature_dim": 576,
     "num_object_classes": 4, "object_class_names": ["chair", ...]}

* every following line is one record::

    {"record_id": "r0", "object_class_id": 2, "object_class_name": "pot",
     "obj_feat": [...], "glob_feat": [...], "labels": {"sit": 0, "run": 6}}

Records may omit labels for any action.  Label values are the seven
affordance categories 0..6 (0 positive, 1-5 exception kinds, 6 firmly
negative).

The synthetic generators draw Gaussian class-conditional feature blobs.
Label noise replaces a record's label with a uniform category draw, which
makes the noise an irreducible (aleatoric) source.  The last coordinate of
both feature blocks is fully held out: in-distribution points carry exactly
0 there (no center offset and no within-class noise), so the weights
attached to that axis never receive gradient during training and
out-of-distribution sets produced by translating along it probe the
model's untrained behaviour.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import FormatError, InvalidInputError
from .numeric import RngStream

DATASET_FORMAT_VERSION = 1
DATASET_KIND = "affordance-dataset"

NUM_CATEGORIES = 7

CATEGORY_NAMES = (
    "positive",
    "non-functional",
    "physical-obstacle",
    "socially-awkward",
    "socially-forbidden",
    "dangerous",
    "firmly-negative",
)


class Action(Enum):
    SIT = "sit"
    RUN = "run"
    GRASP = "grasp"


@dataclass(frozen=True)
class FeatureRecord:
    """One object instance: class identity, feature vectors, and the
    per-action category labels that are present."""

    record_id: str
    object_class_id: int
    object_class_name: str
    obj_feat: np.ndarray
    glob_feat: np.ndarray
    labels: dict[Action, int] = field(default_factory=dict)


@dataclass(frozen=True)
class DatasetHeader:
    obj_feature_dim: int
    global_feature_dim: int
    num_object_classes: int
    object_class_names: tuple[str, ...]

    def __post_init__(self):
        if self.obj_feature_dim < 1 or self.global_feature_dim < 1:
            raise InvalidInputError("feature dimensions must be positive")
        if self.num_object_classes < 1:
            raise InvalidInputError("num_object_classes must be positive")
        if len(self.object_class_names) != self.num_object_classes:
            raise InvalidInputError(
                "object_class_names length must equal num_object_classes"
            )


@dataclass(frozen=True)
class Dataset:
    header: DatasetHeader
    records: tuple[FeatureRecord, ...]

    def __len__(self) -> int:
        return len(self.records)


def _validate_record(rec: FeatureRecord, header: DatasetHeader) -> None:
    rid = rec.record_id
    if rec.obj_feat.shape != (header.obj_feature_dim,):
        raise FormatError(
            f"record {rid!r}: object features have {rec.obj_feat.shape[0]} "
            f"components, header says {header.obj_feature_dim}"
        )
    if rec.glob_feat.shape != (header.global_feature_dim,):
        raise FormatError(
            f"record {rid!r}: global features have {rec.glob_feat.shape[0]} "
            f"components, header says {header.global_feature_dim}"
        )
    if not (np.all(np.isfinite(rec.obj_feat)) and np.all(np.isfinite(rec.glob_feat))):
        raise FormatError(f"record {rid!r}: features contain non-finite values")
    if not 0 <= rec.object_class_id < header.num_object_classes:
        raise FormatError(
            f"record {rid!r}: object_class_id {rec.object_class_id} out of "
            f"range [0, {header.num_object_classes})"
        )
    for action, label in rec.labels.items():
        if not 0 <= label < NUM_CATEGORIES:
            raise FormatError(
                f"record {rid!r}: label {label} for action {action.value!r} "
                f"outside the category range 0..{NUM_CATEGORIES - 1}"
            )


def make_dataset(header: DatasetHeader, records) -> Dataset:
    """Assemble and validate a dataset from already-built records."""
    seen = set()
    for rec in records:
        if rec.record_id in seen:
            raise FormatError(f"duplicate record_id {rec.record_id!r}")
        seen.add(rec.record_id)
        _validate_record(rec, header)
    return Dataset(header=header, records=tuple(records))


def _record_from_json(obj: dict, lineno: int) -> FeatureRecord:
    try:
        labels = {
            Action(action): int(label)
            for action, label in obj.get("labels", {}).items()
        }
        return FeatureRecord(
            record_id=str(obj["record_id"]),
            object_class_id=int(obj["object_class_id"]),
            object_class_name=str(obj["object_class_name"]),
            obj_feat=np.asarray(obj["obj_feat"], dtype=np.float64),
            glob_feat=np.asarray(obj["glob_feat"], dtype=np.float64),
            labels=labels,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"line {lineno}: malformed record ({exc})") from exc


def load_dataset(path) -> Dataset:
    """Parse and fully validate a dataset file.

    Any violation is reported with the offending record id (or line number
    when no id could be parsed).
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty dataset file")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: header is not valid JSON: {exc}") from exc
    if head.get("kind") != DATASET_KIND:
        raise FormatError(f"{path}: unrecognized kind {head.get('kind')!r}")
    if head.get("format_version") != DATASET_FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported format_version {head.get('format_version')!r}"
        )
    try:
        header = DatasetHeader(
            obj_feature_dim=int(head["obj_feature_dim"]),
            global_feature_dim=int(head["global_feature_dim"]),
            num_object_classes=int(head["num_object_classes"]),
            object_class_names=tuple(head["object_class_names"]),
        )
    except (KeyError, TypeError, ValueError, InvalidInputError) as exc:
        raise FormatError(f"{path}: invalid header: {exc}") from exc

    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
        records.append(_record_from_json(obj, lineno))
    return make_dataset(header, records)


def save_dataset(dataset: Dataset, path) -> None:
    """Write the header line followed by one JSON line per record."""
    head = {
        "format_version": DATASET_FORMAT_VERSION,
        "kind": DATASET_KIND,
        "obj_feature_dim": dataset.header.obj_feature_dim,
        "global_feature_dim": dataset.header.global_feature_dim,
        "num_object_classes": dataset.header.num_object_classes,
        "object_class_names": list(dataset.header.object_class_names),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(head) + "\n")
        for rec in dataset.records:
            fh.write(json.dumps({
                "record_id": rec.record_id,
                "object_class_id": rec.object_class_id,
                "object_class_name": rec.object_class_name,
                "obj_feat": rec.obj_feat.tolist(),
                "glob_feat": rec.glob_feat.tolist(),
                "labels": {a.value: int(v) for a, v in rec.labels.items()},
            }) + "\n")


def class_distribution(dataset: Dataset, action: Action) -> dict:
    """Percentages of firmly-positive / exception / firmly-negative labels
    for one action, using the 7-to-3 category merge."""
    counts = {"positive": 0, "exception": 0, "negative": 0}
    for rec in dataset.records:
        label = rec.labels.get(action)
        if label is None:
            continue
        if label == 0:
            counts["positive"] += 1
        elif label == NUM_CATEGORIES - 1:
            counts["negative"] += 1
        else:
            counts["exception"] += 1
    total = sum(counts.values())
    if total == 0:
        raise InvalidInputError(f"no labels present for action {action.value!r}")
    return {
        "action": action.value,
        "total": total,
        "counts": counts,
        "percent": {k: 100.0 * v / total for k, v in counts.items()},
    }


def split(dataset: Dataset, fractions, rng: RngStream) -> tuple[Dataset, Dataset, Dataset]:
    """Random disjoint train/val/test split.

    ``fractions`` are three non-negative reals summing to 1; each part's
    size differs from the exact fraction by at most one record.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise InvalidInputError("fractions must be three non-negative reals")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidInputError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(dataset.records)
    order = rng.generator().permutation(n)
    first = int(round(fractions[0] * n))
    second = int(round((fractions[0] + fractions[1]) * n))
    parts = (order[:first], order[first:second], order[second:])
    return tuple(
        Dataset(dataset.header, tuple(dataset.records[i] for i in idx))
        for idx in parts
    )


@dataclass(frozen=True)
class BlobSpec:
    """Controls for the Gaussian-blob generator.

    ``cluster_scale`` is the within-class standard deviation; shift
    magnitudes for out-of-distribution sets are expressed in these units.
    ``num_object_classes`` sizes the nuisance one-hot vocabulary, drawn
    independently of the label so the classifier must use the features.
    """

    num_classes: int
    obj_dim: int = 6
    glob_dim: int = 6
    count: int = 200
    center_scale: float = 3.0
    cluster_scale: float = 0.7
    label_noise_rate: float = 0.0
    num_object_classes: int = 4

    def __post_init__(self):
        if not 2 <= self.num_classes <= NUM_CATEGORIES:
            raise InvalidInputError(
                f"num_classes must be in [2, {NUM_CATEGORIES}], got {self.num_classes}"
            )
        if self.obj_dim < 2 or self.glob_dim < 2:
            raise InvalidInputError(
                "feature dims must be >= 2 (the last axis is held out of blob centers)"
            )
        if self.count < 1:
            raise InvalidInputError("count must be >= 1")
        if not 0.0 <= self.label_noise_rate <= 1.0:
            raise InvalidInputError("label_noise_rate must be in [0, 1]")
        if self.cluster_scale <= 0 or self.center_scale <= 0:
            raise InvalidInputError("scales must be positive")
        if self.num_object_classes < 1:
            raise InvalidInputError("num_object_classes must be >= 1")


def _blob_header(spec: BlobSpec) -> DatasetHeader:
    return DatasetHeader(
        obj_feature_dim=spec.obj_dim,
        global_feature_dim=spec.glob_dim,
        num_object_classes=spec.num_object_classes,
        object_class_names=tuple(f"object-{i}" for i in range(spec.num_object_classes)),
    )


def _blob_centers(spec: BlobSpec, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    # Last axis stays zero: it is the held-out direction for OOD shifts.
    gen = rng.derive("centers").generator()
    obj = gen.normal(0.0, spec.center_scale, size=(spec.num_classes, spec.obj_dim))
    glob = gen.normal(0.0, spec.center_scale, size=(spec.num_classes, spec.glob_dim))
    obj[:, -1] = 0.0
    glob[:, -1] = 0.0
    return obj, glob


def _cluster_noise(gen, count: int, dim: int, scale: float) -> np.ndarray:
    # The held-out axis carries no within-class noise either, so training
    # never produces gradient on the weights that read it.
    noise = gen.normal(0.0, scale, size=(count, dim))
    noise[:, -1] = 0.0
    return noise


def synth_blobs(spec: BlobSpec, rng: RngStream) -> tuple[Dataset, dict]:
    """Labeled Gaussian blobs plus generation metadata.

    Centers, clean labels, features, noise flips, and nuisance object
    classes come from separate derived streams, so two specs differing only
    in ``label_noise_rate`` produce identical features and clean labels
    under the same stream.
    """
    obj_centers, glob_centers = _blob_centers(spec, rng)
    n = spec.count
    clean = rng.derive("labels").generator().integers(0, spec.num_classes, size=n)

    feat_gen = rng.derive("features").generator()
    obj_feat = obj_centers[clean] + _cluster_noise(feat_gen, n, spec.obj_dim, spec.cluster_scale)
    glob_feat = glob_centers[clean] + _cluster_noise(feat_gen, n, spec.glob_dim, spec.cluster_scale)

    noise_gen = rng.derive("noise").generator()
    flip = noise_gen.random(n) < spec.label_noise_rate
    noisy_draw = noise_gen.integers(0, spec.num_classes, size=n)
    observed = np.where(flip, noisy_draw, clean)

    class_ids = rng.derive("object-class").generator().integers(
        0, spec.num_object_classes, size=n
    )

    header = _blob_header(spec)
    records = []
    for i in range(n):
        label = int(observed[i])
        records.append(FeatureRecord(
            record_id=f"blob-{i:05d}",
            object_class_id=int(class_ids[i]),
            object_class_name=header.object_class_names[int(class_ids[i])],
            obj_feat=obj_feat[i],
            glob_feat=glob_feat[i],
            labels={a: label for a in Action},
        ))
    metadata = {
        "generator": "blobs",
        "seed": rng.seed,
        "stream_id": rng.stream_id,
        "spec": {
            "num_classes": spec.num_classes,
            "obj_dim": spec.obj_dim,
            "glob_dim": spec.glob_dim,
            "count": spec.count,
            "center_scale": spec.center_scale,
            "cluster_scale": spec.cluster_scale,
            "label_noise_rate": spec.label_noise_rate,
            "num_object_classes": spec.num_object_classes,
        },
        "obj_centers": obj_centers.tolist(),
        "glob_centers": glob_centers.tolist(),
        "clean_labels": clean.tolist(),
        "flipped_records": [f"blob-{i:05d}" for i in np.flatnonzero(flip)],
    }
    return make_dataset(header, records), metadata


def synth_ood(spec: BlobSpec, shift: float, count: int, rng: RngStream) -> tuple[Dataset, dict]:
    """Unlabeled points from blob centers translated along the held-out axis.

    ``shift`` is measured in units of ``spec.cluster_scale``.  Pass the same
    stream used for the matching ``synth_blobs`` call to reuse its centers.
    """
    if shift < 0:
        raise InvalidInputError(f"shift must be >= 0, got {shift}")
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    obj_centers, glob_centers = _blob_centers(spec, rng)
    offset = shift * spec.cluster_scale

    gen = rng.derive("ood").generator()
    latent = gen.integers(0, spec.num_classes, size=count)
    obj_feat = obj_centers[latent] + _cluster_noise(gen, count, spec.obj_dim, spec.cluster_scale)
    glob_feat = glob_centers[latent] + _cluster_noise(gen, count, spec.glob_dim, spec.cluster_scale)
    obj_feat[:, -1] += offset
    glob_feat[:, -1] += offset

    class_ids = rng.derive("ood-object-class").generator().integers(
        0, spec.num_object_classes, size=count
    )
    header = _blob_header(spec)
    records = [
        FeatureRecord(
            record_id=f"ood-{i:05d}",
            object_class_id=int(class_ids[i]),
            object_class_name=header.object_class_names[int(class_ids[i])],
            obj_feat=obj_feat[i],
            glob_feat=glob_feat[i],
            labels={},
        )
        for i in range(count)
    ]
    metadata = {
        "generator": "ood",
        "seed": rng.seed,
        "stream_id": rng.stream_id,
        "shift": shift,
        "count": count,
        "base_spec": {
            "num_classes": spec.num_classes,
            "obj_dim": spec.obj_dim,
            "glob_dim": spec.glob_dim,
            "center_scale": spec.center_scale,
            "cluster_scale": spec.cluster_scale,
            "num_object_classes": spec.num_object_classes,
        },
    }
    return make_dataset(header, records), metadata


def with_noise_rate(spec: BlobSpec, rate: float) -> BlobSpec:
    """Copy of ``spec`` with a different label-noise rate."""
    return replace(spec, label_noise_rate=rate)
