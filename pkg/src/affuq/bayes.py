"""Posterior sampling and predictive-uncertainty decomposition.

Two samplers produce sets of category-probability vectors for one input:

* MC dropout: repeated forward passes through one trained head with a fresh
  dropout mask per pass;
* deep ensembles: one mask-free pass through each independently trained
  member.

From a sample set {p_1 .. p_M} the predictive mean is the arithmetic
average, the aleatoric covariance is the average of diag(p_m) - p_m p_m^T,
and the epistemic covariance is the sample covariance of the p_m around
their mean.  The two parts always add up to diag(mean) - mean mean^T; the
decomposition enforces that identity to 1e-9 before reporting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Action, Dataset, FeatureRecord
from .errors import AffuqError, ConsistencyError, InvalidInputError
from .model import HeadConfig, HeadParams, MaskSampler, forward
from .numeric import RngStream
from .train import TrainConfig, train

DECOMPOSITION_TOL = 1e-9

METHOD_MC_DROPOUT = "mc_dropout"
METHOD_ENSEMBLE = "ensemble"


@dataclass(frozen=True)
class PosteriorSampleSet:
    """M probability vectors from one sampler, in pass/member order."""

    samples: np.ndarray  # (M, R)
    method: str
    provenance: dict

    def __post_init__(self):
        if self.method not in (METHOD_MC_DROPOUT, METHOD_ENSEMBLE):
            raise InvalidInputError(f"unknown sampling method {self.method!r}")
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError(
                f"samples must be a (M, R) array with M, R >= 1, got {arr.shape}"
            )
        if np.any(arr < -1e-12) or np.any(np.abs(arr.sum(axis=1) - 1.0) > 1e-9):
            raise InvalidInputError("every sample must be a probability vector")
        object.__setattr__(self, "samples", arr)

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def num_categories(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class EnsembleModel:
    """Independently trained heads sharing one architecture."""

    members: tuple[HeadParams, ...]
    config: HeadConfig
    member_streams: tuple[tuple[int, int], ...]  # (seed, stream_id) per member

    def __post_init__(self):
        if len(self.members) < 1:
            raise InvalidInputError("an ensemble needs at least one member")
        if len(self.member_streams) != len(self.members):
            raise InvalidInputError("one stream record per member is required")


@dataclass(frozen=True)
class UncertaintyReport:
    """Predictive mean plus the two covariance components for one input."""

    mean_p: np.ndarray
    predicted_class: int
    sigma_a: np.ndarray
    sigma_e: np.ndarray
    trace_a: float
    trace_e: float
    predicted_class_var_a: float
    predicted_class_var_e: float
    method: str

    def to_json_dict(self, full: bool = True) -> dict:
        out = {
            "method": self.method,
            "mean_p": self.mean_p.tolist(),
            "predicted_class": self.predicted_class,
            "trace_a": self.trace_a,
            "trace_e": self.trace_e,
            "predicted_class_var_a": self.predicted_class_var_a,
            "predicted_class_var_e": self.predicted_class_var_e,
        }
        if full:
            out["sigma_a"] = self.sigma_a.tolist()
            out["sigma_e"] = self.sigma_e.tolist()
        return out


def mc_dropout_sample(
    params: HeadParams,
    config: HeadConfig,
    record: FeatureRecord,
    num_samples: int,
    rng: RngStream,
) -> PosteriorSampleSet:
    """M stochastic forward passes with dropout left on.

    The masks come from ``rng`` in pass order, so identical (stream, input,
    M) calls reproduce the same sample set.  ``config.dropout_rate`` of 0
    degenerates to M identical deterministic passes.
    """
    if num_samples < 1:
        raise InvalidInputError(f"num_samples must be >= 1, got {num_samples}")
    sampler = MaskSampler(config, config.dropout_rate, rng)
    rows = []
    for _ in range(num_samples):
        trace = forward(
            params, record.object_class_id, record.obj_feat, record.glob_feat,
            sampler.next_mask(),
        )
        rows.append(trace.probs)
    return PosteriorSampleSet(
        samples=np.stack(rows),
        method=METHOD_MC_DROPOUT,
        provenance={
            "seed": rng.seed,
            "stream_id": rng.stream_id,
            "num_samples": num_samples,
            "dropout_rate": config.dropout_rate,
        },
    )


def ensemble_train(
    dataset: Dataset,
    action: Action,
    head_config: HeadConfig,
    train_config: TrainConfig,
    num_members: int,
) -> tuple[EnsembleModel, list[list[dict]]]:
    """Train ``num_members`` heads with member-specific init and shuffle
    streams derived from ``train_config.seed``.

    Returns the ensemble and the per-member training logs.  A failure in
    any member is re-raised with the member index attached.
    """
    if num_members < 1:
        raise InvalidInputError(f"num_members must be >= 1, got {num_members}")
    base = RngStream(train_config.seed)
    members, streams, logs = [], [], []
    for index in range(num_members):
        member_rng = base.derive("member", index)
        try:
            params, log = train(dataset, action, head_config, train_config, member_rng)
        except AffuqError as exc:
            raise type(exc)(f"member {index}: {exc}") from exc
        members.append(params)
        streams.append((member_rng.seed, member_rng.stream_id))
        logs.append(log)
    return EnsembleModel(
        members=tuple(members),
        config=head_config,
        member_streams=tuple(streams),
    ), logs


def ensemble_sample(ensemble: EnsembleModel, record: FeatureRecord) -> PosteriorSampleSet:
    """One deterministic (mask-free) pass per member, in member order."""
    rows = [
        forward(member, record.object_class_id, record.obj_feat, record.glob_feat).probs
        for member in ensemble.members
    ]
    return PosteriorSampleSet(
        samples=np.stack(rows),
        method=METHOD_ENSEMBLE,
        provenance={"member_streams": list(ensemble.member_streams)},
    )


def _sample_mean(samples: np.ndarray) -> np.ndarray:
    # centered around the first sample: when every sample is identical the
    # deviations are exactly zero, so the mean is exactly that sample
    return samples[0] + (samples - samples[0]).mean(axis=0)


def predictive_mean(sample_set: PosteriorSampleSet) -> tuple[np.ndarray, int]:
    """Arithmetic mean of the samples and its argmax (ties break to the
    lowest index)."""
    mean_p = _sample_mean(sample_set.samples)
    return mean_p, int(np.argmax(mean_p))


def aleatoric_cov(sample_set: PosteriorSampleSet) -> np.ndarray:
    """Average over samples of diag(p) - p p^T."""
    total = np.zeros((sample_set.num_categories,) * 2)
    for p in sample_set.samples:
        total += np.diag(p) - np.outer(p, p)
    return total / sample_set.num_samples


def epistemic_cov(sample_set: PosteriorSampleSet) -> np.ndarray:
    """Average outer product of deviations from the sample mean."""
    mean_p = _sample_mean(sample_set.samples)
    total = np.zeros((sample_set.num_categories,) * 2)
    for p in sample_set.samples:
        dev = p - mean_p
        total += np.outer(dev, dev)
    return total / sample_set.num_samples


def decompose(sample_set: PosteriorSampleSet) -> UncertaintyReport:
    """Full uncertainty report for one sample set.

    Verifies that the two covariance parts reconstruct
    diag(mean) - mean mean^T elementwise before returning.
    """
    mean_p, predicted = predictive_mean(sample_set)
    sigma_a = aleatoric_cov(sample_set)
    sigma_e = epistemic_cov(sample_set)
    total = np.diag(mean_p) - np.outer(mean_p, mean_p)
    gap = np.max(np.abs(sigma_a + sigma_e - total))
    if gap > DECOMPOSITION_TOL:
        raise ConsistencyError(
            f"covariance decomposition violated by {gap:.3e} "
            f"(tolerance {DECOMPOSITION_TOL})"
        )
    return UncertaintyReport(
        mean_p=mean_p,
        predicted_class=predicted,
        sigma_a=sigma_a,
        sigma_e=sigma_e,
        trace_a=float(np.trace(sigma_a)),
        trace_e=float(np.trace(sigma_e)),
        predicted_class_var_a=float(sigma_a[predicted, predicted]),
        predicted_class_var_e=float(sigma_e[predicted, predicted]),
        method=sample_set.method,
    )
