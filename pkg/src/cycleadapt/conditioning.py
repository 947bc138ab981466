"""Conditioning of features on classifier predictions for the domain discriminator.

Two strategies, picked by output size: the exact flattened outer product of
feature and prediction vectors, or a randomized multilinear map that keeps
inner products in expectation when the exact product would be too wide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import DimensionError, Tensor, detach, mul, row_outer

DEFAULT_THRESHOLD = 4096
DEFAULT_RANDOMIZED_DIM = 1024
# hard guard against accidentally materializing giant exact products
DEFAULT_EXACT_CAP = 1 << 22


@dataclass(frozen=True)
class RandomizedMaps:
    """Fixed projection matrices for the randomized conditioning branch.

    Entries are standard normal, drawn once at construction and never
    touched by the optimizer. (seed, dims) fully determine the matrices,
    which is what checkpoints store.
    """

    r_f: np.ndarray  # [d, dim_f]
    r_p: np.ndarray  # [d, dim_p]
    seed: int

    @property
    def out_dim(self) -> int:
        return self.r_f.shape[0]

    @property
    def dim_f(self) -> int:
        return self.r_f.shape[1]

    @property
    def dim_p(self) -> int:
        return self.r_p.shape[1]


def build_randomized_maps(dim_f: int, dim_p: int, d: int, seed: int) -> RandomizedMaps:
    if min(dim_f, dim_p, d) < 1:
        raise ValueError("map dims must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    r_f = rng.standard_normal((d, dim_f))
    r_p = rng.standard_normal((d, dim_p))
    return RandomizedMaps(r_f=r_f, r_p=r_p, seed=seed)


@dataclass(frozen=True)
class ConditioningPolicy:
    """Dispatch rule: exact outer product while dim_f*dim_p <= threshold,
    randomized map of width ``randomized_dim`` beyond it."""

    threshold: int = DEFAULT_THRESHOLD
    randomized_dim: int = DEFAULT_RANDOMIZED_DIM
    exact_cap: int = DEFAULT_EXACT_CAP
    detach_predictions: bool = False


def uses_randomized(dim_f: int, dim_p: int, policy: ConditioningPolicy) -> bool:
    return dim_f * dim_p > policy.threshold


def conditioned_width(dim_f: int, dim_p: int, policy: ConditioningPolicy) -> int:
    if uses_randomized(dim_f, dim_p, policy):
        return policy.randomized_dim
    return dim_f * dim_p


def multilinear_condition(
    f: Tensor, p: Tensor, cap: int = DEFAULT_EXACT_CAP
) -> Tensor:
    """Row-wise flattened outer product of features and predictions.

    Callers are expected to pass probability rows for ``p``; the map itself
    is bilinear in both arguments and gradients flow into each.
    """
    if f.data.ndim != 2 or p.data.ndim != 2:
        raise DimensionError(
            f"multilinear_condition needs [batch, df] and [batch, dp], "
            f"got {f.shape} and {p.shape}"
        )
    width = f.shape[1] * p.shape[1]
    if width > cap:
        raise DimensionError(
            f"exact conditioning width {width} exceeds cap {cap}; "
            "use the randomized branch"
        )
    return row_outer(f, p)


def randomized_condition(f: Tensor, p: Tensor, maps: RandomizedMaps) -> Tensor:
    """(1/sqrt(d)) * (f R_f^T) elementwise* (p R_p^T), row by row."""
    if f.data.ndim != 2 or p.data.ndim != 2:
        raise DimensionError(
            f"randomized_condition needs 2-d inputs, got {f.shape} and {p.shape}"
        )
    if f.shape[1] != maps.dim_f or p.shape[1] != maps.dim_p:
        raise DimensionError(
            f"map dims ({maps.dim_f}, {maps.dim_p}) do not match "
            f"inputs ({f.shape[1]}, {p.shape[1]})"
        )
    proj_f = f @ Tensor(maps.r_f.T)
    proj_p = p @ Tensor(maps.r_p.T)
    return mul(mul(proj_f, proj_p), 1.0 / np.sqrt(maps.out_dim))


def condition(
    f: Tensor,
    p: Tensor,
    policy: ConditioningPolicy,
    maps: RandomizedMaps | None = None,
) -> Tensor:
    """Apply the policy's branch to a batch of (feature, prediction) rows."""
    if policy.detach_predictions:
        p = detach(p)
    if uses_randomized(f.shape[1], p.shape[1], policy):
        if maps is None:
            raise ValueError(
                "randomized conditioning selected but no RandomizedMaps supplied"
            )
        if maps.out_dim != policy.randomized_dim:
            raise DimensionError(
                f"maps width {maps.out_dim} != policy randomized_dim "
                f"{policy.randomized_dim}"
            )
        return randomized_condition(f, p, maps)
    return multilinear_condition(f, p, cap=policy.exact_cap)
