"""Construction and wiring of the seven-network adaptation suite.

The suite holds a feature learner, a class predictor, a domain
discriminator over conditioned features, two feature translators (one per
direction), and one sample discriminator per domain. Translators map the
feature space onto itself so the round-trip composition is well typed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import DimensionError, Tensor, exp
from .conditioning import (
    ConditioningPolicy,
    RandomizedMaps,
    build_randomized_maps,
    condition,
    conditioned_width,
    uses_randomized,
)
from .nn import Mlp, make_mlp

NETWORK_ORDER = (
    "features",
    "predictor",
    "domain_disc",
    "s2t",
    "t2s",
    "source_disc",
    "target_disc",
)


@dataclass(frozen=True)
class ArchConfig:
    input_dim: int
    num_classes: int
    feature_dim: int = 16
    feature_hidden: int = 64
    domain_disc_hidden: int = 64
    translator_hidden: int = 32
    sample_disc_hidden: int = 32
    hidden_activation: str = "relu"
    cond_threshold: int = 4096
    cond_randomized_dim: int = 1024
    detach_predictions: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        dims = (
            self.input_dim,
            self.feature_dim,
            self.feature_hidden,
            self.domain_disc_hidden,
            self.translator_hidden,
            self.sample_disc_hidden,
            self.cond_randomized_dim,
        )
        if min(dims) < 1:
            raise ValueError(f"all dims must be >= 1, got {dims}")

    def policy(self) -> ConditioningPolicy:
        return ConditioningPolicy(
            threshold=self.cond_threshold,
            randomized_dim=self.cond_randomized_dim,
            detach_predictions=self.detach_predictions,
        )

    def domain_disc_in_dim(self) -> int:
        return conditioned_width(self.feature_dim, self.num_classes, self.policy())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**d)


@dataclass
class ModelSuite:
    features: Mlp  # input -> feature space
    predictor: Mlp  # feature -> class log-probabilities
    domain_disc: Mlp  # conditioned feature -> domain logit (sigmoid head)
    s2t: Mlp  # source-style feature -> target-style feature
    t2s: Mlp
    source_disc: Mlp  # feature -> "is a real source feature" logit
    target_disc: Mlp
    maps: RandomizedMaps | None
    arch: ArchConfig

    def networks(self) -> dict[str, Mlp]:
        return {name: getattr(self, name) for name in NETWORK_ORDER}

    def parameters(self) -> list[Tensor]:
        # fixed network order; randomized maps are deliberately excluded
        out: list[Tensor] = []
        for name in NETWORK_ORDER:
            out.extend(getattr(self, name).parameters())
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def condition(self, f: Tensor, p: Tensor) -> Tensor:
        return condition(f, p, self.arch.policy(), self.maps)


def build_suite(cfg: ArchConfig) -> ModelSuite:
    """Initialize all seven networks deterministically from cfg.seed.

    Each network gets its own spawned RNG stream, so changing one width
    leaves the other networks' draws untouched.
    """
    streams = np.random.SeedSequence(cfg.seed).spawn(len(NETWORK_ORDER) + 1)
    rngs = {
        name: np.random.default_rng(s) for name, s in zip(NETWORK_ORDER, streams)
    }
    act = cfg.hidden_activation
    dd_in = cfg.domain_disc_in_dim()

    suite = ModelSuite(
        features=make_mlp(
            (cfg.input_dim, cfg.feature_hidden, cfg.feature_hidden, cfg.feature_dim),
            rngs["features"],
            hidden_activation=act,
        ),
        predictor=make_mlp(
            (cfg.feature_dim, cfg.num_classes),
            rngs["predictor"],
            hidden_activation=act,
            output_activation="log_softmax",
        ),
        domain_disc=make_mlp(
            (dd_in, cfg.domain_disc_hidden, cfg.domain_disc_hidden, 1),
            rngs["domain_disc"],
            hidden_activation=act,
            output_activation="sigmoid",
        ),
        s2t=make_mlp(
            (
                cfg.feature_dim,
                cfg.translator_hidden,
                cfg.translator_hidden,
                cfg.translator_hidden,
                cfg.feature_dim,
            ),
            rngs["s2t"],
            hidden_activation=act,
        ),
        t2s=make_mlp(
            (
                cfg.feature_dim,
                cfg.translator_hidden,
                cfg.translator_hidden,
                cfg.translator_hidden,
                cfg.feature_dim,
            ),
            rngs["t2s"],
            hidden_activation=act,
        ),
        source_disc=make_mlp(
            (cfg.feature_dim, cfg.sample_disc_hidden, cfg.sample_disc_hidden, 1),
            rngs["source_disc"],
            hidden_activation=act,
            output_activation="sigmoid",
        ),
        target_disc=make_mlp(
            (cfg.feature_dim, cfg.sample_disc_hidden, cfg.sample_disc_hidden, 1),
            rngs["target_disc"],
            hidden_activation=act,
            output_activation="sigmoid",
        ),
        maps=None,
        arch=cfg,
    )
    if uses_randomized(cfg.feature_dim, cfg.num_classes, cfg.policy()):
        maps_seed = int(streams[-1].generate_state(1)[0])
        suite.maps = build_randomized_maps(
            cfg.feature_dim, cfg.num_classes, cfg.cond_randomized_dim, maps_seed
        )
    return suite


def predict(suite: ModelSuite, x: Tensor) -> tuple[Tensor, Tensor]:
    """Feature and class-probability batch for inputs x.

    Probability rows are exp of the predictor's log-softmax output, so
    they sum to one up to rounding.
    """
    if x.data.ndim != 2 or x.shape[1] != suite.arch.input_dim:
        raise DimensionError(
            f"predict expects [batch, {suite.arch.input_dim}], got {x.shape}"
        )
    f = suite.features(x)
    p = exp(suite.predictor(f))
    return f, p


def translate(suite: ModelSuite, f: Tensor, direction: str) -> Tensor:
    if direction == "s2t":
        return suite.s2t(f)
    if direction == "t2s":
        return suite.t2s(f)
    raise ValueError(f"direction must be 's2t' or 't2s', got {direction!r}")
