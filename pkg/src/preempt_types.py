"""Type definitions for robustification experiments.

This module contains dataclasses and type definitions used throughout the package:
hyperparameter bundles, per-example reports and the evaluation report.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from .constants import (
    ABSTAIN,
    BATCH_SIZE,
    BETA_L2,
    BETA_LINF,
    EPOCHS,
    EPS_PRIME_FRACTIONS,
    EVAL_RESTARTS,
    INNER_MAX_STEPS,
    INNER_MIN_STEPS,
    LEARNING_RATE,
    LEMMA1_THRESHOLD,
    MAX_ITER,
    MOMENTUM,
    N_SAMPLES,
    PGD_RESTARTS,
    PGD_STEP_FRACTION,
    PGD_STEPS,
    SMOOTH_CONF_ALPHA,
    SMOOTH_M,
    SMOOTH_N_CERT,
    SMOOTH_N_PRED,
    SMOOTH_SIGMA,
    SUPPORTED_NORMS,
    WEIGHT_DECAY,
)

Vec = NDArray[np.float64]

INIT_MODES = ("at_original", "random_in_delta_ball")
OPTIMIZERS = ("projected_gd", "tanh_rmsprop")
GRAD_MODES = ("first_order", "exact")
TRAIN_MODES = ("plain", "adversarial", "preempt_robust")


def parse_norm(value: object) -> float:
    """Parse a norm order given as 2, "2", "inf" or math.inf.

    Args:
        value: Norm order in any accepted spelling

    Returns:
        2.0 or math.inf
    """
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "linf", "infinity"):
            return math.inf
        value = float(text)
    p = float(value)  # type: ignore[arg-type]
    if p not in SUPPORTED_NORMS:
        raise ValueError(f"unsupported norm order {value!r}; expected 2 or inf")
    return p


def norm_label(p: float) -> str:
    """Short label used in CSV rows and file names."""
    return "inf" if math.isinf(p) else "2"


@dataclass(frozen=True)
class PerturbSpec:
    """Norm order and budgets of the adversary (eps) and defender (delta)."""

    p: float
    eps: float
    delta: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", parse_norm(self.p))
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.delta is None:
            object.__setattr__(self, "delta", float(self.eps))
        if self.budget < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")

    @property
    def budget(self) -> float:
        """Defender budget as a plain float."""
        return float(self.delta)  # type: ignore[arg-type]


@dataclass(frozen=True)
class PgdConfig:
    """T-step PGD settings; step_size None means eps / 4."""

    steps: int = PGD_STEPS
    step_size: Optional[float] = None
    random_start: bool = True
    restarts: int = PGD_RESTARTS

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")

    def alpha(self, eps: float) -> float:
        """Step size for a ball of radius eps."""
        if self.step_size is not None:
            return self.step_size
        return PGD_STEP_FRACTION * eps


@dataclass(frozen=True)
class RobustifyConfig:
    """Bi-level robustification loop settings; lr None picks the per-norm default."""

    max_iter: int = MAX_ITER
    inner: PgdConfig = field(default_factory=PgdConfig)
    n_samples: int = N_SAMPLES
    lr: Optional[float] = None
    init_mode: str = "at_original"
    optimizer: str = "projected_gd"
    grad_mode: str = "first_order"

    def __post_init__(self) -> None:
        if self.max_iter < 0:
            raise ValueError(f"max_iter must be >= 0, got {self.max_iter}")
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.lr is not None and not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")

    def beta(self, p: float) -> float:
        """Update step size for the given norm."""
        if self.lr is not None:
            return self.lr
        return BETA_LINF if math.isinf(p) else BETA_L2


@dataclass(frozen=True)
class Lemma1Report:
    """Outcome of the h-tilde <= -log(0.5) certificate check."""

    h_tilde: float
    satisfied: bool
    implied_bound: Optional[float]
    preserved: bool
    threshold: float = LEMMA1_THRESHOLD


@dataclass(frozen=True)
class JacobianCheck:
    """Analytic vs finite-difference Jacobian of the l2 FGSM map."""

    analytic_jacobian: Vec
    fd_jacobian: Vec
    hessian: Vec
    sigma: float
    grad_norm: float
    bound_factor: float
    projection_k: float
    max_abs_error: float


@dataclass(frozen=True)
class WhiteboxConfig:
    """Adaptive white-box adversary settings.

    The adversary reuses the defender's robustification hyperparameters for
    reconstruction. eps_prime_grid None means the default fractions of eps.
    """

    recon: RobustifyConfig = field(default_factory=RobustifyConfig)
    attack: PgdConfig = field(default_factory=lambda: PgdConfig(restarts=EVAL_RESTARTS))
    eps_prime_grid: Optional[Tuple[float, ...]] = None

    def eps_primes(self, eps: float) -> Tuple[float, ...]:
        """Absolute eps' values for a budget eps."""
        if self.eps_prime_grid is None:
            return tuple(fraction * eps for fraction in EPS_PRIME_FRACTIONS)
        return tuple(self.eps_prime_grid)


@dataclass(frozen=True)
class WhiteboxCandidate:
    """One adversarial candidate produced at budget eps_prime."""

    eps_prime: float
    x_adv: Vec
    predicted: int


@dataclass(frozen=True)
class WhiteboxResult:
    """Reconstruction plus all swept candidates."""

    x_hat: Vec
    candidates: List[WhiteboxCandidate]


@dataclass(frozen=True)
class WhiteboxVerdict:
    """Per-example robustness verdict against the white-box adversary."""

    robust: bool
    attack_dists: List[float]
    misclassified: List[bool]
    valid: List[bool]


@dataclass(frozen=True)
class DistanceStats:
    """Distances of reconstructions and attacks to the held-out original."""

    recon_dists: List[float]
    attack_dists: List[float]
    frac_recon_near_boundary: float
    frac_attack_outside: float


@dataclass(frozen=True)
class TrainConfig:
    """Training loop settings.

    beta None means eps (train-time minimizing step). lr_decay_epochs lists the
    epochs after which the learning rate is multiplied by 0.1.
    """

    spec: PerturbSpec
    epochs: int = EPOCHS
    inner_min_steps: int = INNER_MIN_STEPS
    inner_max_steps: int = INNER_MAX_STEPS
    lr: float = LEARNING_RATE
    batch_size: int = BATCH_SIZE
    mode: str = "preempt_robust"
    beta: Optional[float] = None
    step_size: Optional[float] = None
    momentum: float = MOMENTUM
    weight_decay: float = WEIGHT_DECAY
    lr_decay_epochs: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.epochs < 0 or self.inner_min_steps < 0 or self.inner_max_steps < 0:
            raise ValueError("epochs and inner step counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")

    def min_step(self) -> float:
        """Step size of the L-step loss-minimizing PGD."""
        return self.beta if self.beta is not None else self.spec.eps

    def max_step(self) -> float:
        """Step size of the K-step loss-maximizing PGD."""
        if self.step_size is not None:
            return self.step_size
        return PGD_STEP_FRACTION * self.spec.eps


@dataclass(frozen=True)
class HistoryRow:
    """One line of the training loss history."""

    epoch: int
    split: str
    loss: float
    acc: float


@dataclass(frozen=True)
class SmoothConfig:
    """Randomized smoothing settings."""

    sigma: float = SMOOTH_SIGMA
    n_pred: int = SMOOTH_N_PRED
    n_cert: int = SMOOTH_N_CERT
    M: int = SMOOTH_M
    conf_alpha: float = SMOOTH_CONF_ALPHA

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if min(self.n_pred, self.n_cert, self.M) < 1:
            raise ValueError("sample counts must be >= 1")
        if not 0 < self.conf_alpha < 1:
            raise ValueError(f"conf_alpha must be in (0, 1), got {self.conf_alpha}")


@dataclass(frozen=True)
class CertifyResult:
    """Certification outcome; predicted is ABSTAIN when the bound is below 0.5."""

    predicted: int
    radius: float
    p_lower: float
    count: int

    @property
    def abstain(self) -> bool:
        """Whether certification abstained."""
        return self.predicted == ABSTAIN


@dataclass(frozen=True)
class ReportRow:
    """One row of the accuracy table."""

    norm: str
    eps: float
    model: str
    preemption: str
    clean: float
    grey_pgd: float
    grey_pgd_restarts: float
    white_pgd: Optional[float]
    n: int


@dataclass(frozen=True)
class DistanceRecord:
    """One white-box candidate with its distances to the original."""

    example_id: int
    recon_dist: float
    eps_prime: float
    attack_dist: float
    misclassified: bool
    valid: bool


@dataclass(frozen=True)
class CertRecord:
    """One certification line."""

    example_id: int
    robustified: bool
    predicted: int
    correct: bool
    p_lower: float
    radius: float
    abstain: bool


@dataclass(frozen=True)
class SmoothEmpiricalRow:
    """Empirical accuracies of the smoothed classifier."""

    preemption: str
    clean: float
    grey_rpgd: float
    grey_rpgd_restarts: float
    n: int


@dataclass
class EvalReport:
    """Everything one pipeline run produces."""

    seed: int
    config_snapshot: Dict[str, Dict[str, str]]
    rows: List[ReportRow] = field(default_factory=list)
    distances: List[DistanceRecord] = field(default_factory=list)
    distance_stats: Optional[DistanceStats] = None
    eps: float = 0.0
    lemma1: List[Tuple[int, Lemma1Report]] = field(default_factory=list)
    gradnorms: List[Tuple[str, str, List[float]]] = field(default_factory=list)
    history: List[HistoryRow] = field(default_factory=list)
    certify: List[CertRecord] = field(default_factory=list)
    smooth_empirical: List[SmoothEmpiricalRow] = field(default_factory=list)
    metadata: Dict[str, str] = field(default_factory=dict)

    @property
    def lemma1_satisfied_fraction(self) -> float:
        """Fraction of robustified points whose attack loss stays below -log 0.5."""
        if not self.lemma1:
            return 0.0
        return sum(1 for _, rep in self.lemma1 if rep.satisfied) / len(self.lemma1)


@dataclass(frozen=True)
class SelfTestCheck:
    """One acceptance check; only hard checks can fail the selftest."""

    name: str
    passed: bool
    value: float
    threshold: float
    hard: bool = True
