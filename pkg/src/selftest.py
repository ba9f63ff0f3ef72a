"""Acceptance self-test.

This module contains the SelfTest class that handles:
- Gradient, Jacobian and certificate property checks on random toy models
- Linear-model, smoothing and degeneracy oracles
- A small fixed experiment for the data-dependent checks
- Adversarial against preempt_robust comparisons, grey-box and white-box
- Writing selftest.csv and failing on any hard check
"""

import logging
import math
from dataclasses import replace
from typing import Callable, List, Optional

import numpy as np
from scipy.stats import binom

from .attack import pgd, pgd_restarts, randomized_pgd
from .classifier import Classifier
from .config import ExperimentConfig, Overrides, load_config
from .constants import (
    CP_CHECK_ATOL,
    CP_CHECK_CONFIGS,
    EXPLODING_RATIO,
    EXPLODING_RUNS,
    GRAD_CHECK_MODELS,
    GRAD_CHECK_RTOL,
    GRAD_FD_STEP,
    LEMMA1_TARGET_FRACTION,
    LEMMA2_CHECK_ATOL,
    LEMMA2_CHECK_MODELS,
    LINEAR_ORACLE_ATOL,
    OUTPUT_DIR,
    PROP1_CHECK_DRAWS,
    RECON_FAR_FRACTION,
    RECON_FAR_TARGET,
    ROBUSTIFY_GAIN_TARGET,
    SELFTEST_CSV,
    SELFTEST_HEADER,
    SOUNDNESS_ATTACKS,
    SOUNDNESS_MIN_POINTS,
)
from .errors import AcceptanceError, InvariantViolation, NumericalAbortError
from .geometry import lp_norm
from .jacobian import lemma2_jacobian, prop1_bound_check, step_jacobian
from .pipeline import NONE, OURS, Experiment
from .preempt import check_lemma1, robustify, robustify_with_trace
from .preempt_types import (
    PerturbSpec,
    PgdConfig,
    RobustifyConfig,
    SelfTestCheck,
    SmoothConfig,
    TrainConfig,
)
from .report import write_csv
from .smoothing import certify, clopper_pearson_lower, robustify_smoothed, smoothed_predict
from .smoothing import smoothed_soft, soundness_check
from .trainer import train
from .whitebox import eval_whitebox, whitebox_attack

SELFTEST_SETTINGS: Overrides = {
    ("data", "kind"): "gauss2",
    ("data", "n_per_class"): "1000",
    ("data", "dim"): "8",
    ("model", "hidden"): "16",
    ("model", "activation"): "tanh",
    ("model", "modes"): "adversarial, preempt_robust",
    ("train", "epochs"): "4",
    ("train", "batch_size"): "32",
    ("perturb", "norms"): "inf",
    ("perturb", "eps_inf"): "0.1",
    ("perturb", "eps_l2"): "0.3",
    ("robustify", "max_iter"): "30",
    ("attack", "restarts"): "5",
    ("run", "n_eval"): "20",
    ("smooth", "sigma"): "0.25",
}

SMOOTH_ROBUSTIFY_POINTS = 50
DEGENERACY_EPOCHS = 2


def selftest_config(seed: int, output_dir: str) -> ExperimentConfig:
    """Fixed small configuration; only the seed and output directory vary."""
    overrides = dict(SELFTEST_SETTINGS)
    overrides[("run", "seed")] = str(seed)
    overrides[("output", "dir")] = output_dir
    return load_config(None, overrides)


def binomial_lower_bisection(count: int, n: int, alpha: float, iterations: int = 200) -> float:
    """Smallest p with P(X >= count | n, p) >= alpha, found by bisection on the binomial tail."""
    if count == 0:
        return 0.0
    low, high = 0.0, 1.0
    for _ in range(iterations):
        mid = 0.5 * (low + high)
        if binom.sf(count - 1, n, mid) < alpha:
            low = mid
        else:
            high = mid
    return 0.5 * (low + high)


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-3)
    return float(np.linalg.norm(analytic - numeric)) / scale


def _central_difference(fn: Callable[[np.ndarray], float], values: np.ndarray) -> np.ndarray:
    """Gradient of fn at values by central differences, perturbing values in place."""
    out = np.empty_like(values)
    flat, grad = values.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + GRAD_FD_STEP
        up = fn(values)
        flat[i] = saved - GRAD_FD_STEP
        down = fn(values)
        flat[i] = saved
        grad[i] = (up - down) / (2.0 * GRAD_FD_STEP)
    return out


def _random_tanh_model(rng: np.random.Generator, max_dim: int = 6) -> Classifier:
    dim = int(rng.integers(2, max_dim + 1))
    hidden = int(rng.integers(3, 9))
    classes = int(rng.integers(2, 4))
    return Classifier.mlp([dim, hidden, classes], rng, "tanh")


class SelfTest:
    """Runs every acceptance check and collects their outcomes."""

    def __init__(self, cfg: ExperimentConfig) -> None:
        """Initialize the self-test.

        Args:
            cfg: Self-test configuration (see selftest_config)
        """
        self.logger = logging.getLogger(__name__)
        self.cfg = cfg
        self.experiment = Experiment(cfg)
        self.streams = self.experiment.streams
        self.checks: List[SelfTestCheck] = []

    def _record(
        self, name: str, value: float, threshold: float, passed: bool, hard: bool = True
    ) -> None:
        check = SelfTestCheck(name, passed, value, threshold, hard)
        self.checks.append(check)
        level = logging.INFO if passed or not hard else logging.ERROR
        verdict = "pass" if passed else "FAIL"
        self.logger.log(
            level, "%s: %s (value %.6g, threshold %.6g)", name, verdict, value, threshold
        )

    # ====== Model-free property checks ======

    def check_gradients(self) -> None:
        """Input and parameter gradients against central differences."""
        rng = self.streams.generator("selftest/gradients")
        worst = 0.0
        for _ in range(GRAD_CHECK_MODELS):
            model = _random_tanh_model(rng)
            x = rng.uniform(size=model.input_dim)
            y = int(rng.integers(model.num_classes))
            fd_x = _central_difference(lambda z: model.loss(z, y), x.copy())
            worst = max(worst, _relative_error(model.input_grad(x, y), fd_x))
            analytic = model.param_grad(x, y)
            for layer, grad in zip(model.layers, analytic):
                fd_w = _central_difference(lambda _: model.loss(x, y), layer.weights)
                fd_b = _central_difference(lambda _: model.loss(x, y), layer.bias)
                worst = max(worst, _relative_error(grad.weights, fd_w))
                worst = max(worst, _relative_error(grad.bias, fd_b))
        self._record("gradient_fd", worst, GRAD_CHECK_RTOL, worst < GRAD_CHECK_RTOL)

    def check_lemma2(self) -> None:
        """Closed-form l2 step Jacobian against finite differences; identity for zero curvature."""
        rng = self.streams.generator("selftest/lemma2")
        worst = 0.0
        done = 0
        while done < LEMMA2_CHECK_MODELS:
            model = _random_tanh_model(rng, max_dim=8)
            x = rng.uniform(size=model.input_dim)
            y = int(rng.integers(model.num_classes))
            if np.linalg.norm(model.input_grad(x, y)) < 1e-2:
                continue
            worst = max(worst, lemma2_jacobian(model, x, y, 0.05).max_abs_error)
            done += 1
        self._record("lemma2_jacobian", worst, LEMMA2_CHECK_ATOL, worst < LEMMA2_CHECK_ATOL)

        grad = rng.standard_normal(4)
        flat = step_jacobian(np.zeros((4, 4)), grad, 0.05)
        error = float(np.abs(flat - np.eye(4)).max())
        self._record("lemma2_zero_hessian_identity", error, 0.0, error == 0.0)

    def check_prop1(self) -> None:
        """Step Jacobian norm bound on random draws."""
        rng = self.streams.generator("selftest/prop1")
        violations = 0
        for _ in range(PROP1_CHECK_DRAWS):
            model = _random_tanh_model(rng)
            x = rng.uniform(size=model.input_dim)
            y = int(rng.integers(model.num_classes))
            a = rng.standard_normal(model.input_dim)
            k = float(rng.uniform(0.05, 1.0))
            alpha = float(rng.uniform(0.01, 0.2))
            try:
                holds, _ = prop1_bound_check(model, x, y, alpha, a, k)
            except ValueError:
                continue
            violations += 0 if holds else 1
        self._record("prop1_bound", float(violations), 0.0, violations == 0)

    def check_linear_oracle(self) -> None:
        """Robustification of a binary linear model reaches the closed-form optimum."""
        rng = self.streams.generator("selftest/linear")
        cfg = RobustifyConfig(max_iter=50, lr=1000.0, inner=PgdConfig(steps=20))
        for p, name in ((math.inf, "linear_oracle_inf"), (2.0, "linear_oracle_l2")):
            worst = 0.0
            for example in range(5):
                weights = rng.standard_normal((2, 4))
                model = Classifier.linear(weights, np.zeros(2))
                x_o = 0.5 + rng.uniform(-0.05, 0.05, size=4)
                spec = PerturbSpec(p, 0.1)
                label = int(model.predict(x_o))
                margin_dir = weights[label] - weights[1 - label]
                if math.isinf(p):
                    x_star = x_o + spec.budget * np.sign(margin_dir)
                else:
                    x_star = x_o + spec.budget * margin_dir / np.linalg.norm(margin_dir)
                x_r = robustify(model, x_o, spec, cfg, self.streams.generator(name, example))
                worst = max(worst, float(np.abs(x_r - x_star).max()))
            self._record(name, worst, LINEAR_ORACLE_ATOL, worst < LINEAR_ORACLE_ATOL)

    def check_clopper_pearson(self) -> None:
        """Clopper-Pearson bound against a bisection on the exact binomial tail."""
        rng = self.streams.generator("selftest/clopper_pearson")
        worst = 0.0
        for _ in range(CP_CHECK_CONFIGS):
            n = int(rng.integers(10, 1001))
            count = int(rng.integers(0, n + 1))
            alpha = float(rng.choice([0.001, 0.01, 0.05]))
            bound = clopper_pearson_lower(count, n, alpha)
            worst = max(worst, abs(bound - binomial_lower_bisection(count, n, alpha)))
        self._record("clopper_pearson_exact", worst, CP_CHECK_ATOL, worst < CP_CHECK_ATOL)

    # ====== Checks on the trained toy model ======

    def check_certificate(self, model: Classifier, spec: PerturbSpec) -> None:
        """Robustified points with h_tilde below the threshold keep their prediction."""
        xs, _ = self.experiment.eval_set(self.cfg.get("run", "n_eval"))
        r_cfg = self.cfg.robustify_config()
        violations = 0
        satisfied = 0
        for i, x_o in enumerate(xs):
            x_r = robustify(model, x_o, spec, r_cfg, self.streams.generator("selftest/defender", i))
            try:
                report = check_lemma1(
                    model, x_o, x_r, spec, None, self.streams.generator("selftest/lemma1", i)
                )
            except InvariantViolation as exc:
                self.logger.error("Example %d: %s", i, exc)
                violations += 1
                continue
            satisfied += int(report.satisfied)
        fraction = satisfied / len(xs) if len(xs) else 0.0
        self._record("lemma1_soundness", float(violations), 0.0, violations == 0)
        self._record(
            "lemma1_satisfied_fraction",
            fraction,
            LEMMA1_TARGET_FRACTION,
            fraction >= LEMMA1_TARGET_FRACTION,
            hard=False,
        )

    def check_exploding_gradient(self, model: Classifier) -> None:
        """Exact update gradients against first-order ones on short l2 runs."""
        spec = PerturbSpec(2.0, self.cfg.eps_for(2.0))
        xs, _ = self.experiment.eval_set(EXPLODING_RUNS)
        base = RobustifyConfig(max_iter=10, inner=PgdConfig(steps=10))
        best_ratio = 0.0
        first_order_ok = True
        for i, x_o in enumerate(xs):
            try:
                first = robustify_with_trace(
                    model, x_o, spec, base, self.streams.generator("selftest/explode", i)
                )
            except NumericalAbortError as exc:
                self.logger.error("First-order run %d aborted: %s", i, exc)
                first_order_ok = False
                continue
            exact_cfg = RobustifyConfig(max_iter=10, inner=PgdConfig(steps=10), grad_mode="exact")
            try:
                exact = robustify_with_trace(
                    model, x_o, spec, exact_cfg, self.streams.generator("selftest/explode", i)
                )
                exact_max = max(exact.grad_norms, default=0.0)
            except NumericalAbortError:
                exact_max = math.inf
            first_max = max(first.grad_norms, default=0.0)
            if first_max > 0:
                best_ratio = max(best_ratio, exact_max / first_max)
        self._record("first_order_finite", 0.0 if first_order_ok else 1.0, 0.0, first_order_ok)
        self._record(
            "exploding_gradient_ratio",
            best_ratio,
            EXPLODING_RATIO,
            best_ratio >= EXPLODING_RATIO,
            hard=False,
        )

    def check_effectiveness(self) -> None:
        """Robustified grey-box accuracy and clean accuracy against the adversarial baseline."""
        rows = {(r.model, r.preemption): r for r in self.experiment.evaluate(whitebox=False)}
        baseline = rows.get(("adversarial", NONE))
        ours = rows.get(("preempt_robust", OURS))
        plain = rows.get(("preempt_robust", NONE))
        if baseline is None or ours is None or plain is None:
            self.logger.warning("Effectiveness checks need both adversarial and preempt_robust")
            return
        gain = ours.grey_pgd - baseline.grey_pgd
        self._record(
            "robustify_grey_gain",
            gain,
            ROBUSTIFY_GAIN_TARGET,
            gain >= ROBUSTIFY_GAIN_TARGET,
            hard=False,
        )
        clean_gap = plain.clean - baseline.clean
        self._record(
            "preempt_clean_not_below_adversarial", clean_gap, 0.0, clean_gap >= 0, hard=False
        )

    def check_whitebox_semantics(self, model: Classifier) -> None:
        """Random-init robustification under l2: where reconstructions land and what they buy."""
        spec = PerturbSpec(2.0, self.cfg.eps_for(2.0))
        r_cfg = replace(self.cfg.robustify_config(), init_mode="random_in_delta_ball")
        wb_cfg = replace(self.cfg.whitebox_config(spec), recon=r_cfg)
        grey_cfg = self.cfg.pgd_config(self.cfg.get("attack", "restarts"))
        xs, ys = self.experiment.eval_set(self.cfg.get("run", "n_eval"))
        far = 0
        white_hits = 0
        grey_hits = 0
        for i, (x_o, y) in enumerate(zip(xs, ys)):
            y_o = int(y)
            x_r = robustify(model, x_o, spec, r_cfg, self.streams.generator("selftest/wb_def", i))
            result = whitebox_attack(
                model, x_r, y_o, spec, wb_cfg, self.streams.generator("selftest/wb_adv", i)
            )
            verdict = eval_whitebox(result.candidates, x_o, y_o, model, spec.eps, spec.p)
            white_hits += int(verdict.robust)
            far += int(lp_norm(result.x_hat - x_o, spec.p) > RECON_FAR_FRACTION * spec.eps)
            x_adv = pgd_restarts(
                model, x_o, y_o, spec, grey_cfg, self.streams.generator("selftest/wb_grey", i)
            )
            grey_hits += int(int(model.predict(x_adv)) == y_o)
        count = max(len(xs), 1)
        far_fraction = far / count
        self._record(
            "whitebox_recon_far_fraction",
            far_fraction,
            RECON_FAR_TARGET,
            far_fraction >= RECON_FAR_TARGET,
            hard=False,
        )
        margin = (white_hits - grey_hits) / count
        self._record("whitebox_not_below_grey", margin, 0.0, margin >= 0, hard=False)

    def check_soundness(self, model: Classifier, attacks: int = SOUNDNESS_ATTACKS) -> None:
        """No randomized PGD attack flips a certified prediction at 0.95 of its radius.

        Candidates are taken in test order until SOUNDNESS_MIN_POINTS correctly
        certified points have been attacked.
        """
        s_cfg = self.cfg.smooth_config()
        xs, ys = self.experiment.eval_set(len(self.experiment.dataset.test_idx))
        checked = 0
        flips = 0
        for i, (x, y) in enumerate(zip(xs, ys)):
            if checked >= SOUNDNESS_MIN_POINTS:
                break
            res = certify(model, x, s_cfg, self.streams.generator("selftest/certify", i))
            if res.abstain or res.predicted != int(y):
                continue
            checked += 1
            flips += soundness_check(
                model, x, res, s_cfg, self.streams.generator("selftest/soundness", i), attacks
            )
        self._record("smoothing_soundness_flips", float(flips), 0.0, flips == 0)
        self._record(
            "smoothing_points_checked",
            float(checked),
            float(SOUNDNESS_MIN_POINTS),
            checked >= SOUNDNESS_MIN_POINTS,
        )

    def check_certified_gain(self, model: Classifier) -> None:
        """Robustified points certify at radius eps more often than raw ones."""
        s_cfg = self.cfg.smooth_config()
        spec = PerturbSpec(2.0, self.cfg.eps_for(2.0))
        r_cfg = self.cfg.robustify_config()
        xs, ys = self.experiment.eval_set(SMOOTH_ROBUSTIFY_POINTS)
        hits = {False: 0, True: 0}
        for i, (x_o, y) in enumerate(zip(xs, ys)):
            x_r = robustify_smoothed(
                model, x_o, spec, r_cfg, s_cfg, self.streams.generator("selftest/smooth_def", i)
            )
            for robustified, x in ((False, x_o), (True, x_r)):
                cert_rng = self.streams.generator("selftest/cert2", i, int(robustified))
                res = certify(model, x, s_cfg, cert_rng)
                hits[robustified] += int(res.predicted == int(y) and res.radius >= spec.eps)
        gain = (hits[True] - hits[False]) / len(ys) if len(ys) else 0.0
        self._record("smoothing_certified_gain", gain, 0.0, gain > 0, hard=False)

    def check_degeneracies(self, model: Classifier, spec: PerturbSpec) -> None:
        """Degenerate settings reproduce the simpler procedure bit for bit."""
        data = self.experiment.dataset
        seed = self.streams.seed("selftest/degeneracy")

        def trace(mode: str, **changes: int) -> List[float]:
            degenerate_spec = PerturbSpec(spec.p, spec.eps, changes.pop("delta", None))
            cfg = TrainConfig(
                spec=degenerate_spec, epochs=DEGENERACY_EPOCHS, mode=mode, batch_size=32, **changes
            )
            return train(model, data, cfg, np.random.default_rng(seed)).step_losses

        robust = trace("preempt_robust", inner_min_steps=0, delta=0)
        adversarial = trace("adversarial")
        self._record("degenerate_preempt_is_adversarial", 0.0, 0.0, robust == adversarial)
        no_attack = trace("adversarial", inner_max_steps=0)
        plain = trace("plain")
        self._record("degenerate_adversarial_is_plain", 0.0, 0.0, no_attack == plain)

        s_cfg = SmoothConfig(sigma=0.0)
        xs, ys = self.experiment.eval_set(10)
        mismatches = 0
        for i, (x, y) in enumerate(zip(xs, ys)):
            rng_a = self.streams.generator("selftest/sigma0", i)
            rng_b = self.streams.generator("selftest/sigma0", i)
            mismatches += int(smoothed_predict(model, x, s_cfg, rng_a) != int(model.predict(x)))
            smoothed_adv = randomized_pgd(model, x, int(y), spec, PgdConfig(), 0.0, s_cfg.M, rng_a)
            plain_adv = pgd(model, x, int(y), spec, PgdConfig(), rng_b)
            mismatches += int(not np.array_equal(smoothed_adv, plain_adv))
            prob, _ = smoothed_soft(model, x, int(y), s_cfg, rng_a)
            mismatches += int(prob != float(model.probabilities(x)[int(y)]))
        self._record("sigma_zero_is_base", float(mismatches), 0.0, mismatches == 0)

    # ====== Entry point ======

    def run(self) -> List[SelfTestCheck]:
        """Run every check and write selftest.csv.

        Raises:
            AcceptanceError: A hard check failed
        """
        self.check_gradients()
        self.check_lemma2()
        self.check_prop1()
        self.check_linear_oracle()
        self.check_clopper_pearson()

        spec = self.cfg.perturb_specs()[0]
        mode = self.cfg.get("model", "modes")[-1]
        model = self.experiment.model_for(spec, mode)
        self.check_certificate(model, spec)
        self.check_exploding_gradient(model)
        self.check_effectiveness()
        self.check_whitebox_semantics(model)
        self.check_soundness(model)
        self.check_certified_gain(model)
        self.check_degeneracies(model, spec)

        path = self.experiment.output_dir / SELFTEST_CSV
        write_csv(
            path,
            SELFTEST_HEADER,
            ((c.name, c.passed, c.value, c.threshold) for c in self.checks),
        )
        failed = [c.name for c in self.checks if c.hard and not c.passed]
        if failed:
            raise AcceptanceError(f"selftest failed: {', '.join(failed)}")
        self.logger.info("All %d hard checks passed; results in %s", len(self.checks), path)
        return self.checks


def run_selftest(seed: int, output_dir: Optional[str] = None) -> List[SelfTestCheck]:
    """Run the self-test with the fixed small configuration."""
    cfg = selftest_config(seed, output_dir if output_dir is not None else OUTPUT_DIR)
    return SelfTest(cfg).run()
