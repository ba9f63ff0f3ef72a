"""Experiment orchestration.

This module contains the Experiment class that manages:
- Dataset generation or loading
- Training (or loading) one model per norm and training mode
- The four-row evaluation table under grey-box and white-box attacks
- Certificate checks, distance statistics and gradient-norm traces
- Empirical and certified evaluation of the smoothed classifier
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .attack import pgd, pgd_restarts, randomized_pgd
from .classifier import Classifier
from .config import ExperimentConfig
from .constants import DATASET_NPZ, MODEL_FILE
from .datasets import Dataset, gen_dataset
from .geometry import lp_norm
from .preempt import check_lemma1, robustify_with_trace
from .preempt_types import (
    CertRecord,
    DistanceRecord,
    EvalReport,
    HistoryRow,
    PerturbSpec,
    ReportRow,
    SmoothEmpiricalRow,
    norm_label,
)
from .report import emit_report
from .seeding import RngStreams
from .smoothing import (
    certify,
    robustify_smoothed,
    smoothed_loss,
    smoothed_predict,
    soundness_check,
)
from .trainer import train
from .whitebox import distance_stats, eval_whitebox, whitebox_attack

NONE = "none"
OURS = "ours"


def _accuracy(hits: Sequence[bool]) -> float:
    return sum(1 for h in hits if h) / len(hits) if hits else 0.0


class Experiment:
    """Runs one configured experiment end to end."""

    def __init__(self, cfg: ExperimentConfig) -> None:
        """Initialize the experiment.

        Args:
            cfg: Parsed configuration; cfg.seed is the root of every random stream
        """
        self.logger = logging.getLogger(__name__)
        self.cfg = cfg
        self.streams = RngStreams(cfg.seed)
        self.output_dir = Path(cfg.get("output", "dir"))
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.models: Dict[Tuple[str, str], Classifier] = {}
        self.report = EvalReport(
            seed=cfg.seed,
            config_snapshot=cfg.snapshot(),
            metadata={"pixel_range": "clamped to [0, 1] after every update"},
        )
        self._dataset: Optional[Dataset] = None

    # ====== Data and models ======

    @property
    def dataset(self) -> Dataset:
        """The configured dataset, generated or loaded on first use."""
        if self._dataset is None:
            path = self.cfg.get("data", "path")
            if path:
                self._dataset = Dataset.load(path)
                self.logger.info("Loaded dataset from %s", path)
            else:
                self._dataset = gen_dataset(
                    self.cfg.get("data", "kind"),
                    self.cfg.get("data", "n_per_class"),
                    self.cfg.get("data", "dim"),
                    self.streams.seed("data"),
                    std=self.cfg.get("data", "std"),
                )
        return self._dataset

    def save_dataset(self, robustified: Optional[np.ndarray] = None) -> Path:
        """Write the dataset (optionally with robustified test images) as .npz."""
        data = self.dataset
        data.robustified = robustified
        path = self.output_dir / DATASET_NPZ
        data.save(path)
        return path

    def eval_set(self, limit: int) -> Tuple[np.ndarray, np.ndarray]:
        """First limit test examples."""
        data = self.dataset
        count = min(limit, len(data.test_idx))
        return data.test_x[:count], data.test_y[:count]

    def model_for(self, spec: PerturbSpec, mode: str) -> Classifier:
        """Trained model for a norm and mode: loaded, cached, or trained and saved."""
        key = (norm_label(spec.p), mode)
        if key in self.models:
            return self.models[key]
        template = self.cfg.get("model", "path")
        if template:
            path = template.format(mode=mode, norm=key[0])
            model = Classifier.load(path)
            self.logger.info("Loaded %s model for p=%s from %s", mode, key[0], path)
        else:
            data = self.dataset
            sizes = [data.dim, *self.cfg.get("model", "hidden"), data.num_classes]
            init = Classifier.mlp(
                sizes, self.streams.generator("init"), self.cfg.get("model", "activation")
            )
            result = train(
                init,
                data,
                self.cfg.train_config(spec, mode),
                self.streams.generator(f"train/{key[0]}/{mode}"),
                holdout_seed=self.streams.seed("holdout"),
            )
            model = result.model
            for row in result.history:
                self.report.history.append(
                    HistoryRow(row.epoch, f"{key[0]}/{mode}/{row.split}", row.loss, row.acc)
                )
            model.save(self.output_dir / MODEL_FILE.format(mode=mode, norm=key[0]))
        self.models[key] = model
        return model

    def train_all(self) -> None:
        """Train every configured (norm, mode) pair."""
        for spec in self.cfg.perturb_specs():
            for mode in self.cfg.get("model", "modes"):
                self.model_for(spec, mode)

    # ====== Evaluation table ======

    def grey_box(
        self, model: Classifier, xs: np.ndarray, ys: np.ndarray, spec: PerturbSpec, tag: str
    ) -> Tuple[float, float]:
        """Accuracy under single-run PGD and under restarted PGD, attacking around xs."""
        single = self.cfg.pgd_config(1)
        multi = self.cfg.pgd_config(self.cfg.get("attack", "restarts"))
        hits_single, hits_multi = [], []
        for i, (x, y) in enumerate(zip(xs, ys)):
            x_adv = pgd(model, x, int(y), spec, single, self.streams.generator(f"pgd/{tag}", i))
            hits_single.append(int(model.predict(x_adv)) == int(y))
            x_adv = pgd_restarts(
                model, x, int(y), spec, multi, self.streams.generator(f"pgd10/{tag}", i)
            )
            hits_multi.append(int(model.predict(x_adv)) == int(y))
        return _accuracy(hits_single), _accuracy(hits_multi)

    def robustify_all(
        self, model: Classifier, xs: np.ndarray, spec: PerturbSpec, tag: str
    ) -> np.ndarray:
        """Robustify every row of xs with its own defender stream."""
        r_cfg = self.cfg.robustify_config()
        out = []
        for i, x in enumerate(xs):
            result = robustify_with_trace(
                model, x, spec, r_cfg, self.streams.generator(f"defender/{tag}", i)
            )
            self.report.gradnorms.append((f"{tag}/{i}", r_cfg.grad_mode, result.grad_norms))
            out.append(result.x_r)
        return np.array(out).reshape(xs.shape)

    def evaluate_model(
        self,
        model: Classifier,
        mode: str,
        spec: PerturbSpec,
        whitebox: bool = True,
        record: bool = False,
    ) -> List[ReportRow]:
        """The none and ours rows for one trained model.

        Args:
            model: Classifier under evaluation
            mode: Its training mode (row label)
            spec: Norm and budgets
            whitebox: Whether to run the adaptive white-box adversary
            record: Whether to keep distances and certificate checks for this model

        Returns:
            [none row, ours row]
        """
        label = norm_label(spec.p)
        tag = f"{label}/{mode}"
        xs, ys = self.eval_set(self.cfg.get("run", "n_eval"))
        n = len(ys)

        clean = _accuracy([int(model.predict(x)) == int(y) for x, y in zip(xs, ys)])
        grey, grey_multi = self.grey_box(model, xs, ys, spec, f"{tag}/{NONE}")
        none_row = ReportRow(label, spec.eps, mode, NONE, clean, grey, grey_multi, grey_multi, n)

        x_rs = self.robustify_all(model, xs, spec, tag)
        clean_r = _accuracy([int(model.predict(x)) == int(y) for x, y in zip(x_rs, ys)])
        grey_r, grey_multi_r = self.grey_box(model, x_rs, ys, spec, f"{tag}/{OURS}")

        white: Optional[float] = None
        if whitebox:
            white = self._whitebox(model, spec, tag, xs, ys, x_rs, record)
        if record:
            for i, (x_o, x_r) in enumerate(zip(xs, x_rs)):
                report = check_lemma1(
                    model, x_o, x_r, spec, None, self.streams.generator(f"lemma1/{tag}", i)
                )
                self.report.lemma1.append((i, report))
        ours_row = ReportRow(label, spec.eps, mode, OURS, clean_r, grey_r, grey_multi_r, white, n)
        for row in (none_row, ours_row):
            self.logger.info(
                "p=%s %s/%s: clean %.3f grey %.3f grey-restarts %.3f white %s",
                row.norm,
                row.model,
                row.preemption,
                row.clean,
                row.grey_pgd,
                row.grey_pgd_restarts,
                "n/a" if row.white_pgd is None else f"{row.white_pgd:.3f}",
            )
        return [none_row, ours_row]

    def _whitebox(
        self,
        model: Classifier,
        spec: PerturbSpec,
        tag: str,
        xs: np.ndarray,
        ys: np.ndarray,
        x_rs: np.ndarray,
        record: bool,
    ) -> float:
        wb_cfg = self.cfg.whitebox_config(spec)
        robust = []
        recon_dists: List[float] = []
        attack_dists: List[float] = []
        for i, (x_o, y_o, x_r) in enumerate(zip(xs, ys, x_rs)):
            rng = self.streams.generator(f"adversary/{tag}", i)
            result = whitebox_attack(model, x_r, int(y_o), spec, wb_cfg, rng)
            verdict = eval_whitebox(result.candidates, x_o, int(y_o), model, spec.eps, spec.p)
            robust.append(verdict.robust)
            recon_dist = float(lp_norm(result.x_hat - x_o, spec.p))
            recon_dists.append(recon_dist)
            attack_dists.extend(verdict.attack_dists)
            if record:
                for cand, dist, mis, valid in zip(
                    result.candidates, verdict.attack_dists, verdict.misclassified, verdict.valid
                ):
                    self.report.distances.append(
                        DistanceRecord(i, recon_dist, cand.eps_prime, dist, mis, valid)
                    )
        if record:
            self.report.distance_stats = distance_stats(recon_dists, attack_dists, spec.eps)
            self.report.eps = spec.eps
        return _accuracy(robust)

    def evaluate(self, whitebox: bool = True) -> List[ReportRow]:
        """Four rows per configured norm.

        Distances and certificate checks are kept for the last configured
        model under the first configured norm.
        """
        xs, _ = self.eval_set(self.cfg.get("run", "n_eval"))
        if len(xs) == 0:
            self.logger.warning("Evaluation set is empty; no report rows written")
            return self.report.rows
        modes = self.cfg.get("model", "modes")
        for index, spec in enumerate(self.cfg.perturb_specs()):
            for mode in modes:
                record = index == 0 and mode == modes[-1]
                model = self.model_for(spec, mode)
                self.report.rows.extend(self.evaluate_model(model, mode, spec, whitebox, record))
        self.report.metadata["lemma1_satisfied_fraction"] = repr(
            self.report.lemma1_satisfied_fraction
        )
        return self.report.rows

    # ====== Randomized smoothing ======

    def smoothing_spec(self) -> PerturbSpec:
        """l2 setting used for certification; delta follows eps unless overridden."""
        delta = None
        if self.cfg.get("perturb", "delta_override"):
            delta = self.cfg.get("perturb", "delta")
        return PerturbSpec(2, self.cfg.eps_for(2.0), delta)

    def evaluate_smoothing(self, whitebox: bool = True) -> None:
        """Certified and empirical smoothed accuracy, with and without preemption."""
        xs, ys = self.eval_set(self.cfg.get("smooth", "n_eval"))
        if len(xs) == 0:
            self.logger.warning("Smoothing evaluation set is empty; skipping")
            return
        spec = self.smoothing_spec()
        s_cfg = self.cfg.smooth_config()
        r_cfg = self.cfg.robustify_config()
        mode = self.cfg.get("model", "modes")[-1]
        model = self.model_for(spec, mode)
        oracle = smoothed_loss(model, s_cfg)
        single = self.cfg.pgd_config(1)
        multi = self.cfg.pgd_config(self.cfg.get("attack", "restarts"))
        attacks = self.cfg.get("smooth", "soundness_attacks")

        hits: Dict[str, Dict[str, List[bool]]] = {
            tag: {"clean": [], "grey": [], "grey_multi": [], "cert": [], "white": []}
            for tag in (NONE, OURS)
        }
        flips = 0
        certified = 0
        for i, (x_o, y) in enumerate(zip(xs, ys)):
            y_o = int(y)
            x_r = robustify_smoothed(
                model, x_o, spec, r_cfg, s_cfg, self.streams.generator("smooth/defender", i)
            )
            for flag, (tag, x) in enumerate(((NONE, x_o), (OURS, x_r))):
                bucket = hits[tag]
                res = certify(model, x, s_cfg, self.streams.generator("smooth/certify", i, flag))
                correct = res.predicted == y_o
                self.report.certify.append(
                    CertRecord(
                        i, bool(flag), res.predicted, correct, res.p_lower, res.radius, res.abstain
                    )
                )
                bucket["cert"].append(correct and res.radius >= spec.eps)
                if correct and attacks:
                    certified += 1
                    check_rng = self.streams.generator("smooth/soundness", i, flag)
                    flips += soundness_check(model, x, res, s_cfg, check_rng, attacks)
                rng = self.streams.generator(f"smooth/attack/{tag}", i)
                bucket["clean"].append(smoothed_predict(model, x, s_cfg, rng) == y_o)
                x_adv = randomized_pgd(model, x, y_o, spec, single, s_cfg.sigma, s_cfg.M, rng)
                bucket["grey"].append(smoothed_predict(model, x_adv, s_cfg, rng) == y_o)
                x_adv = pgd_restarts(model, x, y_o, spec, multi, rng, oracle=oracle)
                bucket["grey_multi"].append(smoothed_predict(model, x_adv, s_cfg, rng) == y_o)
                if whitebox:
                    wb = whitebox_attack(
                        model, x, y_o, spec, self.cfg.whitebox_config(spec), rng, oracle
                    )
                    verdict = eval_whitebox(
                        wb.candidates,
                        x_o,
                        y_o,
                        model,
                        spec.eps,
                        spec.p,
                        predict=lambda z: smoothed_predict(model, z, s_cfg, rng),
                    )
                    bucket["white"].append(verdict.robust)

        for tag in (NONE, OURS):
            bucket = hits[tag]
            self.report.smooth_empirical.append(
                SmoothEmpiricalRow(
                    tag,
                    _accuracy(bucket["clean"]),
                    _accuracy(bucket["grey"]),
                    _accuracy(bucket["grey_multi"]),
                    len(ys),
                )
            )
            meta = self.report.metadata
            meta[f"smooth_certified_accuracy_{tag}"] = repr(_accuracy(bucket["cert"]))
            if whitebox:
                meta[f"smooth_white_accuracy_{tag}"] = repr(_accuracy(bucket["white"]))
        self.report.metadata["smooth_soundness_points"] = str(certified)
        self.report.metadata["smooth_soundness_flips"] = str(flips)
        self.logger.info("Smoothing: %d certified points checked, %d flips", certified, flips)

    # ====== Entry points ======

    def gen_data(self) -> Path:
        """Generate (or load) the dataset and write it to the output directory."""
        path = self.save_dataset()
        self.logger.info(
            "Dataset %s: %d train, %d test, dim %d",
            self.dataset.kind,
            len(self.dataset.train_idx),
            len(self.dataset.test_idx),
            self.dataset.dim,
        )
        return path

    def train_models(self) -> List[Path]:
        """Train every configured model and write the loss history."""
        self.train_all()
        return self.emit()

    def robustify_test_set(self) -> Path:
        """Robustify the evaluation images with the last configured model under the first norm.

        The robustified images are stored next to the originals in the dataset archive.
        """
        spec = self.cfg.perturb_specs()[0]
        mode = self.cfg.get("model", "modes")[-1]
        model = self.model_for(spec, mode)
        xs, _ = self.eval_set(self.cfg.get("run", "n_eval"))
        x_rs = self.robustify_all(model, xs, spec, f"{norm_label(spec.p)}/{mode}")
        self.emit()
        return self.save_dataset(x_rs)

    def attack(self) -> EvalReport:
        """Grey-box table only; white-box cells of robustified rows stay empty."""
        self.evaluate(whitebox=False)
        self.emit()
        return self.report

    def whitebox(self) -> EvalReport:
        """Full table including the adaptive white-box adversary."""
        self.evaluate(whitebox=True)
        self.emit()
        return self.report

    def smooth_certify(self) -> EvalReport:
        """Smoothing evaluation on its own."""
        self.evaluate_smoothing()
        self.emit()
        return self.report

    def run(self, whitebox: bool = True) -> EvalReport:
        """Train, evaluate and (if enabled) run the smoothing evaluation, then write CSVs."""
        self.evaluate(whitebox)
        if self.cfg.get("smooth", "enabled"):
            self.evaluate_smoothing(whitebox)
        self.emit()
        return self.report

    def emit(self) -> List[Path]:
        """Write all CSVs of the current report."""
        return emit_report(self.report, self.output_dir)


def run_pipeline(cfg: ExperimentConfig) -> EvalReport:
    """Run the configured experiment and write its CSV artifacts."""
    return Experiment(cfg).run()
