#!/usr/bin/env python3

# Copyright (C) 2026:
#   Recursive Counterfactual Deconfounding tools contributors
#
# This program is free software: you can redistribute it and/or modify it
# under the terms of the GNU Affero General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.
#
# This program is distributed in the hope that it will be useful, but
# WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the GNU Affero
# General Public License for more details.
#
# You should have received a copy of the GNU Affero General Public License
# along with this program. If not, see http://www.gnu.org/licenses/.

"""
Counterfactual feature pool, causal features and the recursive two-phase training of the
deconfounding model.
"""

import os
import logging
import threading
from copy import deepcopy
from dataclasses import dataclass, field
from typing import Optional
import numpy as np
import pandas as pd
import torch
from rcdtools.datasets import SampleSet
from rcdtools.losses import Losses, LossInputs
from rcdtools.metrics import Metrics, UNKNOWN_LABEL
from rcdtools.models import Models
from rcdtools.training import Trainer
from rcdtools.writers import Writer


logger = logging.getLogger()


class InconsistentStateError(RuntimeError):
    """Raised when a recursion step is requested with a pool of the wrong size."""


class CounterfactualPool:
    """
    Ordered collection of frozen counterfactual snapshots. Snapshots are only ever appended,
    in creation order, and are never modified or removed. Reads can happen concurrently,
    appends are exclusive.
    """

    def __init__(self):
        self._snapshots = []
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._snapshots)

    @property
    def snapshots(self):
        return tuple(self._snapshots)

    def append(self, snapshot):
        with self._lock:
            if len(self._snapshots) > 0 and (
                snapshot.snapshot_id <= self._snapshots[-1].snapshot_id
            ):
                raise InconsistentStateError(
                    "Snapshot %s cannot follow snapshot %s in the pool"
                    % (snapshot.snapshot_id, self._snapshots[-1].snapshot_id)
                )
            self._snapshots.append(snapshot)

    def features(self, batch):
        """Counterfactual features of 'batch', one tensor per snapshot, in pool order."""

        return CausalFeatures.counterfactual_features(self, batch)


class CausalFeatures:
    """This class handles the subtraction of counterfactual features and the causal logits.
    """

    @staticmethod
    def counterfactual_features(pool, image_batch):
        """
        This method evaluates every snapshot of 'pool' on 'image_batch'.

        Returns:
            features (list of torch.Tensor): One (N, d) tensor per snapshot, in pool order.
            Empty list if the pool is empty.
        """

        return [snapshot.features(image_batch) for snapshot in pool.snapshots]

    @staticmethod
    def causal_feature(x, cf_feats):
        """
        This method returns the causal feature x - x_1 - x_2 - ... - x_t. With no
        counterfactual features, 'x' is returned unchanged.

        Args:
            x (torch.Tensor): Original features of shape (..., d).
            cf_feats (list of torch.Tensor): Counterfactual features of the same shape.
        """

        x = torch.as_tensor(x)
        causal = x
        for counterfactual in cf_feats:
            counterfactual = torch.as_tensor(counterfactual, dtype=x.dtype)
            if counterfactual.shape != x.shape:
                raise ValueError(
                    "Counterfactual feature of shape %s cannot be subtracted from feature of "
                    "shape %s" % (tuple(counterfactual.shape), tuple(x.shape))
                )
            causal = causal - counterfactual

        return causal

    @staticmethod
    def causal_logits(head, x_c):
        """This method maps causal features into logits with the bias-free linear head."""

        if getattr(head, "bias", None) is not None:
            raise ValueError("The classifier head of the causal logits must have no bias")

        return Models.classify(head, x_c)

    @staticmethod
    def forward(model, pool, batch):
        """
        This method returns (x, counterfactuals, causal logits) of 'batch' for 'model' (an
        RCDModel) and the counterfactual features of 'pool'.
        """

        x = Models.extract(model.extractor, batch)
        counterfactuals = CausalFeatures.counterfactual_features(pool, batch)
        x_c = CausalFeatures.causal_feature(x, counterfactuals)

        return x, counterfactuals, CausalFeatures.causal_logits(model.head, x_c)


@dataclass
class StepResult:
    """Outcome of one recursion step.

    Attributes:
        step (int): Step number t.
        checkpoint (str or None): Directory of the main model trained at this step.
        metrics (dict): "acc", "auroc", "oscr", "macro_f1" and the threshold "theta".
        pool_size (int): Size of the counterfactual pool after the step (equal to t).
        phase1_entropy (float): Mean prediction entropy of the counterfactual model after
            counterfactual learning.
        nc_before (float): Mean correlation between counterfactual features and residual
            features of the main model before deconfounding.
        nc_after (float): Same quantity after deconfounding.
    """

    step: int
    checkpoint: Optional[str]
    metrics: dict
    pool_size: int
    phase1_entropy: float = float("nan")
    nc_before: float = float("nan")
    nc_after: float = float("nan")
    scores: Optional[pd.DataFrame] = field(default=None, repr=False)


class Evaluation:
    """This class evaluates a model plus counterfactual pool on the testing partitions.
    """

    @staticmethod
    def causal_logits(model, pool, sample_set, batch_size=256):
        """Causal logits (numpy, shape (n, k+u)) of all samples of 'sample_set'."""

        return Trainer.predict(
            lambda batch: CausalFeatures.forward(model, pool, batch)[2], sample_set, batch_size
        )

    @staticmethod
    def causal_features(model, pool, sample_set, batch_size=256):
        """Causal features (numpy, shape (n, d)) of all samples of 'sample_set'."""

        def _causal(batch):
            x = Models.extract(model.extractor, batch)
            return CausalFeatures.causal_feature(
                x, CausalFeatures.counterfactual_features(pool, batch)
            )

        return Trainer.predict(_causal, sample_set, batch_size)

    @staticmethod
    def evaluate(model, pool, splits, k, theta=None):
        """
        This method calculates the closed-set accuracy on 'test_known', the AUROC and OSCR of
        'test_known' versus 'test_unknown', and the macro-F1 of the (k+1)-way classification.
        If 'theta' is None, the threshold is calibrated on 'val_known'. AUROC and OSCR are NaN
        (not applicable) when 'test_unknown' is empty.

        Returns:
            metrics (dict): Keys "acc", "auroc", "oscr", "macro_f1", "theta".
            scores (Pandas DataFrame): Columns sample_id, split, ground_truth, score,
                predicted_class (closed-set prediction),
                open_set_prediction (prediction with the threshold, -1 for unknown).
        """

        model.eval()

        test_known = splits["test_known"]
        test_unknown = splits["test_unknown"]

        if len(test_known) == 0:
            raise ValueError("Evaluation needs known-class testing samples")

        if theta is None:
            if len(splits["val_known"]) == 0:
                raise ValueError("Threshold calibration needs validation samples")
            validation_logits = Evaluation.causal_logits(model, pool, splits["val_known"])
            theta = Metrics.calibrate_threshold(Metrics.score(validation_logits, k))

        known_logits = Evaluation.causal_logits(model, pool, test_known)
        known_scores = Metrics.score(known_logits, k)
        known_classes = Metrics.closed_set_prediction(known_logits, k)
        known_correct = known_classes == test_known.labels

        metrics = {
            "acc": Metrics.accuracy(known_classes, test_known.labels),
            "auroc": float("nan"),
            "oscr": float("nan"),
        }

        known_open = Metrics.predict(known_logits, k, theta)
        open_predictions = [known_open]
        open_labels = [test_known.labels]
        frames = [
            pd.DataFrame(
                {
                    "sample_id": test_known.sample_ids,
                    "split": "test_known",
                    "ground_truth": test_known.labels.astype(object),
                    "score": known_scores,
                    "predicted_class": known_classes,
                    "open_set_prediction": known_open,
                }
            )
        ]

        if len(test_unknown) > 0:
            unknown_logits = Evaluation.causal_logits(model, pool, test_unknown)
            unknown_scores = Metrics.score(unknown_logits, k)
            metrics["auroc"] = Metrics.auroc(known_scores, unknown_scores)
            metrics["oscr"] = Metrics.oscr(known_scores, known_correct, unknown_scores)
            unknown_open = Metrics.predict(unknown_logits, k, theta)
            open_predictions.append(unknown_open)
            open_labels.append(np.full(len(test_unknown), UNKNOWN_LABEL))
            frames.append(
                pd.DataFrame(
                    {
                        "sample_id": test_unknown.sample_ids,
                        "split": "test_unknown",
                        "ground_truth": "unknown",
                        "score": unknown_scores,
                        "predicted_class": Metrics.closed_set_prediction(unknown_logits, k),
                        "open_set_prediction": unknown_open,
                    }
                )
            )

        metrics["macro_f1"] = Metrics.macro_f1(
            np.concatenate(open_predictions), np.concatenate(open_labels), k
        )
        metrics["theta"] = float(theta)

        return metrics, pd.concat(frames, ignore_index=True)

    @staticmethod
    def correlation_diagnostic(model, pool, sample_set, batch_size=256):
        """
        This method returns the mean, over samples and pool entries, of the correlation between
        each counterfactual feature and the feature remaining after its subtraction, for the
        features of 'model'. NaN if the pool is empty.
        """

        if len(pool) == 0 or len(sample_set) == 0:
            return float("nan")

        def _correlation(batch):
            x = Models.extract(model.extractor, batch)
            counterfactuals = CausalFeatures.counterfactual_features(pool, batch)
            value = Losses.negative_correlation_loss(x, counterfactuals, len(counterfactuals))
            return (value * batch.shape[0]).reshape(1)

        totals = Trainer.predict(_correlation, sample_set, batch_size)

        return float(totals.sum() / len(sample_set))

    @staticmethod
    def prediction_entropy(model, pool, sample_set, batch_size=256):
        """Mean entropy of the softmax of the causal logits of 'model' on 'sample_set'."""

        logits = Evaluation.causal_logits(model, pool, sample_set, batch_size)

        return float(Losses.prediction_entropy(Losses.softmax(torch.from_numpy(logits))))


class RecursiveDeconfounding:
    """
    This class runs the recursion: at each step t, (1) a clone of the current main model is
    trained with 'Losses.loss_s1' to produce counterfactual features, frozen and appended to
    the pool; (2) the main model is trained with 'Losses.loss_s2' on the causal features
    obtained by subtracting all pooled counterfactual features.

    Attributes:
        hyper_params (HyperParams)
        splits (dict of SampleSet): Output of 'DatasetSplitter.split'.
        main_model (RCDModel): Model trained for deconfounding, with k+u outputs.
        pool (CounterfactualPool)
        run_dir (str or None): If given, checkpoints and dumps are written under it.
        max_dump_samples (int): Maximum number of testing samples in the feature dumps.
    """

    def __init__(
        self,
        hyper_params,
        splits,
        backbone="mlp",
        feature_dim=16,
        hidden_dims=(64, 32),
        run_dir=None,
        max_dump_samples=500,
    ):
        self.hyper_params = hyper_params
        self.splits = splits
        self.run_dir = run_dir
        self.max_dump_samples = max_dump_samples

        torch.manual_seed(hyper_params.seed)
        self.main_model = Models.build_model(
            hyper_params,
            splits["train_known"].input_shape,
            backbone,
            feature_dim,
            hidden_dims,
        )
        self.pool = CounterfactualPool()

    def _parts(self, model, samples, labels, pool):
        x, counterfactuals, logits = CausalFeatures.forward(model, pool, samples)

        # Non-finite logits give a non-finite loss, reported by Trainer.fit
        return LossInputs(
            probs=torch.softmax(logits, dim=-1),
            labels=labels,
            features=x,
            counterfactuals=counterfactuals,
            causal_logits=logits,
            k=self.hyper_params.k,
            u=self.hyper_params.u,
        )

    def learn_counterfactual(self, t):
        """
        This method trains a clone of the current main model with 'Losses.loss_s1' on the
        causal features built from the current pool (t-1 entries), and returns the clone.
        """

        hp = self.hyper_params
        clone = deepcopy(self.main_model)
        clone.train()

        def _loss(samples, labels):
            parts = self._parts(clone, samples, labels, self.pool)
            return Losses.loss_s1(t, parts, hp.lambda1, hp.lambda2)

        Trainer.fit(
            clone.parameters(),
            _loss,
            Trainer.make_loader(
                self.splits["train_known"], hp.batch_size, True, hp.seed + 2 * t - 1
            ),
            hp.epochs_phase1,
            hp,
            description="step %s, counterfactual learning" % (t),
        )
        clone.eval()

        return clone

    def deconfound(self, t):
        """This method trains the main model with 'Losses.loss_s2' on the current pool."""

        hp = self.hyper_params
        self.main_model.train()

        def _loss(samples, labels):
            parts = self._parts(self.main_model, samples, labels, self.pool)
            return Losses.loss_s2(parts, hp.lambda1, t)

        Trainer.fit(
            self.main_model.parameters(),
            _loss,
            Trainer.make_loader(
                self.splits["train_known"], hp.batch_size, True, hp.seed + 2 * t
            ),
            hp.epochs_phase2,
            hp,
            description="step %s, deconfounding" % (t),
        )
        self.main_model.eval()

    def run_step(self, t):
        """
        This method runs step t of the recursion (counterfactual learning, then
        deconfounding) and evaluates the main model on the testing partitions.

        Args:
            t (int): Step number, 1 <= t <= T. The pool needs to contain t-1 snapshots.

        Returns:
            result (StepResult)
        """

        hp = self.hyper_params

        if t < 1 or t > hp.T:
            raise ValueError("Step number must lie within [1, %s], got %s" % (hp.T, t))
        if len(self.pool) != t - 1:
            error_message = (
                "Step %s needs a pool of %s counterfactual snapshots, found %s"
                % (t, t - 1, len(self.pool))
            )
            logger.critical(error_message)
            raise InconsistentStateError(error_message)

        logger.info("Step %s of %s: learning counterfactual features" % (t, hp.T))
        clone = self.learn_counterfactual(t)
        phase1_entropy = Evaluation.prediction_entropy(
            clone, self.pool, self.splits["train_known"]
        )

        self.pool.append(
            Models.freeze(
                clone.extractor,
                snapshot_id=t,
                metadata={"step": t, "seed": hp.seed, "epochs": hp.epochs_phase1},
            )
        )
        logger.info(
            "Step %s: counterfactual model entropy %.4f (maximum %.4f), pool size %s"
            % (t, phase1_entropy, np.log(hp.n_outputs), len(self.pool))
        )

        nc_before = Evaluation.correlation_diagnostic(
            self.main_model, self.pool, self.splits["train_known"]
        )
        logger.info("Step %s of %s: deconfounding" % (t, hp.T))
        self.deconfound(t)
        nc_after = Evaluation.correlation_diagnostic(
            self.main_model, self.pool, self.splits["train_known"]
        )
        logger.info(
            "Step %s: correlation of counterfactual and residual features %.4f -> %.4f"
            % (t, nc_before, nc_after)
        )

        metrics, scores = Evaluation.evaluate(
            self.main_model, self.pool, self.splits, hp.k, hp.theta
        )
        logger.info(
            "Step %s: ACC %.4f, AUROC %.4f, OSCR %.4f, macro-F1 %.4f"
            % (t, metrics["acc"], metrics["auroc"], metrics["oscr"], metrics["macro_f1"])
        )

        checkpoint = None
        if self.run_dir is not None:
            checkpoint = self._store_step(t, scores)

        return StepResult(
            step=t,
            checkpoint=checkpoint,
            metrics=metrics,
            pool_size=len(self.pool),
            phase1_entropy=phase1_entropy,
            nc_before=nc_before,
            nc_after=nc_after,
            scores=scores,
        )

    def run_pipeline(self):
        """
        This method runs steps 1 to T. The predictions of the last step are the final
        predictions.

        Returns:
            results (list of StepResult)
        """

        results = []
        for t in range(len(self.pool) + 1, self.hyper_params.T + 1):
            results.append(self.run_step(t))

        return results

    def _store_step(self, t, scores):
        manifest = {
            "step": t,
            "seed": self.hyper_params.seed,
            "hyper_params": self.hyper_params.to_dict(),
        }
        step_dir = Writer.write_checkpoint(self.run_dir, t, self.main_model, self.pool, manifest)

        Writer.write_scores(scores, os.path.join(self.run_dir, "scores_step_%s.csv" % (t)))

        dump = FeatureDumps.collect(
            self.main_model,
            self.pool,
            self.splits,
            self.max_dump_samples,
            self.hyper_params.seed,
        )
        Writer.write_feature_dump(dump, os.path.join(self.run_dir, "features_step_%s.npz" % (t)))

        return os.path.join(step_dir, "main")


class FeatureDumps:
    """This class collects features of testing samples for the 2D visualisation."""

    @staticmethod
    def collect(model, pool, splits, max_samples, seed):
        """
        This method gathers, for at most 'max_samples' testing samples (known and unknown,
        chosen with a seeded generator), the causal features of 'model' and the counterfactual
        features of the last snapshot of 'pool' (absent if the pool is empty).

        Returns:
            dump (dict of np.ndarray): Keys "sample_ids", "is_known", "causal" and, if the pool
                is not empty, "counterfactual".
        """

        rng = np.random.default_rng(seed)
        selected = []
        n_total = len(splits["test_known"]) + len(splits["test_unknown"])
        for key in ["test_known", "test_unknown"]:
            sample_set = splits[key]
            n_selected = min(
                len(sample_set), int(np.ceil(max_samples * len(sample_set) / max(n_total, 1)))
            )
            indices = np.sort(rng.choice(len(sample_set), size=n_selected, replace=False))
            selected.append(sample_set.subset(indices))

        subset = SampleSet(
            np.concatenate([s.features for s in selected], axis=0),
            np.concatenate([s.labels for s in selected]),
            np.concatenate([s.sample_ids for s in selected]),
        )

        dump = {
            "sample_ids": subset.sample_ids,
            "is_known": np.concatenate(
                [np.ones(len(selected[0]), dtype=bool), np.zeros(len(selected[1]), dtype=bool)]
            ),
            "causal": Evaluation.causal_features(model, pool, subset),
        }
        if len(pool) > 0:
            last = pool.snapshots[-1]
            dump["counterfactual"] = Trainer.predict(last.features, subset)

        return dump


class BackboneBaseline:
    """
    This class trains and evaluates the plain backbone method: the extracted features are fed
    directly into a k-dimensional linear classifier trained with the cross-entropy loss.
    """

    @staticmethod
    def train(hyper_params, splits, backbone="mlp", feature_dim=16, hidden_dims=(64, 32)):
        """
        Returns:
            model (RCDModel): Trained model with k outputs.
            metrics (dict): As in 'Evaluation.evaluate'.
            scores (Pandas DataFrame): As in 'Evaluation.evaluate'.
        """

        hp = hyper_params
        torch.manual_seed(hp.seed)
        model = Models.build_model(
            hp, splits["train_known"].input_shape, backbone, feature_dim, hidden_dims, u=0
        )
        model.train()

        def _loss(samples, labels):
            return Losses.causal_effect_loss(torch.softmax(model(samples), dim=-1), labels)

        logger.info("Training the backbone baseline for %s epochs" % (hp.baseline_epochs))
        Trainer.fit(
            model.parameters(),
            _loss,
            Trainer.make_loader(splits["train_known"], hp.batch_size, True, hp.seed),
            hp.baseline_epochs,
            hp,
            description="backbone baseline",
        )

        metrics, scores = Evaluation.evaluate(model, CounterfactualPool(), splits, hp.k, hp.theta)
        logger.info(
            "Backbone baseline: ACC %.4f, AUROC %.4f, OSCR %.4f, macro-F1 %.4f"
            % (metrics["acc"], metrics["auroc"], metrics["oscr"], metrics["macro_f1"])
        )

        return model, metrics, scores
