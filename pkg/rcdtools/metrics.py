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

import logging
import numpy as np
from scipy.stats import rankdata
from scipy.integrate import trapezoid
from sklearn.metrics import f1_score


logger = logging.getLogger()

# Label used for samples predicted as (or belonging to) unknown classes
UNKNOWN_LABEL = -1


class Metrics:
    """This class handles the scoring, open-set prediction and evaluation metrics.

    Scores and predictions are computed from the logit vectors of the causal features. The
    first k logit dimensions correspond to the known classes, the last u ones are the expanded
    dimensions, which never contribute to the score.
    """

    @staticmethod
    def _check_logits(causal_logits, k):
        causal_logits = np.asarray(causal_logits, dtype=float)
        if causal_logits.ndim not in (1, 2):
            raise ValueError("Logits must be a vector or a batch of vectors")
        if k < 1 or k > causal_logits.shape[-1]:
            raise ValueError(
                "k = %s is not valid for logit vectors of length %s"
                % (k, causal_logits.shape[-1])
            )
        return causal_logits

    @staticmethod
    def score(causal_logits, k):
        """
        This method returns the maximum logit over the known-class dimensions.

        Args:
            causal_logits (array): Logits of shape (k+u,) or (N, k+u).
            k (int): Number of known classes.

        Returns:
            score (float or array of shape (N,))
        """

        causal_logits = Metrics._check_logits(causal_logits, k)
        return causal_logits[..., :k].max(axis=-1)

    @staticmethod
    def closed_set_prediction(causal_logits, k):
        """Index of the maximum known-class logit (lowest index on ties)."""

        causal_logits = Metrics._check_logits(causal_logits, k)
        return causal_logits[..., :k].argmax(axis=-1)

    @staticmethod
    def predict(causal_logits, k, theta):
        """
        This method predicts the known class with the largest logit if the score is larger
        than or equal to 'theta', and UNKNOWN_LABEL otherwise.

        Args:
            causal_logits (array): Logits of shape (k+u,) or (N, k+u).
            k (int): Number of known classes.
            theta (float): Threshold on the score.

        Returns:
            prediction (int or array of int of shape (N,))
        """

        scores = Metrics.score(causal_logits, k)
        classes = Metrics.closed_set_prediction(causal_logits, k)
        predictions = np.where(scores >= theta, classes, UNKNOWN_LABEL)

        if np.ndim(predictions) == 0:
            return int(predictions)
        return predictions.astype(int)

    @staticmethod
    def accuracy(preds, labels):
        """Fraction of predictions equal to the labels."""

        preds = np.asarray(preds)
        labels = np.asarray(labels)

        if preds.size == 0:
            raise ValueError("Accuracy cannot be computed on empty inputs")
        if preds.shape != labels.shape:
            raise ValueError(
                "Accuracy needs predictions and labels of equal length, got %s and %s"
                % (preds.size, labels.size)
            )

        return float(np.mean(preds == labels))

    @staticmethod
    def auroc(known_scores, unknown_scores):
        """
        This method calculates the area under the ROC curve of known (positive) versus
        unknown (negative) samples as the rank statistic, i.e. the probability that the score
        of a random known sample exceeds that of a random unknown sample, with ties counted as
        0.5.
        """

        known_scores = np.asarray(known_scores, dtype=float).ravel()
        unknown_scores = np.asarray(unknown_scores, dtype=float).ravel()

        if known_scores.size == 0 or unknown_scores.size == 0:
            raise ValueError("AUROC needs non-empty known and unknown score lists")

        n_known = known_scores.size
        n_unknown = unknown_scores.size
        ranks = rankdata(np.concatenate([known_scores, unknown_scores]))  # ties: mean rank

        u_statistic = ranks[:n_known].sum() - n_known * (n_known + 1) / 2.0

        return float(u_statistic / (n_known * n_unknown))

    @staticmethod
    def oscr_curve(known_scores, known_correct, unknown_scores):
        """
        This method returns the points (FPR, CCR) of the open-set classification rate curve,
        sorted by increasing FPR. For each threshold theta among the distinct scores (plus
        -inf):
            CCR(theta): fraction of known samples correctly classified with score > theta;
            FPR(theta): fraction of unknown samples with score > theta.

        Returns:
            fpr (array), ccr (array)
        """

        known_scores = np.asarray(known_scores, dtype=float).ravel()
        known_correct = np.asarray(known_correct, dtype=bool).ravel()
        unknown_scores = np.asarray(unknown_scores, dtype=float).ravel()

        if known_scores.size == 0 or unknown_scores.size == 0:
            raise ValueError("OSCR needs non-empty known and unknown inputs")
        if known_scores.shape != known_correct.shape:
            raise ValueError("OSCR needs one correctness flag per known score")

        thresholds = np.unique(np.concatenate([known_scores, unknown_scores]))[::-1]
        thresholds = np.append(thresholds, -np.inf)  # decreasing

        correct_scores = np.sort(known_scores[known_correct])
        sorted_unknown = np.sort(unknown_scores)

        # Number of scores strictly above each threshold
        n_correct_above = correct_scores.size - np.searchsorted(
            correct_scores, thresholds, side="right"
        )
        n_unknown_above = sorted_unknown.size - np.searchsorted(
            sorted_unknown, thresholds, side="right"
        )

        ccr = n_correct_above / known_scores.size
        fpr = n_unknown_above / unknown_scores.size

        # Extend to FPR = 0 and FPR = 1
        fpr = np.concatenate([[0.0], fpr, [1.0]])
        ccr = np.concatenate([[0.0], ccr, [ccr[-1]]])

        return fpr, ccr

    @staticmethod
    def oscr(known_scores, known_correct, unknown_scores):
        """
        This method calculates the open-set classification rate, i.e. the area under the CCR
        versus FPR curve (see 'oscr_curve'), integrated with the trapezoidal rule.

        Args:
            known_scores (array): Scores of the known-class samples.
            known_correct (array of bool): Whether each known-class sample is correctly
                classified (closed-set prediction equal to the ground truth).
            unknown_scores (array): Scores of the unknown-class samples.

        Returns:
            oscr (float): Value in [0, 1].
        """

        fpr, ccr = Metrics.oscr_curve(known_scores, known_correct, unknown_scores)

        return float(trapezoid(ccr, fpr))

    @staticmethod
    def calibrate_threshold(validation_known_scores):
        """
        This method returns the threshold under which 90% of the known-class validation
        samples are recognised as known, i.e. the ceil(0.9 * n)-th largest score.
        """

        scores = np.sort(np.asarray(validation_known_scores, dtype=float).ravel())[::-1]

        if scores.size == 0:
            raise ValueError("Threshold calibration needs a non-empty list of scores")

        position = (9 * scores.size + 9) // 10  # ceil(0.9 * n) in integer arithmetic

        return float(scores[position - 1])

    @staticmethod
    def macro_f1(preds, labels, k):
        """
        This method calculates the macro-averaged F1 score of the (k+1)-way classification
        into the k known classes plus the unknown class (UNKNOWN_LABEL). Classes with a zero
        denominator contribute an F1 of 0.
        """

        preds = np.asarray(preds).astype(int).ravel()
        labels = np.asarray(labels).astype(int).ravel()

        if preds.shape != labels.shape:
            raise ValueError(
                "Macro-F1 needs predictions and labels of equal length, got %s and %s"
                % (preds.size, labels.size)
            )
        if preds.size == 0:
            raise ValueError("Macro-F1 cannot be computed on empty inputs")

        return float(
            f1_score(
                labels,
                preds,
                labels=list(range(k)) + [UNKNOWN_LABEL],
                average="macro",
                zero_division=0,
            )
        )
