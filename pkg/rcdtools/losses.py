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
Differentiable loss terms used to learn counterfactual features and to train the recursive
deconfounding model. Every function is stateless and operates on batches of torch tensors
(first dimension = samples).
"""

import logging
from dataclasses import dataclass, field
from typing import List
import torch


logger = logging.getLogger()

# Floor applied to probabilities inside logarithms
LOG_EPSILON = 1e-12


@dataclass
class LossInputs:
    """Tensors needed to evaluate the composite losses of one mini-batch.

    Attributes:
        probs (torch.Tensor):
            Probabilities of shape (N, k+u), obtained with the normalised exponential of
            'causal_logits'.
        labels (torch.Tensor):
            Ground-truth known-class indices of shape (N,), or one-hot labels of shape
            (N, k+u).
        features (torch.Tensor):
            Original features 'x' of shape (N, d).
        counterfactuals (list of torch.Tensor):
            Counterfactual features x_1, ..., x_t, each of shape (N, d), in pool order.
        causal_logits (torch.Tensor):
            Logits of shape (N, k+u) mapped from the causal features.
        k (int):
            Number of known classes.
        u (int):
            Number of expanded logit dimensions.
    """

    probs: torch.Tensor
    labels: torch.Tensor
    features: torch.Tensor
    counterfactuals: List[torch.Tensor] = field(default_factory=list)
    causal_logits: torch.Tensor = None
    k: int = 2
    u: int = 0


class Losses:
    """This class groups the loss terms and the Pearson correlation kernel.
    """

    @staticmethod
    def _as_tensor(values):
        if isinstance(values, torch.Tensor):
            return values
        return torch.as_tensor(values, dtype=torch.float64)

    @staticmethod
    def softmax(logits):
        """
        This method maps logit vectors into probability vectors with the normalised
        exponential function, along the last dimension.

        Args:
            logits (torch.Tensor or array-like):
                Logits of shape (..., k+u).

        Returns:
            probs (torch.Tensor):
                Probabilities of the same shape as 'logits', summing up to 1 along the last
                dimension.
        """

        logits = Losses._as_tensor(logits)

        if not bool(torch.isfinite(logits).all()):
            raise ValueError("Logits contain non-finite values, softmax cannot be computed")

        return torch.softmax(logits, dim=-1)

    @staticmethod
    def label_indices(labels, k=None):
        """
        This method returns the ground-truth class indices of 'labels', which can be given as
        indices of shape (N,) or as one-hot vectors of shape (N, k+u). One-hot labels need to
        have exactly one entry equal to 1 per row. If 'k' is given, all indices are verified
        to be smaller than 'k'.

        Returns:
            indices (torch.Tensor of int64): Class indices of shape (N,).
        """

        labels = torch.as_tensor(labels)

        if labels.dim() == 2:
            if not bool(((labels == 0) | (labels == 1)).all()) or not bool(
                (labels.sum(dim=1) == 1).all()
            ):
                raise ValueError("One-hot labels must have exactly one entry equal to 1 per row")
            indices = labels.argmax(dim=1)
        elif labels.dim() == 1:
            indices = labels.long()
        else:
            raise ValueError("Labels must be given as indices (N,) or one-hot vectors (N, k+u)")

        if k is not None and indices.numel() > 0:
            if int(indices.max()) >= k or int(indices.min()) < 0:
                raise ValueError(
                    "Ground-truth labels must belong to the known classes [0, %s)" % (k)
                )

        return indices

    @staticmethod
    def max_entropy_loss(probs_batch):
        """
        This method calculates the maximum entropy loss, i.e. the batch mean of
        sum_i(p_i * log(p_i)), with 0 * log(0) := 0. Its value lies within [-log(k+u), 0] and
        it attains the lower bound only when all rows are uniform.

        Args:
            probs_batch (torch.Tensor):
                Probabilities of shape (N, k+u).

        Returns:
            loss (torch.Tensor): Scalar loss.
        """

        probs_batch = Losses._as_tensor(probs_batch)

        if probs_batch.dim() != 2 or probs_batch.shape[0] == 0:
            raise ValueError("The maximum entropy loss needs a non-empty batch of probabilities")

        log_probs = torch.log(probs_batch.clamp_min(LOG_EPSILON))

        return (probs_batch * log_probs).sum(dim=1).mean()

    @staticmethod
    def causal_effect_loss(probs_batch, labels):
        """
        This method calculates the causal effect loss, i.e. the cross-entropy between the
        probabilities and the one-hot ground truth, averaged over the batch. Probabilities are
        floored at LOG_EPSILON inside the logarithm.

        Args:
            probs_batch (torch.Tensor):
                Probabilities of shape (N, k+u).
            labels (torch.Tensor):
                Class indices (N,) or one-hot labels (N, k+u).

        Returns:
            loss (torch.Tensor): Scalar loss, non-negative.
        """

        probs_batch = Losses._as_tensor(probs_batch)

        if probs_batch.dim() != 2 or probs_batch.shape[0] == 0:
            raise ValueError("The causal effect loss needs a non-empty batch of probabilities")

        indices = Losses.label_indices(labels, probs_batch.shape[1])

        if probs_batch.shape[0] != indices.shape[0]:
            raise ValueError(
                "Batch size mismatch: %s probability rows, %s labels"
                % (probs_batch.shape[0], indices.shape[0])
            )

        probs_true = probs_batch.gather(1, indices.view(-1, 1)).squeeze(1)

        return -torch.log(probs_true.clamp_min(LOG_EPSILON)).mean()

    @staticmethod
    def pearson_correlation(a, b):
        """
        This method calculates the Pearson correlation coefficient between 'a' and 'b' along
        their last dimension (i.e. across feature dimensions, one coefficient per sample).
        When either operand has zero variance the coefficient is 0 and carries no gradient.

        Args:
            a (torch.Tensor): Tensor of shape (..., d), d >= 2.
            b (torch.Tensor): Tensor of the same shape as 'a'.

        Returns:
            correlation (torch.Tensor):
                Tensor of shape (...) with values in [-1, 1].
        """

        a = Losses._as_tensor(a)
        b = Losses._as_tensor(b)

        if a.shape != b.shape:
            raise ValueError(
                "Pearson correlation needs operands of equal shape, got %s and %s"
                % (tuple(a.shape), tuple(b.shape))
            )
        if a.dim() == 0 or a.shape[-1] < 2:
            raise ValueError("Pearson correlation needs at least two feature dimensions")

        a_centred = a - a.mean(dim=-1, keepdim=True)
        b_centred = b - b.mean(dim=-1, keepdim=True)

        covariance = (a_centred * b_centred).sum(dim=-1)
        norms_squared = (a_centred ** 2).sum(dim=-1) * (b_centred ** 2).sum(dim=-1)

        degenerate = norms_squared <= torch.finfo(norms_squared.dtype).tiny
        safe_norms = torch.where(degenerate, torch.ones_like(norms_squared), norms_squared)
        correlation = covariance / torch.sqrt(safe_norms)
        correlation = torch.where(degenerate, torch.zeros_like(correlation), correlation)

        return correlation.clamp(-1.0, 1.0)

    @staticmethod
    def negative_correlation_loss(x_batch, counterfactual_batches, count):
        """
        This method calculates the negative correlation loss between each counterfactual
        feature and the feature remaining after its subtraction:

            (1 / count) * sum_{n=1..count} COR(x_n, x - x_1 - ... - x_n)

        computed per sample across feature dimensions and averaged over the batch. During
        counterfactual learning at step t, 'count' is t-1; during deconfounding it is t.

        Args:
            x_batch (torch.Tensor):
                Original features of shape (N, d).
            counterfactual_batches (sequence of torch.Tensor):
                Counterfactual features x_1, x_2, ..., each of shape (N, d), in pool order.
            count (int):
                Number of counterfactual features entering the loss (>= 1).

        Returns:
            loss (torch.Tensor): Scalar loss within [-1, 1].
        """

        x_batch = Losses._as_tensor(x_batch)

        if count < 1:
            raise ValueError("The negative correlation loss needs count >= 1, got %s" % (count))
        if count > len(counterfactual_batches):
            raise ValueError(
                "The negative correlation loss needs %s counterfactual features, "
                "only %s are available" % (count, len(counterfactual_batches))
            )

        residual = x_batch
        correlations = []
        for position in range(count):
            counterfactual = Losses._as_tensor(counterfactual_batches[position])
            residual = residual - counterfactual
            correlations.append(Losses.pearson_correlation(counterfactual, residual))

        return torch.stack(correlations, dim=0).mean(dim=0).mean()

    @staticmethod
    def pcl_loss(causal_logits_batch, labels, k, u):
        """
        This method calculates the potential confounder learning loss: per sample, the
        absolute difference between the largest logit over all dimensions and the largest
        logit over all dimensions except the ground truth, averaged over the batch. It is
        zero whenever the ground truth is not the unique maximum.

        Args:
            causal_logits_batch (torch.Tensor):
                Logits of shape (N, k+u) mapped from the causal features.
            labels (torch.Tensor):
                Class indices (N,) or one-hot labels (N, k+u), all smaller than k.
            k (int): Number of known classes.
            u (int): Number of expanded logit dimensions.

        Returns:
            loss (torch.Tensor): Scalar loss, non-negative.
        """

        causal_logits_batch = Losses._as_tensor(causal_logits_batch)

        if causal_logits_batch.dim() != 2 or causal_logits_batch.shape[1] != k + u:
            raise ValueError(
                "Logits of shape (N, %s) expected, got %s"
                % (k + u, tuple(causal_logits_batch.shape))
            )
        if k + u < 2:
            raise ValueError("The potential confounder learning loss needs k+u >= 2")

        indices = Losses.label_indices(labels, k)

        largest = causal_logits_batch.max(dim=1).values

        ground_truth_mask = torch.zeros_like(causal_logits_batch, dtype=torch.bool)
        ground_truth_mask.scatter_(1, indices.view(-1, 1), True)
        largest_other = causal_logits_batch.masked_fill(
            ground_truth_mask, float("-inf")
        ).max(dim=1).values

        return torch.abs(largest - largest_other).mean()

    @staticmethod
    def loss_s1(t, parts, lambda1, lambda2):
        """
        This method calculates the loss used to learn the counterfactual features at step t:
            t = 1: maximum entropy loss;
            t > 1: causal effect loss + lambda1 * negative correlation loss (count = t-1)
                   + lambda2 * potential confounder learning loss.

        Args:
            t (int): Step number (>= 1).
            parts (LossInputs): Tensors of the mini-batch.
            lambda1 (float): Weight of the negative correlation term.
            lambda2 (float): Weight of the potential confounder learning term.

        Returns:
            loss (torch.Tensor): Scalar loss.
        """

        if t < 1:
            raise ValueError("Step number must be >= 1, got %s" % (t))

        if t == 1:
            return Losses.max_entropy_loss(parts.probs)

        loss_ce = Losses.causal_effect_loss(parts.probs, parts.labels)
        loss_nc = Losses.negative_correlation_loss(parts.features, parts.counterfactuals, t - 1)
        loss_pcl = Losses.pcl_loss(parts.causal_logits, parts.labels, parts.k, parts.u)

        return loss_ce + lambda1 * loss_nc + lambda2 * loss_pcl

    @staticmethod
    def loss_s2(parts, lambda1, t):
        """
        This method calculates the deconfounding loss at step t: causal effect loss +
        lambda1 * negative correlation loss over all t counterfactual features.

        Args:
            parts (LossInputs): Tensors of the mini-batch.
            lambda1 (float): Weight of the negative correlation term.
            t (int): Step number (>= 1).

        Returns:
            loss (torch.Tensor): Scalar loss.
        """

        if t < 1:
            raise ValueError("Step number must be >= 1, got %s" % (t))

        loss_ce = Losses.causal_effect_loss(parts.probs, parts.labels)
        loss_nc = Losses.negative_correlation_loss(parts.features, parts.counterfactuals, t)

        return loss_ce + lambda1 * loss_nc

    @staticmethod
    def prediction_entropy(probs_batch):
        """Mean Shannon entropy (nats) of the rows of 'probs_batch'."""

        return -Losses.max_entropy_loss(probs_batch)
