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
Feature extractors, the expanded-logit linear classifier and frozen counterfactual snapshots.
"""

import math
import logging
from copy import deepcopy
from dataclasses import dataclass, field, asdict
from typing import Optional
import torch
from torch import nn


logger = logging.getLogger()


@dataclass
class HyperParams:
    """Hyper-parameters of a recursive deconfounding run.

    Attributes:
        lambda1 (float): Weight of the negative correlation loss terms (>= 0).
        lambda2 (float): Weight of the potential confounder learning loss term (>= 0).
        u (int): Number of expanded logit dimensions reserved for unknown classes (>= 0).
        T (int): Maximum step number of the recursion (>= 1).
        k (int): Number of known classes (>= 2).
        theta (float or None): Open-set threshold on the score. If None, it is calibrated on
            the validation split so that 90% of the known validation samples are accepted.
        lr (float): Learning rate of the SGD optimiser.
        momentum (float): Momentum of the SGD optimiser.
        weight_decay (float): Weight decay of the SGD optimiser.
        batch_size (int): Mini-batch size.
        epochs_phase1 (int): Epochs used to learn each counterfactual feature.
        epochs_phase2 (int): Epochs used to train the main model for deconfounding.
        epochs_baseline (int or None): Epochs of the plain backbone baseline. If None,
            T * epochs_phase2 is used.
        seed (int): Seed of all random number generators.
    """

    lambda1: float = 1.0
    lambda2: float = 1.0
    u: int = 32
    T: int = 2
    k: int = 4
    theta: Optional[float] = None
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs_phase1: int = 5
    epochs_phase2: int = 20
    epochs_baseline: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.lambda1 < 0.0 or self.lambda2 < 0.0:
            raise ValueError("lambda1 and lambda2 must be non-negative")
        if self.u < 0:
            raise ValueError("u must be non-negative, got %s" % (self.u))
        if self.T < 1:
            raise ValueError("T must be >= 1, got %s" % (self.T))
        if self.k < 2:
            raise ValueError("k must be >= 2, got %s" % (self.k))
        if self.lr <= 0.0:
            raise ValueError("lr must be positive, got %s" % (self.lr))
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1, got %s" % (self.batch_size))
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise ValueError("Epoch budgets must be non-negative")

    @property
    def n_outputs(self):
        """Length of the logit vector, k+u."""
        return self.k + self.u

    @property
    def baseline_epochs(self):
        if self.epochs_baseline is None:
            return self.T * self.epochs_phase2
        return self.epochs_baseline

    def to_dict(self):
        return asdict(self)


class MLPBackbone(nn.Module):
    """Perceptron feature extractor for flat vector samples."""

    def __init__(self, input_dim, hidden_dims=(64, 32), feature_dim=16):
        super().__init__()
        self.input_shape = (int(input_dim),)
        self.feature_dim = int(feature_dim)

        layers = []
        width_in = int(input_dim)
        for width in hidden_dims:
            layers.append(nn.Linear(width_in, int(width)))
            layers.append(nn.ReLU())
            width_in = int(width)
        layers.append(nn.Linear(width_in, self.feature_dim))
        self.layers = nn.Sequential(*layers)

    def forward(self, batch):
        return self.layers(batch)


class ConvBackbone(nn.Module):
    """Three-block convolutional feature extractor for image samples (C, H, W)."""

    def __init__(self, input_shape, channels=(16, 32, 64), feature_dim=16):
        super().__init__()
        self.input_shape = tuple(int(v) for v in input_shape)
        self.feature_dim = int(feature_dim)

        blocks = []
        channels_in = self.input_shape[0]
        for channels_out in channels:
            blocks += [
                nn.Conv2d(channels_in, int(channels_out), kernel_size=3, padding=1),
                nn.ReLU(),
                nn.MaxPool2d(2, ceil_mode=True),
            ]
            channels_in = int(channels_out)
        self.blocks = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.projection = nn.Linear(channels_in, self.feature_dim)

    def forward(self, batch):
        return self.projection(torch.flatten(self.pool(self.blocks(batch)), 1))


class ClassifierHead(nn.Module):
    """
    Linear classifier without bias mapping d-dimensional features into (k+u)-dimensional
    logit vectors. The weight matrix A has shape (k+u, d) and is initialised uniformly within
    [-1/sqrt(d), 1/sqrt(d)].
    """

    def __init__(self, feature_dim, k, u=0):
        super().__init__()
        self.feature_dim = int(feature_dim)
        self.k = int(k)
        self.u = int(u)
        self.weight = nn.Parameter(torch.empty(self.k + self.u, self.feature_dim))
        bound = 1.0 / math.sqrt(self.feature_dim)
        nn.init.uniform_(self.weight, -bound, bound)

    def forward(self, features):
        if features.shape[-1] != self.feature_dim:
            raise ValueError(
                "Classifier head expects features of length %s, got %s"
                % (self.feature_dim, features.shape[-1])
            )
        return features @ self.weight.t()


class RCDModel(nn.Module):
    """Feature extractor followed by its own classifier head."""

    def __init__(self, extractor, head):
        super().__init__()
        if extractor.feature_dim != head.feature_dim:
            raise ValueError(
                "Feature dimension of the extractor (%s) and the head (%s) differ"
                % (extractor.feature_dim, head.feature_dim)
            )
        self.extractor = extractor
        self.head = head

    def forward(self, batch):
        return self.head(Models.extract(self.extractor, batch))


@dataclass
class CounterfactualSnapshot:
    """Frozen feature extractor producing one counterfactual feature per sample.

    Attributes:
        snapshot_id (int): Step index at which the snapshot was created (1-based).
        extractor (nn.Module): Deep copy of the trained extractor, in evaluation mode and with
            gradients disabled.
        metadata (dict): Creation metadata (step, seed, epochs).
    """

    snapshot_id: int
    extractor: nn.Module
    metadata: dict = field(default_factory=dict)

    def features(self, batch):
        with torch.no_grad():
            return Models.extract(self.extractor, batch)


class Models:
    """This class handles building, running and freezing the networks.
    """

    @staticmethod
    def build_backbone(backbone, input_shape, feature_dim=16, hidden_dims=(64, 32)):
        """
        This method builds the feature extractor named 'backbone' for samples of shape
        'input_shape'.

        Args:
            backbone (str):
                "mlp" (flat vector samples) or "conv" (image samples of shape (C, H, W)).
            input_shape (tuple of int):
                Shape of one sample.
            feature_dim (int):
                Length d of the output features.
            hidden_dims (tuple of int):
                Widths of the hidden layers ("mlp") or channels of the blocks ("conv").

        Returns:
            extractor (nn.Module)
        """

        if backbone == "mlp":
            if len(input_shape) != 1:
                raise ValueError(
                    "The 'mlp' backbone needs flat samples, got shape %s" % (tuple(input_shape),)
                )
            return MLPBackbone(input_shape[0], hidden_dims, feature_dim)

        if backbone == "conv":
            if len(input_shape) != 3:
                raise ValueError(
                    "The 'conv' backbone needs image samples (C, H, W), got shape %s"
                    % (tuple(input_shape),)
                )
            return ConvBackbone(input_shape, hidden_dims, feature_dim)

        raise ValueError("Backbone '%s' not supported (supported: mlp, conv)" % (backbone))

    @staticmethod
    def build_model(
        hyper_params, input_shape, backbone="mlp", feature_dim=16, hidden_dims=(64, 32), u=None
    ):
        """
        This method builds an extractor plus a classifier head with k+u outputs. 'u'
        overrides hyper_params.u when given (e.g. u=0 for the plain backbone baseline).
        """

        if u is None:
            u = hyper_params.u
        extractor = Models.build_backbone(backbone, input_shape, feature_dim, hidden_dims)
        head = ClassifierHead(feature_dim, hyper_params.k, u)
        return RCDModel(extractor, head)

    @staticmethod
    def extract(extractor, batch):
        """
        This method runs the forward pass of 'extractor' on 'batch' after verifying that the
        shape of the samples matches the input shape of the extractor.

        Returns:
            features (torch.Tensor): Features of shape (N, d).
        """

        expected = tuple(extractor.input_shape)
        received = tuple(batch.shape[1:])

        if isinstance(extractor, ConvBackbone):
            shape_ok = len(received) == 3 and received[0] == expected[0]
        else:
            shape_ok = received == expected

        if batch.dim() < 2 or not shape_ok:
            raise ValueError(
                "Extractor expects samples of shape %s, got batch of shape %s"
                % (expected, tuple(batch.shape))
            )

        return extractor(batch)

    @staticmethod
    def classify(head, features):
        """This method maps features of shape (N, d) into logits of shape (N, k+u)."""

        return head(features)

    @staticmethod
    def freeze(extractor, snapshot_id=0, metadata=None):
        """
        This method creates a CounterfactualSnapshot holding a deep copy of 'extractor' in
        evaluation mode with all gradients disabled. Later updates of 'extractor' do not
        affect the snapshot.
        """

        frozen = deepcopy(extractor)
        frozen.eval()
        frozen.requires_grad_(False)

        return CounterfactualSnapshot(
            snapshot_id=int(snapshot_id),
            extractor=frozen,
            metadata=dict(metadata) if metadata is not None else {},
        )
