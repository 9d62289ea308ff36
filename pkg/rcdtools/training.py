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
import torch
from torch.utils.data import DataLoader, TensorDataset


logger = logging.getLogger()


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss becomes NaN or infinite."""


class Trainer:
    """This class handles mini-batch loading, the SGD training loop and batched inference.
    """

    @staticmethod
    def make_loader(sample_set, batch_size, shuffle=False, seed=0):
        """
        This method wraps 'sample_set' into a DataLoader. When shuffled, the order of the
        mini-batches is controlled by a generator seeded with 'seed'.
        """

        dataset = TensorDataset(
            torch.from_numpy(sample_set.features), torch.from_numpy(sample_set.labels)
        )
        generator = torch.Generator()
        generator.manual_seed(int(seed))

        return DataLoader(
            dataset, batch_size=int(batch_size), shuffle=shuffle, generator=generator
        )

    @staticmethod
    def fit(parameters, batch_loss, loader, epochs, hyper_params, description=""):
        """
        This method minimises 'batch_loss' over 'epochs' passes through 'loader' with SGD.

        Args:
            parameters (iterable of torch.nn.Parameter):
                Parameters to optimise.
            batch_loss (callable):
                Function (samples, labels) -> scalar loss tensor.
            loader (DataLoader):
                Mini-batches of (samples, labels).
            epochs (int):
                Number of passes through 'loader'.
            hyper_params (HyperParams):
                Source of lr, momentum and weight_decay.
            description (str):
                Label used in log messages.

        Returns:
            epoch_losses (list of float):
                Mean loss of each epoch.
        """

        optimiser = torch.optim.SGD(
            parameters,
            lr=hyper_params.lr,
            momentum=hyper_params.momentum,
            weight_decay=hyper_params.weight_decay,
        )

        epoch_losses = []
        for epoch in range(epochs):
            batch_losses = []
            for samples, labels in loader:
                loss = batch_loss(samples, labels)

                if not bool(torch.isfinite(loss)):
                    error_message = (
                        "Training diverged (%s): non-finite loss at epoch %s"
                        % (description, epoch + 1)
                    )
                    logger.critical(error_message)
                    raise TrainingDivergedError(error_message)

                optimiser.zero_grad()
                loss.backward()
                optimiser.step()
                batch_losses.append(float(loss.detach()))

            epoch_losses.append(float(np.mean(batch_losses)))
            logger.debug(
                "%s: epoch %s of %s, mean loss %.6f"
                % (description, epoch + 1, epochs, epoch_losses[-1])
            )

        return epoch_losses

    @staticmethod
    def predict(function, sample_set, batch_size=256):
        """
        This method applies 'function' (batch tensor -> tensor) to 'sample_set' in
        mini-batches, without gradients, and concatenates the outputs as a numpy array.
        """

        if len(sample_set) == 0:
            return None

        outputs = []
        with torch.no_grad():
            for start in range(0, len(sample_set), batch_size):
                batch = torch.from_numpy(sample_set.features[start:start + batch_size])
                outputs.append(function(batch).detach().cpu().numpy())

        return np.concatenate(outputs, axis=0)
