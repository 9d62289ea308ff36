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
Samples, known/unknown splits and the synthetic confounded-dataset generator.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional
import numpy as np


logger = logging.getLogger()

SETTINGS = ["standard", "cross-dataset"]


@dataclass
class SampleSet:
    """Samples of one split.

    Attributes:
        features (np.ndarray): Samples of shape (n, *input_shape), float32.
        labels (np.ndarray): Class ids of shape (n,), int64.
        sample_ids (np.ndarray): Unique sample identifiers of shape (n,), str.
    """

    features: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.sample_ids = np.asarray(self.sample_ids).astype(str)
        if not (len(self.features) == len(self.labels) == len(self.sample_ids)):
            raise ValueError("Features, labels and sample IDs must have the same length")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return tuple(self.features.shape[1:])

    def subset(self, indices):
        indices = np.asarray(indices, dtype=int)
        return SampleSet(
            self.features[indices], self.labels[indices], self.sample_ids[indices]
        )

    @staticmethod
    def empty(input_shape):
        return SampleSet(
            np.zeros((0, *input_shape), dtype=np.float32),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=str),
        )


@dataclass
class Dataset:
    """A corpus with a training and (optionally) a testing split."""

    name: str
    train: SampleSet
    test: Optional[SampleSet] = None

    @property
    def class_ids(self):
        labels = [self.train.labels]
        if self.test is not None:
            labels.append(self.test.labels)
        return np.unique(np.concatenate(labels))


@dataclass
class SplitSpec:
    """Definition of the known/unknown split.

    Attributes:
        known_class_ids (list of int): Ordered known classes; the i-th one becomes label i.
        unknown_class_ids (list of int): Classes only present in the test set (standard
            setting). Under the cross-dataset setting, if not empty, they filter the classes of
            the second corpus.
        setting (str): "standard" (unknowns from the same corpus) or "cross-dataset"
            (unknowns from a second corpus).
        validation_fraction (float): Fraction of known training samples kept for validation,
            within (0, 1).
    """

    known_class_ids: List[int]
    unknown_class_ids: List[int] = field(default_factory=list)
    setting: str = "standard"
    validation_fraction: float = 0.1

    def __post_init__(self):
        self.known_class_ids = [int(v) for v in self.known_class_ids]
        self.unknown_class_ids = [int(v) for v in self.unknown_class_ids]

        if self.setting not in SETTINGS:
            raise ValueError(
                "Split setting '%s' not supported (supported: %s)"
                % (self.setting, ", ".join(SETTINGS))
            )
        if len(self.known_class_ids) < 2:
            raise ValueError("At least two known classes are needed")
        if len(set(self.known_class_ids)) != len(self.known_class_ids):
            raise ValueError("Known class IDs are repeated")
        if self.setting == "standard":
            overlap = set(self.known_class_ids) & set(self.unknown_class_ids)
            if len(overlap) > 0:
                raise ValueError(
                    "Known and unknown class IDs overlap: %s" % (sorted(overlap))
                )
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError(
                "validation_fraction must lie within (0, 1), got %s"
                % (self.validation_fraction)
            )

    @property
    def k(self):
        return len(self.known_class_ids)


@dataclass
class SyntheticSpec:
    """Definition of a synthetic confounded dataset.

    Attributes:
        k (int): Number of known classes (ids 0..k-1).
        m (int): Number of unknown classes (ids k..k+m-1), only present in the test split.
        causal_dims (int): Dimensions carrying the class-conditional Gaussian clusters.
        confound_dims (int): Dimensions carrying the confounder.
        train_size (int): Training samples, balanced across the k known classes.
        test_size (int): Testing samples, balanced across the k+m classes.
        confound_strength (float): Scale of the class-correlated offsets of the confound
            dimensions in the training split.
        seed (int): Seed of the generator.
        class_separation (float): Standard deviation of the cluster means.
        causal_noise (float): Within-class standard deviation of the causal dimensions.
        confound_noise (float): Standard deviation of the confound dimensions.
        decorrelated_test (bool): If True, the confound part of the testing split is drawn
            independently of the class. If False, the testing split follows the training
            distribution (every class keeps its own offset).
    """

    k: int = 4
    m: int = 2
    causal_dims: int = 8
    confound_dims: int = 8
    train_size: int = 2000
    test_size: int = 500
    confound_strength: float = 1.0
    seed: int = 0
    class_separation: float = 2.0
    causal_noise: float = 1.0
    confound_noise: float = 1.0
    decorrelated_test: bool = True

    def __post_init__(self):
        if self.k < 2 or self.m < 0:
            raise ValueError("Synthetic spec needs k >= 2 and m >= 0")
        if self.causal_dims < 1:
            raise ValueError("Synthetic spec needs causal_dims >= 1")
        if self.confound_dims < 0:
            raise ValueError("Synthetic spec needs confound_dims >= 0")
        if self.train_size < self.k + self.m or self.test_size < self.k + self.m:
            raise ValueError(
                "Synthetic spec needs train_size and test_size >= k+m = %s"
                % (self.k + self.m)
            )
        if self.confound_strength < 0.0:
            raise ValueError("Synthetic spec needs confound_strength >= 0")
        if self.causal_noise <= 0.0 or self.confound_noise <= 0.0:
            raise ValueError("Synthetic spec needs positive noise levels")


class DatasetSplitter:
    """This class handles the division of datasets into known and unknown partitions.
    """

    @staticmethod
    def split(dataset, spec, unknown_dataset=None, seed=0):
        """
        This method divides 'dataset' into the following partitions, disjoint by sample ID:
            - train_known: training samples of the known classes;
            - val_known: a random fraction 'spec.validation_fraction' of the former;
            - test_known: testing samples of the known classes;
            - test_unknown: testing samples of the unknown classes (standard setting) or of
            the second corpus 'unknown_dataset' (cross-dataset setting).

        Labels of the known partitions are re-mapped to 0..k-1 following the order of
        'spec.known_class_ids'. Labels of 'test_unknown' keep their original class ids.

        Args:
            dataset (Dataset): Corpus with a training and a testing split.
            spec (SplitSpec): Definition of the split.
            unknown_dataset (Dataset): Second corpus, only for the cross-dataset setting. Its
                testing split (or its training split if it has none) is used.
            seed (int): Seed controlling the selection of validation samples.

        Returns:
            splits (dict of SampleSet): Keys "train_known", "val_known", "test_known",
                "test_unknown".
        """

        if dataset.test is None:
            raise ValueError("Dataset '%s' has no testing split" % (dataset.name))

        available = set(dataset.class_ids.tolist())
        missing = [c for c in spec.known_class_ids if c not in available]
        if spec.setting == "standard":
            missing += [c for c in spec.unknown_class_ids if c not in available]
        if len(missing) > 0:
            raise ValueError(
                "Class IDs not present in dataset '%s': %s" % (dataset.name, missing)
            )

        mapping = {class_id: i for i, class_id in enumerate(spec.known_class_ids)}
        train, test = DatasetSplitter._unique_sample_ids(dataset)

        # Known training samples, divided into training and validation
        in_known = np.isin(train.labels, spec.known_class_ids)
        known_indices = np.flatnonzero(in_known)
        rng = np.random.default_rng(seed)
        permuted = rng.permutation(known_indices)
        n_validation = int(round(spec.validation_fraction * known_indices.size))
        validation_indices = np.sort(permuted[:n_validation])
        training_indices = np.sort(permuted[n_validation:])

        splits = {
            "train_known": DatasetSplitter._remap(train.subset(training_indices), mapping),
            "val_known": DatasetSplitter._remap(train.subset(validation_indices), mapping),
            "test_known": DatasetSplitter._remap(
                test.subset(np.flatnonzero(np.isin(test.labels, spec.known_class_ids))),
                mapping,
            ),
        }

        if spec.setting == "standard":
            splits["test_unknown"] = test.subset(
                np.flatnonzero(np.isin(test.labels, spec.unknown_class_ids))
            )
        else:
            splits["test_unknown"] = DatasetSplitter._unknowns_from_second_corpus(
                unknown_dataset, spec, train.input_shape
            )

        logger.info(
            "Split of '%s' (%s): %s"
            % (
                dataset.name,
                spec.setting,
                ", ".join(["%s=%s" % (key, len(value)) for key, value in splits.items()]),
            )
        )

        return splits

    @staticmethod
    def _unique_sample_ids(dataset):
        """
        This method returns the training and testing splits of 'dataset' with sample IDs that
        are unique across both splits. IDs repeated within one split raise a ValueError. If the
        two splits share IDs, all IDs are prefixed with "train:" and "test:", respectively.
        """

        for name, sample_set in [("training", dataset.train), ("testing", dataset.test)]:
            if np.unique(sample_set.sample_ids).size != len(sample_set):
                error_message = "Sample IDs of the %s split of '%s' are not unique" % (
                    name,
                    dataset.name,
                )
                logger.critical(error_message)
                raise ValueError(error_message)

        shared = np.intersect1d(dataset.train.sample_ids, dataset.test.sample_ids)
        if shared.size == 0:
            return dataset.train, dataset.test

        logger.warning(
            "%s sample IDs of '%s' appear in both splits, prefixing them with 'train:' and "
            "'test:'" % (shared.size, dataset.name)
        )

        return tuple(
            SampleSet(
                sample_set.features,
                sample_set.labels,
                np.array(["%s:%s" % (prefix, v) for v in sample_set.sample_ids]),
            )
            for prefix, sample_set in [("train", dataset.train), ("test", dataset.test)]
        )

    @staticmethod
    def _remap(sample_set, mapping):
        labels = np.array([mapping[v] for v in sample_set.labels], dtype=np.int64)
        return SampleSet(sample_set.features, labels, sample_set.sample_ids)

    @staticmethod
    def _unknowns_from_second_corpus(unknown_dataset, spec, input_shape):
        if unknown_dataset is None:
            raise ValueError("The cross-dataset setting needs a second corpus for unknowns")

        source = unknown_dataset.test
        if source is None:
            source = unknown_dataset.train

        if source.input_shape != tuple(input_shape):
            raise ValueError(
                "Samples of '%s' have shape %s, expected %s"
                % (unknown_dataset.name, source.input_shape, tuple(input_shape))
            )

        if len(spec.unknown_class_ids) > 0:
            source = source.subset(
                np.flatnonzero(np.isin(source.labels, spec.unknown_class_ids))
            )

        # Sample IDs are prefixed with the corpus name to keep partitions disjoint
        sample_ids = np.array(
            ["%s:%s" % (unknown_dataset.name, v) for v in source.sample_ids]
        )

        return SampleSet(source.features, source.labels, sample_ids)


class SyntheticConfoundedDataset:
    """
    This class generates datasets whose samples are made of two parts:
        - causal part: class-conditional Gaussian clusters (unknown classes have their own,
        held-out cluster means);
        - confound part: in the training split, a class-specific offset scaled by
        'confound_strength' plus Gaussian noise; in the testing split, the offset of a class
        drawn independently of the true class, plus Gaussian noise.

    A classifier relying on the confound part in training is misled in testing. With
    confound_strength = 0 the confound part is pure noise in both splits. With
    decorrelated_test = False the testing split follows the training distribution, drawing
    the same random numbers.
    """

    @staticmethod
    def balanced_counts(size, n_classes):
        """Samples per class, differing by at most one (extra samples go to the lowest ids)."""

        counts = np.full(n_classes, size // n_classes, dtype=int)
        counts[: size % n_classes] += 1
        return counts

    @staticmethod
    def generate(spec):
        """
        This method generates the Dataset defined by 'spec' (SyntheticSpec). The output is
        fully determined by 'spec' (including its seed).
        """

        rng = np.random.default_rng(spec.seed)
        n_classes = spec.k + spec.m

        means = rng.normal(0.0, spec.class_separation, size=(n_classes, spec.causal_dims))
        offsets = rng.normal(0.0, 1.0, size=(n_classes, spec.confound_dims))

        train_labels = np.repeat(
            np.arange(spec.k), SyntheticConfoundedDataset.balanced_counts(spec.train_size, spec.k)
        )
        test_labels = np.repeat(
            np.arange(n_classes),
            SyntheticConfoundedDataset.balanced_counts(spec.test_size, n_classes),
        )

        train_features = np.concatenate(
            [
                means[train_labels]
                + rng.normal(0.0, spec.causal_noise, size=(train_labels.size, spec.causal_dims)),
                spec.confound_strength * offsets[train_labels]
                + rng.normal(
                    0.0, spec.confound_noise, size=(train_labels.size, spec.confound_dims)
                ),
            ],
            axis=1,
        )

        # Confounder decorrelated from the class in testing
        test_confounders = rng.integers(0, n_classes, size=test_labels.size)
        if not spec.decorrelated_test:
            test_confounders = test_labels
        test_features = np.concatenate(
            [
                means[test_labels]
                + rng.normal(0.0, spec.causal_noise, size=(test_labels.size, spec.causal_dims)),
                spec.confound_strength * offsets[test_confounders]
                + rng.normal(
                    0.0, spec.confound_noise, size=(test_labels.size, spec.confound_dims)
                ),
            ],
            axis=1,
        )

        return Dataset(
            name="synthetic",
            train=SampleSet(
                train_features,
                train_labels,
                np.array(["train-%05d" % i for i in range(train_labels.size)]),
            ),
            test=SampleSet(
                test_features,
                test_labels,
                np.array(["test-%05d" % i for i in range(test_labels.size)]),
            ),
        )

    @staticmethod
    def default_split_spec(spec, validation_fraction=0.1):
        """SplitSpec with known classes 0..k-1 and unknown classes k..k+m-1."""

        return SplitSpec(
            known_class_ids=list(range(spec.k)),
            unknown_class_ids=list(range(spec.k, spec.k + spec.m)),
            setting="standard",
            validation_fraction=validation_fraction,
        )
