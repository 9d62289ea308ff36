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

import numpy as np
import pytest
import torch
from rcdtools.datasets import DatasetSplitter, SyntheticConfoundedDataset, SyntheticSpec
from rcdtools.losses import Losses
from rcdtools.metrics import Metrics
from rcdtools.models import (
    ClassifierHead,
    ConvBackbone,
    HyperParams,
    MLPBackbone,
    Models,
    RCDModel,
)
from rcdtools.training import Trainer


def test_hyper_params():
    hp = HyperParams()
    assert hp.lambda1 == 1.0 and hp.lambda2 == 1.0
    assert hp.u == 32 and hp.T == 2
    assert hp.weight_decay == 1e-4
    assert hp.n_outputs == hp.k + hp.u
    assert hp.baseline_epochs == hp.T * hp.epochs_phase2
    assert HyperParams(epochs_baseline=3).baseline_epochs == 3
    assert HyperParams(u=0).n_outputs == 4
    assert HyperParams().to_dict()["theta"] is None

    for invalid in [
        {"lambda1": -0.1},
        {"lambda2": -1.0},
        {"u": -1},
        {"T": 0},
        {"k": 1},
        {"lr": 0.0},
        {"batch_size": 0},
    ]:
        with pytest.raises(ValueError):
            HyperParams(**invalid)


def test_extract():
    torch.manual_seed(0)
    extractor = MLPBackbone(10, hidden_dims=(64, 32), feature_dim=16)
    batch = torch.randn(4, 10)

    features = Models.extract(extractor, batch)
    assert tuple(features.shape) == (4, 16)

    snapshot = Models.freeze(extractor, snapshot_id=1)
    torch.testing.assert_close(snapshot.features(batch), snapshot.features(batch), rtol=0, atol=0)

    with pytest.raises(ValueError) as excinfo:
        Models.extract(extractor, torch.randn(4, 9))
    assert "expects samples of shape (10,)" in str(excinfo.value)

    with pytest.raises(ValueError):
        Models.extract(extractor, torch.randn(10))


def test_conv_backbone():
    torch.manual_seed(0)
    extractor = Models.build_backbone("conv", (3, 8, 8), feature_dim=16, hidden_dims=(4, 8, 8))
    assert isinstance(extractor, ConvBackbone)
    assert tuple(Models.extract(extractor, torch.randn(2, 3, 8, 8)).shape) == (2, 16)

    with pytest.raises(ValueError):
        Models.extract(extractor, torch.randn(2, 1, 8, 8))

    with pytest.raises(ValueError):
        Models.build_backbone("conv", (24,))

    with pytest.raises(ValueError):
        Models.build_backbone("mlp", (3, 8, 8))

    with pytest.raises(ValueError):
        Models.build_backbone("transformer", (24,))


def test_classify():
    torch.manual_seed(0)
    head = ClassifierHead(4, k=3, u=2).double()
    features = torch.randn(6, 4, dtype=torch.float64)

    logits = Models.classify(head, features)
    assert tuple(logits.shape) == (6, 5)

    # No bias: the head is linear
    assert [name for name, _ in head.named_parameters()] == ["weight"]
    torch.testing.assert_close(
        Models.classify(head, 2.0 * features), 2.0 * logits, rtol=0.0, atol=1e-9
    )
    other = torch.randn(6, 4, dtype=torch.float64)
    torch.testing.assert_close(
        Models.classify(head, 0.5 * features - 3.0 * other),
        0.5 * logits - 3.0 * Models.classify(head, other),
        rtol=0.0,
        atol=1e-9,
    )
    torch.testing.assert_close(
        Models.classify(head, torch.zeros(2, 4, dtype=torch.float64)),
        torch.zeros(2, 5, dtype=torch.float64),
    )

    with torch.no_grad():
        head.weight.zero_()
    assert bool((Models.classify(head, features) == 0.0).all())

    with pytest.raises(ValueError):
        Models.classify(head, torch.randn(6, 3, dtype=torch.float64))


def test_classifier_head_initialisation():
    torch.manual_seed(3)
    head = ClassifierHead(16, k=4, u=32)
    assert tuple(head.weight.shape) == (36, 16)
    assert float(head.weight.abs().max()) <= 1.0 / np.sqrt(16)


def test_build_model():
    hp = HyperParams(k=3, u=5)
    model = Models.build_model(hp, (12,), "mlp", feature_dim=8, hidden_dims=(16,))
    assert isinstance(model, RCDModel)
    assert tuple(model(torch.randn(2, 12)).shape) == (2, 8)

    baseline = Models.build_model(hp, (12,), "mlp", feature_dim=8, hidden_dims=(16,), u=0)
    assert tuple(baseline(torch.randn(2, 12)).shape) == (2, 3)

    with pytest.raises(ValueError):
        RCDModel(MLPBackbone(12, (16,), 8), ClassifierHead(6, 3, 5))


def test_freeze():
    torch.manual_seed(1)
    extractor = MLPBackbone(5, hidden_dims=(8,), feature_dim=4)
    batch = torch.randn(3, 5)

    first = Models.freeze(extractor, snapshot_id=1, metadata={"step": 1})
    second = Models.freeze(extractor, snapshot_id=2)
    expected = first.features(batch).clone()

    assert first.snapshot_id == 1 and first.metadata == {"step": 1}
    assert all(not p.requires_grad for p in first.extractor.parameters())
    assert first.extractor is not second.extractor

    # Training the source does not change the snapshots
    optimiser = torch.optim.SGD(extractor.parameters(), lr=0.5)
    extractor(batch).pow(2).sum().backward()
    optimiser.step()

    torch.testing.assert_close(first.features(batch), expected, rtol=0, atol=0)
    torch.testing.assert_close(second.features(batch), expected, rtol=0, atol=0)
    assert not torch.equal(Models.extract(extractor, batch).detach(), expected)


def test_toy_backbone_fits_the_training_split():
    spec = SyntheticSpec(seed=0)
    dataset = SyntheticConfoundedDataset.generate(spec)
    splits = DatasetSplitter.split(
        dataset, SyntheticConfoundedDataset.default_split_spec(spec), seed=0
    )

    hp = HyperParams(u=0, lr=0.01)
    torch.manual_seed(hp.seed)
    model = Models.build_model(hp, splits["train_known"].input_shape, u=0)

    def _loss(samples, labels):
        return Losses.causal_effect_loss(Losses.softmax(model(samples)), labels)

    epoch_losses = Trainer.fit(
        model.parameters(),
        _loss,
        Trainer.make_loader(splits["train_known"], hp.batch_size, True, hp.seed),
        hp.baseline_epochs,
        hp,
    )
    assert epoch_losses[-1] < epoch_losses[0]

    logits = Trainer.predict(model, splits["train_known"])
    accuracy = Metrics.accuracy(
        Metrics.closed_set_prediction(logits, hp.k), splits["train_known"].labels
    )
    assert accuracy >= 0.95
