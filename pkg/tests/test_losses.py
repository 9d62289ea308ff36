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
from torch.func import functional_call
from rcdtools.losses import Losses, LossInputs
from rcdtools.models import MLPBackbone, ClassifierHead, Models


def _brute_softmax(logits):
    exps = [np.exp(v - max(logits)) for v in logits]
    return [e / sum(exps) for e in exps]


def _brute_max_entropy(probs):
    total = 0.0
    for row in probs:
        for p in row:
            if p > 0.0:
                total += p * np.log(max(p, 1e-12))
    return total / len(probs)


def _brute_cross_entropy(probs, labels):
    total = 0.0
    for row, label in zip(probs, labels):
        total -= np.log(max(row[label], 1e-12))
    return total / len(probs)


def _brute_pearson(a, b):
    n = len(a)
    mean_a = sum(a) / n
    mean_b = sum(b) / n
    covariance = sum((a[i] - mean_a) * (b[i] - mean_b) for i in range(n))
    var_a = sum((a[i] - mean_a) ** 2 for i in range(n))
    var_b = sum((b[i] - mean_b) ** 2 for i in range(n))
    if var_a == 0.0 or var_b == 0.0:
        return 0.0
    return covariance / np.sqrt(var_a * var_b)


def _brute_negative_correlation(x, counterfactuals, count):
    total = 0.0
    for i in range(len(x)):
        per_sample = 0.0
        for n in range(1, count + 1):
            residual = [
                x[i][j] - sum(counterfactuals[m][i][j] for m in range(n))
                for j in range(len(x[i]))
            ]
            per_sample += _brute_pearson(list(counterfactuals[n - 1][i]), residual)
        total += per_sample / count
    return total / len(x)


def _brute_pcl(logits, labels):
    total = 0.0
    for row, label in zip(logits, labels):
        others = [v for j, v in enumerate(row) if j != label]
        total += abs(max(row) - max(others))
    return total / len(logits)


def test_softmax():
    np.testing.assert_allclose(Losses.softmax([0.0, 0.0]).numpy(), [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(
        Losses.softmax([np.log(2.0), 0.0]).numpy(), [2.0 / 3.0, 1.0 / 3.0], atol=1e-12
    )
    np.testing.assert_allclose(
        Losses.softmax([5.0, 5.0, 5.0, 5.0]).numpy(), [0.25] * 4, atol=1e-12
    )

    # Invariance under constant shifts
    rng = np.random.default_rng(11)
    for _ in range(20):
        logits = rng.normal(size=(3, 6))
        shift = rng.uniform(-50.0, 50.0)
        np.testing.assert_allclose(
            Losses.softmax(logits + shift).numpy(), Losses.softmax(logits).numpy(), atol=1e-9
        )
        np.testing.assert_allclose(Losses.softmax(logits).sum(dim=-1).numpy(), 1.0, atol=1e-6)

    with pytest.raises(ValueError) as excinfo:
        Losses.softmax([1.0, float("nan")])
    assert "non-finite" in str(excinfo.value)

    with pytest.raises(ValueError):
        Losses.softmax([float("inf"), 0.0])


def test_max_entropy_loss():
    assert Losses.max_entropy_loss([[0.25, 0.25, 0.25, 0.25]]).item() == pytest.approx(
        -np.log(4.0), abs=1e-9
    )
    assert Losses.max_entropy_loss([[1.0, 0.0, 0.0, 0.0]]).item() == pytest.approx(0.0, abs=1e-12)
    assert Losses.max_entropy_loss([[0.5, 0.5], [1.0, 0.0]]).item() == pytest.approx(
        -np.log(2.0) / 2.0, abs=1e-4
    )
    assert Losses.max_entropy_loss([[0.5, 0.5], [1.0, 0.0]]).item() == pytest.approx(
        -0.3466, abs=1e-4
    )

    with pytest.raises(ValueError):
        Losses.max_entropy_loss(torch.zeros((0, 4), dtype=torch.float64))


def test_max_entropy_loss_bounds():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n_outputs = int(rng.integers(2, 7))
        probs = Losses.softmax(rng.normal(size=(4, n_outputs)))
        value = Losses.max_entropy_loss(probs).item()
        assert -np.log(n_outputs) - 1e-12 <= value <= 0.0
        # Rows are not uniform, so the lower bound is not attained
        assert value > -np.log(n_outputs) + 1e-9

        uniform = torch.full((3, n_outputs), 1.0 / n_outputs, dtype=torch.float64)
        assert Losses.max_entropy_loss(uniform).item() == pytest.approx(
            -np.log(n_outputs), abs=1e-9
        )

        # Shifting the logits does not change the loss
        logits = rng.normal(size=(4, n_outputs))
        assert Losses.max_entropy_loss(Losses.softmax(logits + 7.5)).item() == pytest.approx(
            Losses.max_entropy_loss(Losses.softmax(logits)).item(), abs=1e-9
        )


def test_causal_effect_loss():
    assert Losses.causal_effect_loss([[1.0, 0.0, 0.0]], [0]).item() == pytest.approx(0.0)
    assert Losses.causal_effect_loss([[0.5, 0.5]], [0]).item() == pytest.approx(np.log(2.0))
    assert Losses.causal_effect_loss([[0.5, 0.5], [0.25, 0.75]], [0, 1]).item() == pytest.approx(
        (np.log(2.0) + np.log(4.0 / 3.0)) / 2.0
    )
    assert Losses.causal_effect_loss([[0.5, 0.5], [0.25, 0.75]], [0, 1]).item() == pytest.approx(
        0.4904, abs=1e-4
    )

    # One-hot labels are equivalent to indices
    assert Losses.causal_effect_loss(
        [[0.5, 0.5], [0.25, 0.75]], [[1, 0], [0, 1]]
    ).item() == pytest.approx((np.log(2.0) + np.log(4.0 / 3.0)) / 2.0)

    # Probability of zero at the label is floored, the loss stays finite
    assert np.isfinite(Losses.causal_effect_loss([[0.0, 1.0]], [0]).item())
    assert Losses.causal_effect_loss([[0.0, 1.0]], [0]).item() == pytest.approx(
        -np.log(1e-12)
    )

    with pytest.raises(ValueError) as excinfo:
        Losses.causal_effect_loss([[0.5, 0.5], [0.25, 0.75]], [0])
    assert "mismatch" in str(excinfo.value)

    with pytest.raises(ValueError):
        Losses.causal_effect_loss([[0.5, 0.5]], [[1, 1]])

    # Labels outside the logit vector
    for labels in [[5], [-1]]:
        with pytest.raises(ValueError):
            Losses.causal_effect_loss([[0.5, 0.5]], labels)


def test_pearson_correlation():
    assert Losses.pearson_correlation([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]).item() == pytest.approx(
        1.0
    )
    assert Losses.pearson_correlation([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]).item() == pytest.approx(
        -1.0
    )
    assert Losses.pearson_correlation(
        [1.0, 0.0, 2.0, 1.0], [2.0, 1.0, 1.0, 0.0]
    ).item() == pytest.approx(0.0, abs=1e-12)
    assert Losses.pearson_correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]).item() == 0.0

    with pytest.raises(ValueError):
        Losses.pearson_correlation([1.0, 2.0, 3.0], [1.0, 2.0])

    with pytest.raises(ValueError):
        Losses.pearson_correlation([1.0], [2.0])


def test_pearson_correlation_properties():
    rng = np.random.default_rng(5)
    for _ in range(50):
        d = int(rng.integers(2, 9))
        a = rng.normal(size=(4, d))
        b = rng.normal(size=(4, d))
        alpha = rng.uniform(0.1, 10.0)
        beta = rng.normal()

        correlation = Losses.pearson_correlation(a, b).numpy()
        assert np.all(correlation >= -1.0) and np.all(correlation <= 1.0)
        np.testing.assert_allclose(
            Losses.pearson_correlation(b, a).numpy(), correlation, atol=1e-12
        )
        np.testing.assert_allclose(
            Losses.pearson_correlation(alpha * a + beta, b).numpy(), correlation, atol=1e-9
        )


def test_negative_correlation_loss():
    x = torch.tensor([[2.0, 4.0, 6.0]], dtype=torch.float64)
    x_1 = torch.tensor([[1.0, 1.0, 3.0]], dtype=torch.float64)
    assert Losses.negative_correlation_loss(x, [x_1], 1).item() == pytest.approx(0.5)

    x = torch.tensor([[2.0, 4.0]], dtype=torch.float64)
    x_1 = torch.tensor([[1.0, 2.0]], dtype=torch.float64)
    assert Losses.negative_correlation_loss(x, [x_1], 1).item() == pytest.approx(1.0)

    x = torch.tensor([[0.3, -1.2, 2.5, 0.7]], dtype=torch.float64)
    assert Losses.negative_correlation_loss(x, [x.clone()], 1).item() == 0.0

    # Only the first 'count' counterfactual features are used
    rng = np.random.default_rng(0)
    x = torch.from_numpy(rng.normal(size=(3, 5)))
    counterfactuals = [torch.from_numpy(rng.normal(size=(3, 5))) for _ in range(3)]
    assert Losses.negative_correlation_loss(x, counterfactuals, 2).item() == pytest.approx(
        Losses.negative_correlation_loss(x, counterfactuals[:2], 2).item()
    )

    with pytest.raises(ValueError) as excinfo:
        Losses.negative_correlation_loss(x, counterfactuals, 4)
    assert "only 3 are available" in str(excinfo.value)

    with pytest.raises(ValueError):
        Losses.negative_correlation_loss(x, counterfactuals, 0)


def test_pcl_loss():
    assert Losses.pcl_loss([[3.0, 1.0, 2.0]], [0], 3, 0).item() == pytest.approx(1.0)
    assert Losses.pcl_loss([[1.0, 3.0, 2.0]], [0], 3, 0).item() == pytest.approx(0.0)
    assert Losses.pcl_loss([[3.0, 3.0, 2.0]], [0], 3, 0).item() == pytest.approx(0.0)

    # Expanded dimensions take part in both maxima
    assert Losses.pcl_loss([[3.0, 1.0, 2.5]], [0], 2, 1).item() == pytest.approx(0.5)
    assert Losses.pcl_loss([[3.0, 1.0, 4.0]], [0], 2, 1).item() == pytest.approx(0.0)

    with pytest.raises(ValueError) as excinfo:
        Losses.pcl_loss([[3.0, 1.0, 2.0]], [3], 3, 0)
    assert "known classes" in str(excinfo.value)

    with pytest.raises(ValueError):
        Losses.pcl_loss([[3.0, 1.0, 2.0]], [2], 2, 1)

    with pytest.raises(ValueError):
        Losses.pcl_loss([[3.0, 1.0, 2.0]], [0], 2, 2)


def test_pcl_loss_properties():
    rng = np.random.default_rng(8)
    for _ in range(50):
        k = int(rng.integers(2, 4))
        u = int(rng.integers(0, 3))
        logits = rng.normal(size=(5, k + u))
        labels = rng.integers(0, k, size=5)
        assert Losses.pcl_loss(logits, labels, k, u).item() >= 0.0

        # Ground truth that is never the argmax gives a zero loss
        not_argmax = np.array(
            [np.argmin(row[:k]) if np.argmax(row) < k else 0 for row in logits]
        )
        keep = np.array([np.argmax(row) != label for row, label in zip(logits, not_argmax)])
        if keep.any():
            assert Losses.pcl_loss(logits[keep], not_argmax[keep], k, u).item() == 0.0


def _parts(rng, batch, d, k, u, n_counterfactuals):
    logits = torch.from_numpy(rng.normal(size=(batch, k + u)))
    return LossInputs(
        probs=Losses.softmax(logits),
        labels=torch.from_numpy(rng.integers(0, k, size=batch)),
        features=torch.from_numpy(rng.normal(size=(batch, d))),
        counterfactuals=[
            torch.from_numpy(rng.normal(size=(batch, d))) for _ in range(n_counterfactuals)
        ],
        causal_logits=logits,
        k=k,
        u=u,
    )


def test_loss_s1():
    rng = np.random.default_rng(21)
    parts = _parts(rng, batch=4, d=6, k=3, u=2, n_counterfactuals=2)

    assert Losses.loss_s1(1, parts, 1.0, 1.0).item() == Losses.max_entropy_loss(parts.probs).item()
    assert Losses.loss_s1(2, parts, 0.0, 0.0).item() == pytest.approx(
        Losses.causal_effect_loss(parts.probs, parts.labels).item(), abs=1e-12
    )

    loss_ce = Losses.causal_effect_loss(parts.probs, parts.labels).item()
    loss_nc = Losses.negative_correlation_loss(parts.features, parts.counterfactuals, 1).item()
    loss_pcl = Losses.pcl_loss(parts.causal_logits, parts.labels, 3, 2).item()
    assert Losses.loss_s1(2, parts, 1.0, 1.0).item() == pytest.approx(
        loss_ce + loss_nc + loss_pcl, abs=1e-12
    )
    assert Losses.loss_s1(2, parts, 0.5, 2.0).item() == pytest.approx(
        loss_ce + 0.5 * loss_nc + 2.0 * loss_pcl, abs=1e-12
    )

    # At t = 3 the correlation term uses the two earlier counterfactual features
    loss_nc_2 = Losses.negative_correlation_loss(parts.features, parts.counterfactuals, 2).item()
    assert Losses.loss_s1(3, parts, 1.0, 0.0).item() == pytest.approx(
        loss_ce + loss_nc_2, abs=1e-12
    )

    with pytest.raises(ValueError):
        Losses.loss_s1(0, parts, 1.0, 1.0)

    # t = 4 needs three counterfactual features
    with pytest.raises(ValueError):
        Losses.loss_s1(4, parts, 1.0, 1.0)


def test_loss_s2():
    rng = np.random.default_rng(22)
    parts = _parts(rng, batch=3, d=5, k=2, u=1, n_counterfactuals=2)

    loss_ce = Losses.causal_effect_loss(parts.probs, parts.labels).item()
    assert Losses.loss_s2(parts, 0.0, 2).item() == pytest.approx(loss_ce, abs=1e-12)

    # t = 1 uses exactly one correlation term
    loss_nc_1 = Losses.negative_correlation_loss(parts.features, parts.counterfactuals, 1).item()
    assert Losses.loss_s2(parts, 1.0, 1).item() == pytest.approx(loss_ce + loss_nc_1, abs=1e-12)

    loss_nc_2 = Losses.negative_correlation_loss(parts.features, parts.counterfactuals, 2).item()
    assert Losses.loss_s2(parts, 1.0, 2).item() == pytest.approx(loss_ce + loss_nc_2, abs=1e-12)

    with pytest.raises(ValueError):
        Losses.loss_s2(parts, 1.0, 0)


def test_losses_match_brute_force_evaluation():
    rng = np.random.default_rng(2024)

    for _ in range(100):
        batch = int(rng.integers(1, 6))
        k = int(rng.integers(2, 5))
        u = int(rng.integers(0, 7 - k))
        d = int(rng.integers(2, 9))
        count = int(rng.integers(1, 4))
        t = int(rng.integers(2, count + 2))
        lambda1, lambda2 = rng.uniform(0.0, 2.0, size=2)

        parts = _parts(rng, batch, d, k, u, count)
        logits = parts.causal_logits.numpy().tolist()
        probs = [_brute_softmax(row) for row in logits]
        labels = parts.labels.numpy().tolist()
        x = parts.features.numpy().tolist()
        counterfactuals = [c.numpy().tolist() for c in parts.counterfactuals]

        np.testing.assert_allclose(parts.probs.numpy(), probs, atol=1e-6)

        expected = {
            "me": _brute_max_entropy(probs),
            "ce": _brute_cross_entropy(probs, labels),
            "nc": _brute_negative_correlation(x, counterfactuals, count),
            "pcl": _brute_pcl(logits, labels),
        }
        assert Losses.max_entropy_loss(parts.probs).item() == pytest.approx(
            expected["me"], abs=1e-6
        )
        assert Losses.causal_effect_loss(parts.probs, parts.labels).item() == pytest.approx(
            expected["ce"], abs=1e-6
        )
        assert Losses.negative_correlation_loss(
            parts.features, parts.counterfactuals, count
        ).item() == pytest.approx(expected["nc"], abs=1e-6)
        assert Losses.pcl_loss(parts.causal_logits, parts.labels, k, u).item() == pytest.approx(
            expected["pcl"], abs=1e-6
        )

        expected_s1 = (
            expected["ce"]
            + lambda1 * _brute_negative_correlation(x, counterfactuals, t - 1)
            + lambda2 * expected["pcl"]
        )
        assert Losses.loss_s1(t, parts, lambda1, lambda2).item() == pytest.approx(
            expected_s1, abs=1e-6
        )
        assert Losses.loss_s1(1, parts, lambda1, lambda2).item() == pytest.approx(
            expected["me"], abs=1e-6
        )
        assert Losses.loss_s2(parts, lambda1, count).item() == pytest.approx(
            expected["ce"] + lambda1 * expected["nc"], abs=1e-6
        )


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(7)

    for _ in range(5):
        logits = torch.tensor(rng.normal(size=(3, 5)), requires_grad=True)
        features = torch.tensor(rng.normal(size=(3, 4)), requires_grad=True)
        counterfactual = torch.tensor(rng.normal(size=(3, 4)), requires_grad=True)
        labels = torch.from_numpy(rng.integers(0, 3, size=3))

        checks = [
            (lambda z: Losses.max_entropy_loss(Losses.softmax(z)), (logits,)),
            (lambda z: Losses.causal_effect_loss(Losses.softmax(z), labels), (logits,)),
            (lambda z: Losses.pcl_loss(z, labels, 3, 2), (logits,)),
            (
                lambda a, b: Losses.negative_correlation_loss(a, [b], 1),
                (features, counterfactual),
            ),
        ]
        for function, inputs in checks:
            assert torch.autograd.gradcheck(function, inputs, eps=1e-5, atol=1e-6, rtol=1e-4)


def test_composite_gradients_through_backbone():
    k, u, d = 2, 2, 4

    for point in range(20):
        torch.manual_seed(point)
        extractor = MLPBackbone(6, hidden_dims=(8, 8), feature_dim=d).double()
        head = ClassifierHead(d, k, u).double()
        pool = [Models.freeze(MLPBackbone(6, (8, 8), d).double(), i + 1) for i in range(2)]
        batch = torch.randn(5, 6, dtype=torch.float64)
        labels = torch.randint(0, k, (5,))

        names = [name for name, _ in extractor.named_parameters()]
        head_names = [name for name, _ in head.named_parameters()]
        values = tuple(
            p.detach().clone().requires_grad_(True)
            for p in list(extractor.parameters()) + list(head.parameters())
        )

        def _inputs(params, n_pool):
            x = functional_call(extractor, dict(zip(names, params[: len(names)])), (batch,))
            counterfactuals = [snapshot.features(batch) for snapshot in pool[:n_pool]]
            x_c = x
            for counterfactual in counterfactuals:
                x_c = x_c - counterfactual
            logits = functional_call(head, dict(zip(head_names, params[len(names):])), (x_c,))
            return LossInputs(
                probs=Losses.softmax(logits),
                labels=labels,
                features=x,
                counterfactuals=counterfactuals,
                causal_logits=logits,
                k=k,
                u=u,
            )

        def _s1_first(*params):
            return Losses.loss_s1(1, _inputs(params, 0), 1.0, 1.0)

        def _s1_later(*params):
            return Losses.loss_s1(2, _inputs(params, 1), 1.0, 1.0)

        def _s2(*params):
            return Losses.loss_s2(_inputs(params, 2), 1.0, 2)

        for function in [_s1_first, _s1_later, _s2]:
            assert torch.autograd.gradcheck(function, values, eps=1e-6, atol=1e-6, rtol=1e-4)
