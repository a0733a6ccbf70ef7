import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfce import model
from mfce.errors import ShapeError
from mfce.loss import batch_loss, ce_loss, mfce_loss
from mfce.model import PosteriorSequence
from mfce.tensor import Tensor, log_softmax


def post(rows):
    return PosteriorSequence(Tensor(np.atleast_2d(np.asarray(rows, dtype=float))))


def test_ce_certain():
    assert ce_loss(post([[0.0, -np.inf, -np.inf]]), 0).value == 0.0


def test_ce_uniform():
    assert ce_loss(post([np.log([0.25] * 4)]), 2).value == pytest.approx(1.386294, abs=1e-6)


def test_ce_hand_value():
    assert ce_loss(post([np.log([0.7, 0.2, 0.1])]), 1).value == pytest.approx(1.609438, abs=1e-6)


def test_ce_errors():
    with pytest.raises(ShapeError):
        ce_loss(post(np.log(np.full((2, 3), 1 / 3))), 0)
    with pytest.raises(ValueError):
        ce_loss(post([np.log([0.5, 0.5])]), 2)


def test_mfce_two_frames():
    rows = [np.log([0.25] * 4), [0.0, -np.inf, -np.inf, -np.inf]]
    rep = mfce_loss(post(rows), [3, 0])
    assert rep.value == pytest.approx(0.693147, abs=1e-6)
    assert rep.label_count == 2
    assert rep.value == pytest.approx(np.mean(rep.per_frame), abs=1e-12)


def test_mfce_uniform_any_labels(rng):
    rows = np.log(np.full((9, 4), 0.25))
    assert mfce_loss(post(rows), rng.integers(0, 4, 9)).value == pytest.approx(np.log(4), abs=1e-12)


def test_mfce_length_mismatch():
    with pytest.raises(ShapeError):
        mfce_loss(post(np.log(np.full((3, 4), 0.25))), [0, 1])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), s=st.integers(2, 9))
def test_mfce_single_frame_is_ce(seed, s):
    r = np.random.default_rng(seed)
    lp = log_softmax(Tensor(r.normal(size=(1, s)), requires_grad=True))
    label = int(r.integers(s))
    a, b = mfce_loss(lp, [label]), ce_loss(lp, label)
    assert a.total.data.tobytes() == b.total.data.tobytes()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), rows=st.integers(1, 12))
def test_mfce_permutation_and_bounds(seed, rows):
    r = np.random.default_rng(seed)
    lp = log_softmax(Tensor(r.normal(scale=3, size=(rows, 5)))).data
    labels = r.integers(0, 5, rows)
    perm = r.permutation(rows)
    a = mfce_loss(post(lp), labels).value
    b = mfce_loss(post(lp[perm]), labels[perm]).value
    assert a == pytest.approx(b, abs=1e-12)
    assert a >= 0


def test_mfce_gradient_is_mean_of_sliding_ce(toy_net, rng):
    """Dense multi-frame gradient equals the averaged single-frame gradients."""
    delta = 4
    l_m = toy_net.l_m
    x = rng.normal(size=(3, l_m + delta, 6))
    labels = rng.integers(0, 5, delta + 1)
    toy_net.zero_grad()
    mfce_loss(model.forward(toy_net, x), labels).total.backward()
    dense = [p.grad.copy() for p in toy_net.parameters()]
    toy_net.zero_grad()
    for j in range(delta + 1):
        ce_loss(model.forward(toy_net, x[:, j:j + l_m]), labels[j]).total.backward()
    for g_dense, p in zip(dense, toy_net.parameters()):
        np.testing.assert_allclose(g_dense, p.grad / (delta + 1), rtol=0, atol=1e-8)


def test_batch_loss_is_mean_of_windows(rng):
    lp = log_softmax(Tensor(rng.normal(size=(4, 3, 5))))
    labels = rng.integers(0, 5, (4, 3))
    total, reports = batch_loss(lp, labels)
    loop = np.mean([mfce_loss(post(lp.data[b]), labels[b]).value for b in range(4)])
    assert total.item() == pytest.approx(loop, abs=1e-12)
    assert len(reports) == 4
