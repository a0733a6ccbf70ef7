import struct
import json

import numpy as np
import pytest

from mfce import convgeom, model
from mfce.convgeom import ModelSpec
from mfce.errors import WindowTooShortError

from _util import jitter_biases


def test_build_is_deterministic(toy_spec):
    a, b = model.build(toy_spec, 11), model.build(toy_spec, 11)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()


def test_build_seed_changes_weights(toy_spec):
    a, b = model.build(toy_spec, 1), model.build(toy_spec, 2)
    assert any(not np.array_equal(pa.data, pb.data) for pa, pb in zip(a.parameters(), b.parameters()))


def test_toy_parameter_count(toy_spec):
    # toy_spec: S=5, D=6, width 3, hidden 7, three 3x3 convs from 3 input channels
    convs = (3 * 3 * 3 * 3 + 3) + 2 * (3 * 3 * 3 * 3 + 3)
    collapse = 7 * 3 * 6 + 7
    output = 5 * 7 + 5
    assert model.build(toy_spec).num_parameters() == convs + collapse + output


def test_forward_row_counts(toy_net, rng):
    assert model.forward(toy_net, rng.normal(size=(3, 7, 6))).num_rows == 1
    assert model.forward(toy_net, rng.normal(size=(3, 15, 6))).num_rows == 9
    with pytest.raises(WindowTooShortError):
        model.forward(toy_net, rng.normal(size=(3, 6, 6)))


def test_rows_are_normalized(toy_net, rng):
    lp = model.forward(toy_net, rng.normal(size=(3, 20, 6))).log_probs.data
    np.testing.assert_allclose(np.log(np.exp(lp).sum(axis=1)), 0.0, atol=1e-9)


ARCHS = {
    "toy": convgeom.toy_spec(num_targets=5, mel_bins=6, width=3, hidden=7),
    "deep_small": convgeom.deep_spec(num_targets=5, mel_bins=6, widths=(2, 2, 3, 3), bottleneck=4,
                                      freq_pool_after=(1,)),
}


@pytest.mark.parametrize("name", list(ARCHS))
def test_dense_equals_sliding(name, rng):
    net = jitter_biases(model.build(ARCHS[name], 5))
    l_m = net.l_m
    x = rng.normal(size=(3, l_m + 8, 6))
    dense = model.forward(net, x).log_probs.data
    sliding = np.stack([model.forward(net, x[:, j:j + l_m]).log_probs.data[0] for j in range(9)])
    assert np.abs(dense - sliding).max() < 1e-9


def test_shift_equivariance(toy_net, rng):
    x = rng.normal(size=(3, 30, 6))
    a = model.forward(toy_net, x[:, :-1]).log_probs.data
    b = model.forward(toy_net, x[:, 1:]).log_probs.data
    assert np.abs(a[1:] - b[:-1]).max() < 1e-9


def test_forward_utterance(toy_net, rng):
    assert model.forward_utterance(toy_net, rng.normal(size=(3, 1, 6))).num_rows == 1
    x = rng.normal(size=(3, 40, 6))
    full = model.forward_utterance(toy_net, x).log_probs.data
    assert full.shape[0] == 40
    left, right = convgeom.utterance_padding(toy_net.l_m, 40)
    interior = model.forward(toy_net, x).log_probs.data  # 34 rows, frames 3..36
    assert np.abs(full[left:40 - right] - interior).max() < 1e-9
    with pytest.raises(ValueError):
        model.forward_utterance(toy_net, np.zeros((3, 0, 6)))


def test_untrained_posteriors_near_uniform(rng):
    spec = convgeom.deep_spec(num_targets=48, mel_bins=16, widths=(4, 4, 8, 8), bottleneck=16,
                              freq_pool_after=(0, 1))
    lp = model.forward(model.build(spec, 0), rng.normal(size=(3, 80, 16))).log_probs.data
    assert -lp.mean() == pytest.approx(np.log(48), rel=0.1)


def test_checkpoint_round_trip(tmp_path, toy_net):
    path = tmp_path / "ckpt_epoch0"
    model.save_checkpoint(toy_net, path)
    back = model.load_checkpoint(path)
    assert back.spec == toy_net.spec
    for (na, pa), (nb, pb) in zip(toy_net.named_parameters(), back.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()


def test_checkpoint_layout(tmp_path, toy_net):
    path = tmp_path / "ck"
    model.save_checkpoint(toy_net, path)
    raw = path.read_bytes()
    assert raw[:8] == b"MFCECKPT"
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    assert ModelSpec.from_dict(header["spec"]) == toy_net.spec
    meta = header["params"]["layer2.weight"]
    start = 16 + hlen + meta["offset"]
    n = int(np.prod(meta["shape"]))
    blob = np.frombuffer(raw[start:start + 8 * n], dtype="<f8").reshape(meta["shape"])
    np.testing.assert_array_equal(blob, toy_net.params["layer2.weight"].data)
    assert len(raw) == 16 + hlen + 8 * toy_net.num_parameters()
