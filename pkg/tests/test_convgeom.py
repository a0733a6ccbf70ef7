import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfce import convgeom, model
from mfce.convgeom import LayerSpec, ModelSpec
from mfce.errors import ConfigError, WindowTooShortError


def brute_force_lm(net):
    """Smallest input length for which the network emits exactly one frame."""
    spec = net.spec
    for t in range(1, 200):
        x = np.zeros((spec.input_channels, t, spec.mel_bins))
        try:
            rows = model.forward(net, x).num_rows
        except WindowTooShortError:
            continue
        if rows == 1:
            return t
    raise AssertionError("no length produced one output")


def test_toy_lm_is_seven():
    spec = convgeom.toy_spec()
    assert convgeom.intrinsic_length(spec) == 7
    assert brute_force_lm(model.build(spec)) == 7


def test_single_pointwise_lm_is_one():
    spec = ModelSpec(3, 1, 4, (LayerSpec.conv(4, 1, 1),))
    assert convgeom.intrinsic_length(spec) == 1


def test_deep_lm_is_53():
    spec = convgeom.deep_spec(num_targets=6, mel_bins=4, widths=(2, 2, 2, 2), bottleneck=4)
    assert convgeom.intrinsic_length(spec) == 53
    assert brute_force_lm(model.build(spec)) == 53
    assert [l.dilation_t for l in spec.layers if l.kind == "conv"][1:] == list(convgeom.DEEP_DILATIONS)


def test_output_count():
    toy = convgeom.toy_spec()
    assert convgeom.output_count(toy, 15) == 9
    assert convgeom.output_count(toy, 7) == 1
    assert convgeom.output_count(53, 61) == 9
    with pytest.raises(WindowTooShortError, match="window shorter than receptive field"):
        convgeom.output_count(toy, 6)


def test_output_count_matches_forward_shape():
    spec = convgeom.deep_spec(num_targets=6, mel_bins=4, widths=(2, 2, 2, 2), bottleneck=4)
    net = model.build(spec)
    out = model.forward(net, np.zeros((3, 61, 4)))
    assert out.num_rows == convgeom.output_count(spec, 61) == 9


@pytest.mark.parametrize("l_m,expected", [(7, (3, 3)), (53, (26, 26)), (1, (0, 0)), (6, (2, 3))])
def test_utterance_padding(l_m, expected):
    assert convgeom.utterance_padding(l_m, 10) == expected


def test_layer_time_reductions():
    spec = convgeom.deep_spec()
    red = [r for r in convgeom.time_reductions(spec) if r]
    assert red == [4] + [2] * 6 + [4] * 3 + [8] * 3
    assert max(convgeom.cumulative_dilations(spec)) == 4


def test_spec_validation():
    with pytest.raises(ConfigError):
        ModelSpec(3, 8, 4, (LayerSpec.fc(4),))  # no conv
    with pytest.raises(ConfigError):
        ModelSpec(3, 8, 4, (LayerSpec.conv(5, 3, 3), LayerSpec.fc(3, collapse_freq=True)))
    with pytest.raises(ConfigError):
        ModelSpec(3, 8, 4, (LayerSpec.conv(5, 3, 3), LayerSpec.fc(4)))  # frequency not collapsed
    with pytest.raises(ConfigError):
        LayerSpec("relu", kernel_t=3)


def test_spec_round_trip():
    spec = convgeom.deep_spec(freq_pool_after=(0, 2))
    assert ModelSpec.from_dict(spec.to_dict()) == spec


layer_st = st.one_of(
    st.builds(lambda k, d, c: LayerSpec.conv(c, k, 3, d), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3)),
    st.just(LayerSpec.relu()),
)


def _random_spec(layers, insert_at=None, extra=None):
    layers = list(layers)
    if extra is not None:
        layers.insert(insert_at % (len(layers) + 1), extra)
    layers += [LayerSpec.fc(3, collapse_freq=True)]
    return ModelSpec(2, 4, 3, tuple(layers))


@settings(max_examples=25, deadline=None)
@given(layers=st.lists(layer_st, min_size=1, max_size=5).filter(lambda ls: any(l.kind == "conv" for l in ls)),
       pos=st.integers(0, 10), extra_frames=st.integers(0, 32))
def test_geometry_properties(layers, pos, extra_frames):
    spec = _random_spec(layers)
    l_m = convgeom.intrinsic_length(spec)
    # inserting relu or a 1x1 pointwise layer never changes l_m
    assert convgeom.intrinsic_length(_random_spec(layers, pos, LayerSpec.relu())) == l_m
    chans = [l.out_channels for l in layers if l.kind == "conv"][-1]
    assert convgeom.intrinsic_length(_random_spec(layers, len(layers), LayerSpec.fc(chans))) == l_m
    net = model.build(spec, 0)
    out = model.forward(net, np.zeros((2, l_m + extra_frames, 4)))
    assert out.num_rows == convgeom.output_count(spec, l_m + extra_frames)


@settings(max_examples=15, deadline=None)
@given(l_u=st.integers(1, 100))
def test_padding_yields_one_output_per_frame(l_u):
    net = model.build(convgeom.deep_spec(num_targets=4, mel_bins=2, widths=(1, 1, 1, 1), bottleneck=2))
    out = model.forward_utterance(net, np.zeros((3, l_u, 2)))
    assert out.num_rows == l_u
