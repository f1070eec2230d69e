from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from csolab.nn.receptive import LayerSpec, format_table, receptive_field
from oracles import receptive_field_hand


@pytest.mark.parametrize("stack,expected", [
    ([("conv", 3, 1)], 3),
    ([("conv", 3, 1), ("conv", 3, 1)], 5),
    ([("conv", 3, 1), ("pool", 2, 2), ("conv", 3, 1)], 8),
])
def test_hand_examples(stack, expected):
    out = receptive_field([LayerSpec(kind, k, s) for kind, k, s in stack])
    assert out[-1][0] == expected == receptive_field_hand(stack)[-1]


def test_jump_tracking():
    out = receptive_field([LayerSpec("conv", 3), LayerSpec("pool", 2, 2), LayerSpec("transposed-conv", 2, 2)])
    assert [j for _, j in out] == [1, 2, 1]
    assert out[-1][0] == 4
    assert isinstance(out[-1][1], Fraction)


layers = st.lists(st.tuples(st.sampled_from(["conv", "pool", "transposed-conv"]), st.integers(1, 5),
                            st.integers(1, 3)), min_size=1, max_size=12)


@given(layers)
def test_matches_hand_recurrence_and_is_monotone(stack):
    out = [rf for rf, _ in receptive_field([LayerSpec(kind, k, s) for kind, k, s in stack])]
    hand = receptive_field_hand(stack)
    assert out == [int(v) for v in hand]
    assert all(a <= b for a, b in zip(out, out[1:]))


@pytest.mark.parametrize("bad", [dict(kind="conv", kernel=0), dict(kind="conv", kernel=3, stride=0),
                                 dict(kind="conv", kernel=3, padding=-1), dict(kind="dense", kernel=1)])
def test_layer_spec_validation(bad):
    with pytest.raises(ValueError):
        LayerSpec(**bad)


def test_format_table_lists_every_layer():
    specs = [LayerSpec("conv", 3, 1, 1, "a"), LayerSpec("pool", 2, 2, 0, "b")]
    text = format_table(specs, receptive_field(specs))
    lines = text.splitlines()
    assert len(lines) == 3 and lines[1].split()[0] == "a" and lines[2].split()[-2:] == ["4", "2"]
