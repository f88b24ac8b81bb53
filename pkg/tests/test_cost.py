import numpy as np
import pytest

from prunebench.nn import (ArgMaxHead, BatchNormParams, ConvFilter, ConvLayer, ModelGraph, build_enet_mini,
                           conv_cost, count_cost, fold_batchnorm)


def test_single_1x1_conv():
    f = ConvFilter(np.ones((1, 1, 1, 1)), np.zeros(1))
    flops, ho, wo = conv_cost(f, 1, 1, 1)
    assert (flops, ho, wo) == (2, 1, 1)
    assert f.param_count == 2 and 4 * f.param_count == 8


def test_tiny_graph():
    g = ModelGraph(2, [ConvLayer("c", ConvFilter(np.ones((2, 1, 1, 1)), None), relu=False), ArgMaxHead()],
                   in_channels=1)
    rep = count_cost(g, 1, 1, 1, include_head=False)
    assert (rep.flops, rep.params, rep.model_size_bytes) == (4, 4, 16)
    assert count_cost(g, 1, 1, 1, include_head=True).flops == 5
    assert count_cost(g, 1, 1, 2, include_head=False).flops == 6


def test_conv_formula():
    f = ConvFilter(np.ones((5, 3, 3, 3)), None, stride=2, padding=1)
    flops, ho, wo = conv_cost(f, 10, 8, 2)
    assert (ho, wo) == (5, 4)
    assert flops == 2 * 27 * 5 * 20 + 5 * 20


def test_graph_totals_consistent():
    g = build_enet_mini(20, 1)
    rep = count_cost(g, 400, 640)
    assert rep.flops == sum(l.flops for l in rep.layers)
    assert rep.params == g.param_count()
    assert rep.model_size_bytes == 4 * rep.params
    bare = count_cost(g, 400, 640, include_head=False, elementwise=False)
    assert count_cost(g, 400, 640, 2, include_head=False, elementwise=False).flops > 1.9 * bare.flops
    assert rep.to_csv().splitlines()[0] == "layer,flops,params,bytes"
    assert "total" in rep.to_table()


def test_invariant_under_bn_folding(rng):
    g = build_enet_mini(6, 0.5)
    before = count_cost(g, 64, 96)
    layer = g.layer("bottleneck2.1")
    n = layer.conv3.n_out
    layer.conv3 = fold_batchnorm(layer.conv3, BatchNormParams(rng.normal(size=n), rng.uniform(0.5, 2, n),
                                                              rng.normal(size=n), rng.normal(size=n)))
    after = count_cost(g, 64, 96)
    assert (after.flops, after.params) == (before.flops, before.params)


def test_bad_input_dims():
    g = build_enet_mini(4, 0.25)
    with pytest.raises(ValueError):
        count_cost(g, 0, 8)
    with pytest.raises(ValueError):
        count_cost(g, 4, 4)  # too small for three stride-2 stages plus dilated convs
