"""Randomized gradient checks for every layer kind in the two networks."""

import numpy as np
import pytest

from vtlearn import gradcheck as gc


@pytest.mark.parametrize("kind", sorted(gc.BUILDERS))
def test_layer_kind_gradients(kind):
    rng = np.random.default_rng(hash(kind) % 2**31)
    g, feeds, loss, names = gc.BUILDERS[kind](rng)
    checked, worst = gc.check_graph(g, feeds, loss, names, rng, per_param=8)
    assert checked >= 8
    assert worst < gc.TOL


def test_mlp_max_relative_error():
    # random 3-layer MLP, all parameter entries probed
    rng = np.random.default_rng(123)
    g, feeds, loss, names = gc.build_mlp3(rng)
    checked, worst = gc.check_graph(g, feeds, loss, names, rng,
                                    per_param=10**9)
    assert checked == sum(g.params[n].value.size for n in names)
    assert worst < 1e-4


def test_layer_suite_hits_100_entries_per_kind():
    results = gc.run_layer_suite(seed=5, per_param=100)
    for kind, (entries, worst) in results.items():
        assert entries >= 100, kind
        assert worst < gc.TOL, kind


def test_check_graph_raises_past_tolerance():
    # central differences carry ~1e-10 truncation error, so an absurdly
    # tight tolerance must trip the failure path
    rng = np.random.default_rng(9)
    g, feeds, loss, names = gc.build_mlp3(rng)
    with pytest.raises(gc.GradientCheckError):
        gc.check_graph(g, feeds, loss, names, rng, per_param=10**9, tol=1e-14)


@pytest.mark.parametrize("kind", ["reconstruction", "classifier"])
def test_full_network_gradients(kind):
    checked, worst = gc.check_full_net(kind, seed=2, entries=24)
    assert checked == 24
    assert worst < gc.TOL
