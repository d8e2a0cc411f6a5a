"""Adam optimizer behavior oracles."""

import numpy as np
import pytest

from vtlearn.engine import Parameter
from vtlearn.optim import AdamState, adam_step


def test_zero_gradient_keeps_parameters():
    p = Parameter("w", np.array([1.5, -2.0]))
    st = AdamState()
    adam_step([p], st)
    assert np.array_equal(p.value, [1.5, -2.0])
    assert st.step == 1


def test_first_step_magnitude_is_alpha():
    # With one constant gradient, bias correction gives m_hat/sqrt(v_hat)
    # = sign(g), so the first update is alpha per entry (up to eps).
    p = Parameter("w", np.zeros(3))
    p.grad[...] = np.array([0.3, -7.0, 1e4])
    st = AdamState(alpha=1e-3)
    adam_step([p], st)
    assert np.all(np.abs(np.abs(p.value) - 1e-3) < 1e-6)
    assert np.all(np.sign(p.value) == [-1.0, 1.0, -1.0])


def test_quadratic_descent_monotone_after_warmup():
    p = Parameter("w", np.array([1.0]))
    st = AdamState(alpha=1e-3)
    history = []
    for _ in range(100):
        p.grad[...] = 2.0 * p.value
        adam_step([p], st)
        p.grad[...] = 0.0
        history.append(abs(float(p.value[0])))
    warmup = 5
    diffs = np.diff(history[warmup:])
    assert np.all(diffs < 0.0)
    assert history[-1] < history[0]


def test_non_trainable_parameters_skipped():
    p = Parameter("stat", np.ones(2), trainable=False)
    p.grad[...] = 5.0
    st = AdamState()
    adam_step([p], st)
    assert np.array_equal(p.value, [1.0, 1.0])


def test_moment_shape_guard():
    st = AdamState()
    st.slot("w", (2, 2))
    with pytest.raises(ValueError):
        st.slot("w", (3,))


def test_defaults_match_cited_values():
    st = AdamState()
    assert (st.alpha, st.beta1, st.beta2, st.eps) == (1e-3, 0.9, 0.999, 1e-8)
