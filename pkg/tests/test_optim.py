"""AdamW update rule and the one-cycle schedule."""

import numpy as np

from lmae.optim import AdamW, DivergenceError, onecycle_lr
from lmae.tensor import Parameter


def test_decoupled_decay_with_zero_grad():
    p = Parameter("w", np.array([2.0]))
    opt = AdamW([p], lr=1.0, weight_decay=0.01)
    p.tensor.grad = np.zeros(1)
    opt.step()
    # decay only: 2.0 * (1 - 1.0 * 0.01) = 1.98, moments stay zero
    assert np.allclose(p.value, [1.98])
    p.tensor.grad = np.zeros(1)
    opt.step()
    assert np.allclose(p.value, [1.98 * 0.99])


def test_first_step_moves_by_lr_times_sign():
    # bias correction makes m_hat/sqrt(v_hat) = sign(g) on step one
    p = Parameter("w", np.array([1.0, -1.0]))
    opt = AdamW([p], lr=0.1)
    p.tensor.grad = np.array([0.5, -2.0])
    opt.step()
    assert np.allclose(p.value, [1.0 - 0.1, -1.0 + 0.1], atol=1e-7)


def test_adamw_matches_manual_reference():
    rng = np.random.default_rng(0)
    value = rng.normal(size=4)
    p = Parameter("w", value.copy(), dtype=np.float64)
    lr, b1, b2, eps, wd = 0.05, 0.9, 0.999, 1e-8, 0.1
    opt = AdamW([p], lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd)
    m = np.zeros(4)
    v = np.zeros(4)
    x = value.copy()
    for t in range(1, 6):
        g = rng.normal(size=4)
        p.tensor.grad = g.copy()
        opt.step()
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x * (1 - lr * wd)
        x = x - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        assert np.allclose(p.value, x, atol=1e-12)
        p.tensor.zero_grad()


def test_missing_grad_treated_as_zero():
    p = Parameter("w", np.array([1.0]))
    opt = AdamW([p], lr=0.5)
    opt.step()  # no grad assigned at all
    assert np.allclose(p.value, [1.0])


def test_nonfinite_grad_raises():
    p = Parameter("w", np.array([1.0]))
    opt = AdamW([p], lr=0.1)
    p.tensor.grad = np.array([np.nan])
    try:
        opt.step()
        assert False, "expected DivergenceError"
    except DivergenceError:
        pass


def test_duplicate_names_rejected():
    a = Parameter("w", np.zeros(1))
    b = Parameter("w", np.zeros(1))
    try:
        AdamW([a, b])
        assert False, "expected ValueError"
    except ValueError:
        pass


def test_state_dict_roundtrip_resumes_identically():
    rng = np.random.default_rng(1)
    p1 = Parameter("w", np.ones(3), dtype=np.float64)
    p2 = Parameter("w", np.ones(3), dtype=np.float64)
    opt1 = AdamW([p1], lr=0.1, weight_decay=0.01)
    opt2 = AdamW([p2], lr=0.1, weight_decay=0.01)
    grads = [rng.normal(size=3) for _ in range(6)]
    for g in grads[:3]:
        p1.tensor.grad = g.copy()
        opt1.step()
        p2.tensor.grad = g.copy()
        opt2.step()
    state = opt1.state_dict()
    fresh = AdamW([p2], lr=0.1, weight_decay=0.01)
    fresh.load_state_dict(state)
    assert fresh.step_count == 3
    for g in grads[3:]:
        p1.tensor.grad = g.copy()
        opt1.step()
        p2.tensor.grad = g.copy()
        fresh.step()
    assert np.array_equal(p1.value, p2.value)


def test_onecycle_endpoints():
    max_lr = 0.4
    assert np.isclose(onecycle_lr(0, 100, max_lr), max_lr / 25.0)
    assert np.isclose(onecycle_lr(30, 100, max_lr), max_lr)  # peak at pct_start
    assert np.isclose(onecycle_lr(100, 100, max_lr), max_lr / 1e4)


def test_onecycle_monotone_up_then_down():
    max_lr = 1.0
    values = [onecycle_lr(s, 200, max_lr) for s in range(201)]
    peak = int(0.3 * 200)
    for k in range(peak):
        assert values[k] <= values[k + 1] + 1e-12
    for k in range(peak, 200):
        assert values[k] >= values[k + 1] - 1e-12
    assert max(values) <= max_lr + 1e-12


def test_onecycle_bad_args():
    try:
        onecycle_lr(5, 0, 0.1)
        assert False, "expected ValueError"
    except ValueError:
        pass
    try:
        onecycle_lr(11, 10, 0.1)
        assert False, "expected ValueError"
    except ValueError:
        pass
