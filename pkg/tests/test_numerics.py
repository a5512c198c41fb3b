"""Kernel-level tests: op semantics, shape errors, and gradient checks
against the central finite-difference oracle."""

import numpy as np
import pytest

from iarn import numerics as nm
from iarn.numerics import ContractError, GradientTape, ShapeError, Tensor


def scalar(v):
    return Tensor(np.asarray(float(v)))


# ---------------------------------------------------------------------------
# matvec
# ---------------------------------------------------------------------------

def test_matvec_identity():
    out = nm.matvec(Tensor(np.eye(3)), Tensor([1.0, 2.0, 3.0]))
    assert np.array_equal(out.data, [1.0, 2.0, 3.0])


def test_matvec_zero_matrix():
    out = nm.matvec(Tensor(np.zeros((2, 2))), Tensor([5.0, 7.0]))
    assert np.array_equal(out.data, [0.0, 0.0])


def test_matvec_hand_case():
    out = nm.matvec(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([1.0, 1.0]))
    assert np.array_equal(out.data, [3.0, 7.0])


def test_matvec_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        nm.matvec(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))
    assert "(2, 3)" in str(err.value) and "(4,)" in str(err.value)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def test_relu_definition():
    assert nm.activate(Tensor([-1.0]), "relu").data[0] == 0.0
    assert nm.activate(Tensor([2.5]), "relu").data[0] == 2.5


def test_prelu_definition():
    out = nm.activate(Tensor([-2.0]), "prelu", alpha=0.25)
    assert out.data[0] == -0.5


def test_sigmoid_at_zero():
    assert nm.activate(Tensor([0.0]), "sigmoid").data[0] == 0.5


def test_activation_ranges_and_shape():
    rng = np.random.default_rng(5)
    x = Tensor(rng.uniform(-10, 10, size=17))
    s = nm.activate(x, "sigmoid")
    t = nm.activate(x, "tanh")
    assert s.data.shape == x.data.shape == t.data.shape
    assert np.all((s.data > 0) & (s.data < 1))
    assert np.all((t.data > -1) & (t.data < 1))


def test_activate_rejects_unknown_kind():
    with pytest.raises(ValueError):
        nm.activate(Tensor([1.0]), "softplus")


def test_prelu_requires_finite_slope():
    with pytest.raises(ContractError):
        nm.activate(Tensor([1.0]), "prelu", alpha=float("nan"))


# ---------------------------------------------------------------------------
# tape backward
# ---------------------------------------------------------------------------

def test_backward_square():
    tape = GradientTape()
    x = scalar(3.0)
    tape.watch(x)
    loss = nm.square(x, tape)
    grads = tape.backward(loss)
    assert grads[x] == pytest.approx(6.0)


def test_backward_constant_loss_gives_zero_gradients():
    tape = GradientTape()
    x = Tensor([1.0, -2.0])
    tape.watch(x)
    loss = scalar(4.2)  # never touches x
    grads = tape.backward(loss)
    assert np.array_equal(grads[x], [0.0, 0.0])


def test_backward_requires_scalar_loss():
    tape = GradientTape()
    x = Tensor([1.0, 2.0])
    tape.watch(x)
    y = nm.relu(x, tape)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_backward_three_parameter_composite_matches_fd():
    # smooth composite so the oracle is accurate to ~1e-8
    rng = np.random.default_rng(11)
    a = Tensor(rng.uniform(-1, 1, size=(3, 3)))
    b = Tensor(rng.uniform(-1, 1, size=3))
    c = Tensor(rng.uniform(0.5, 1.5, size=3))

    def build(tape=None):
        left = nm.tanh(nm.add(nm.matvec(a, c, tape), b, tape), tape)
        right = nm.sigmoid(nm.matvec(a, b, tape), tape)
        return nm.dot(left, right, tape)

    tape = GradientTape()
    for t in (a, b, c):
        tape.watch(t)
    tape.backward(build(tape))
    fds = nm.finite_difference(lambda: float(build().data), [a, b, c], h=1e-4)
    for t, fd in zip((a, b, c), fds):
        ok = np.abs(fd) > 1e-2
        assert ok.any()
        assert np.max(np.abs(t.grad[ok] - fd[ok]) / np.abs(fd[ok])) < 1e-6


def test_backward_is_idempotent():
    rng = np.random.default_rng(3)
    a = Tensor(rng.uniform(-1, 1, size=(4, 4)))
    x = Tensor(rng.uniform(-1, 1, size=4))
    tape = GradientTape()
    tape.watch(a)
    tape.watch(x)
    y = nm.relu(nm.matvec(a, x, tape), tape)
    loss = nm.dot(y, y, tape)
    first = {id(t): g.copy() for t, g in tape.backward(loss).items()}
    second = tape.backward(loss)
    for t, g in second.items():
        assert np.array_equal(first[id(t)], g)


def test_kernels_are_deterministic():
    rng = np.random.default_rng(9)
    a = Tensor(rng.uniform(-1, 1, size=(8, 8)))
    x = Tensor(rng.uniform(-1, 1, size=8))
    one = nm.sigmoid(nm.matvec(a, x), ).data
    two = nm.sigmoid(nm.matvec(a, x), ).data
    assert np.array_equal(one, two)


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def test_fd_quadratic_is_nearly_exact():
    x = scalar(3.0)
    (g,) = nm.finite_difference(lambda: float(x.data) ** 2, [x], h=1e-5)
    assert abs(float(g) - 6.0) < 1e-8


def test_fd_constant_function():
    x = scalar(1.0)
    (g,) = nm.finite_difference(lambda: 7.0, [x], h=1e-5)
    assert float(g) == 0.0

def test_fd_sigmoid_slope_at_zero():
    x = scalar(0.0)
    (g,) = nm.finite_difference(
        lambda: float(1.0 / (1.0 + np.exp(-x.data))), [x], h=1e-5)
    assert abs(float(g) - 0.25) < 1e-8


def test_fd_rejects_nonpositive_step():
    with pytest.raises(ContractError):
        nm.finite_difference(lambda: 0.0, [scalar(0.0)], h=0.0)


def test_fd_dict_structure():
    x = scalar(2.0)
    out = nm.finite_difference(lambda: float(x.data) ** 2, {"x": x})
    assert set(out) == {"x"}


# ---------------------------------------------------------------------------
# gradient check for every differentiable kernel
# ---------------------------------------------------------------------------

def _check(build, params, rtol=1e-4):
    """build(tape) -> scalar loss reading live params; checks all grads."""
    tape = GradientTape()
    for t in params:
        tape.watch(t)
    tape.backward(build(tape))
    fds = nm.finite_difference(lambda: float(build(None).data), params, h=1e-5)
    for t, fd in zip(params, fds):
        assert nm.max_relative_error(t.grad, fd) < rtol


def _rand(rng, *shape):
    return Tensor(rng.uniform(-1, 1, size=shape))


def _reduce(vec, w, tape):
    return nm.dot(vec, w, tape)


def test_grad_matvec_add_mul():
    rng = np.random.default_rng(21)
    a, x, b = _rand(rng, 5, 4), _rand(rng, 4), _rand(rng, 5)
    w = Tensor(rng.uniform(-1, 1, size=5))

    def build(tape):
        y = nm.add(nm.matvec(a, x, tape), b, tape)
        return _reduce(nm.mul(y, b, tape), w, tape)
    _check(build, [a, x, b])


def test_grad_scale_mask_concat_slice():
    rng = np.random.default_rng(22)
    x, y = _rand(rng, 4), _rand(rng, 3)
    mask = rng.uniform(0.5, 2.0, size=4)
    w = Tensor(rng.uniform(-1, 1, size=5))

    def build(tape):
        c = nm.concat([nm.mul_mask(x, mask, tape), y, ], tape)
        s = nm.slice_vec(c, 1, 6, tape)
        return _reduce(nm.scale(s, 1.7, tape), w, tape)
    _check(build, [x, y])


def test_grad_activations():
    rng = np.random.default_rng(23)
    x = _rand(rng, 6)
    alpha = scalar(0.3)
    w = Tensor(rng.uniform(-1, 1, size=6))

    def build(tape):
        y = nm.sigmoid(x, tape)
        y = nm.tanh(y, tape)
        y = nm.prelu(y, alpha, tape)
        y = nm.relu(y, tape)
        return _reduce(nm.square(y, tape), w, tape)
    _check(build, [x, alpha])


def test_grad_dot_and_gather():
    rng = np.random.default_rng(24)
    m = _rand(rng, 5, 4)
    y = _rand(rng, 4)

    def build(tape):
        row = nm.gather_row(m, 2, tape)
        return nm.dot(row, y, tape)
    _check(build, [m, y])


def test_grad_recurrent_cell():
    rng = np.random.default_rng(25)
    w, prev, h, x, b = (_rand(rng, 5, 5), _rand(rng, 5), _rand(rng, 5, 3),
                        _rand(rng, 3), _rand(rng, 5))
    out_w = Tensor(rng.uniform(-1, 1, size=5))

    def build(tape):
        return _reduce(nm.recurrent_cell(w, prev, h, x, b, tape), out_w, tape)
    _check(build, [w, prev, h, x, b])


def test_grad_attention_cell():
    rng = np.random.default_rng(26)
    m, l, b = _rand(rng, 4), _rand(rng, 4, 10), _rand(rng, 4)
    parts = [_rand(rng, 3), _rand(rng, 3), _rand(rng, 2), _rand(rng, 2)]

    def build(tape):
        return nm.attention_cell(m, l, b, parts, tape)
    _check(build, [m, l, b] + parts)


def test_grad_gate_blend():
    rng = np.random.default_rng(27)
    a, prev, cand = scalar(0.37), _rand(rng, 5), _rand(rng, 5)
    w = Tensor(rng.uniform(-1, 1, size=5))

    def build(tape):
        return _reduce(nm.gate_blend(a, prev, cand, tape), w, tape)
    _check(build, [a, prev, cand])


def test_grad_lstm_cell():
    rng = np.random.default_rng(28)
    n, d = 4, 3
    wx, wh, b = _rand(rng, 4 * n, d), _rand(rng, 4 * n, n), _rand(rng, 4 * n)
    x, h_prev, c_prev = _rand(rng, d), _rand(rng, n), _rand(rng, n)
    w = Tensor(rng.uniform(-1, 1, size=2 * n))

    def build(tape):
        return _reduce(nm.lstm_cell(wx, wh, b, x, h_prev, c_prev, tape), w, tape)
    _check(build, [wx, wh, b, x, h_prev, c_prev])


def test_grad_mean_squared_error():
    rng = np.random.default_rng(29)
    preds = [scalar(v) for v in rng.uniform(-1, 1, size=4)]
    targets = rng.uniform(-1, 1, size=4)

    def build(tape):
        return nm.mean_squared_error(preds, targets, tape)
    _check(build, preds)


# ---------------------------------------------------------------------------
# fused chains: gradient checks plus equivalence with the per-step cells
# ---------------------------------------------------------------------------

def test_grad_gather_rows_with_duplicates():
    rng = np.random.default_rng(40)
    m = _rand(rng, 5, 3)
    w = Tensor(rng.uniform(-1, 1, size=3))

    def build(tape):
        rows = nm.gather_rows(m, [0, 2, 2, 4], tape)
        s = None
        for k in range(4):
            row = nm.gather_row(rows, k, tape)
            s = row if s is None else nm.add(s, row, tape)
        return nm.dot(s, w, tape)
    _check(build, [m])


def test_grad_rows_matvec():
    rng = np.random.default_rng(41)
    m, x = _rand(rng, 3, 3), _rand(rng, 4, 3)
    w = Tensor(rng.uniform(-1, 1, size=3))

    def build(tape):
        y = nm.rows_matvec(m, x, tape)
        return nm.dot(nm.gather_row(y, 1, tape), w, tape)
    _check(build, [m, x])


def _chain_loss(y, w, tape):
    # reduce a (T, h) matrix to a scalar through a fixed random row mix
    s = None
    for t in range(y.data.shape[0]):
        row = nm.gather_row(y, t, tape)
        s = row if s is None else nm.add(s, row, tape)
    return nm.dot(s, w, tape)


def test_relu_chain_matches_cell_composition_and_gradients():
    rng = np.random.default_rng(42)
    w_in, h_rec, b = _rand(rng, 4, 3), _rand(rng, 4, 4), _rand(rng, 4)
    x = _rand(rng, 5, 3)
    w = Tensor(rng.uniform(-1, 1, size=4))

    for reverse in (False, True):
        out = nm.relu_chain(w_in, h_rec, b, x, reverse=reverse)
        state = Tensor(np.zeros(4))
        order = range(4, -1, -1) if reverse else range(5)
        for t in order:
            xt = Tensor(x.data[t])
            state = nm.recurrent_cell(h_rec, state, w_in, xt, b)
            assert np.array_equal(out.data[t], state.data)

        def build(tape, reverse=reverse):
            y = nm.relu_chain(w_in, h_rec, b, x, reverse=reverse, tape=tape)
            return _chain_loss(y, w, tape)
        _check(build, [w_in, h_rec, b, x])


def test_attention_block_matches_cell_and_gradients():
    rng = np.random.default_rng(43)
    m, l, b = _rand(rng, 3), _rand(rng, 3, 8), _rand(rng, 3)
    own_f, own_b = _rand(rng, 4, 2), _rand(rng, 4, 2)
    cf, cb = _rand(rng, 2), _rand(rng, 2)

    block = nm.attention_block(m, l, b, own_f, own_b, cf, cb)
    for t in range(4):
        cell = nm.attention_cell(m, l, b, (Tensor(own_f.data[t]),
                                           Tensor(own_b.data[t]), cf, cb))
        assert np.allclose(block.data[t], float(cell.data))

    w = Tensor(rng.uniform(-1, 1, size=4))

    def build(tape):
        a = nm.attention_block(m, l, b, own_f, own_b, cf, cb, tape)
        return nm.dot(a, w, tape)
    _check(build, [m, l, b, own_f, own_b, cf, cb])


def test_gated_chain_matches_cell_composition_and_gradients():
    rng = np.random.default_rng(44)
    w, h_rec, b = _rand(rng, 4, 4), _rand(rng, 4, 3), _rand(rng, 4)
    x = _rand(rng, 5, 3)
    scores = Tensor(rng.uniform(0.1, 0.9, size=5))

    out = nm.gated_chain(w, h_rec, b, x, scores)
    state = Tensor(np.zeros(4))
    for t in range(5):
        cand = nm.recurrent_cell(w, state, h_rec, Tensor(x.data[t]), b)
        state = nm.gate_blend(Tensor(np.asarray(scores.data[t])), state, cand)
    assert np.allclose(out.data, state.data)

    mix = Tensor(rng.uniform(-1, 1, size=4))

    def build(tape):
        y = nm.gated_chain(w, h_rec, b, x, scores, tape=tape)
        return nm.dot(y, mix, tape)
    _check(build, [w, h_rec, b, x, scores])


def test_gated_chain_dropout_mask_participates_in_gradient():
    rng = np.random.default_rng(45)
    w, h_rec, b = _rand(rng, 3, 3), _rand(rng, 3, 2), _rand(rng, 3)
    x = _rand(rng, 4, 2)
    scores = Tensor(rng.uniform(0.2, 0.8, size=4))
    mask = (rng.random((4, 3)) >= 0.5) / 0.5
    mix = Tensor(rng.uniform(-1, 1, size=3))

    def build(tape):
        y = nm.gated_chain(w, h_rec, b, x, scores, drop_mask=mask, tape=tape)
        return nm.dot(y, mix, tape)
    _check(build, [w, h_rec, b, x, scores])


def test_lstm_chain_matches_cell_composition_and_gradients():
    rng = np.random.default_rng(46)
    n, d = 3, 2
    wx, wh, b = _rand(rng, 4 * n, d), _rand(rng, 4 * n, n), _rand(rng, 4 * n)
    x = _rand(rng, 5, d)

    out = nm.lstm_chain(wx, wh, b, x)
    h = Tensor(np.zeros(n))
    c = Tensor(np.zeros(n))
    for t in range(5):
        packed = nm.lstm_cell(wx, wh, b, Tensor(x.data[t]), h, c)
        h = nm.slice_vec(packed, 0, n)
        c = nm.slice_vec(packed, n, 2 * n)
    assert np.allclose(out.data, h.data)

    mix = Tensor(rng.uniform(-1, 1, size=n))

    def build(tape):
        y = nm.lstm_chain(wx, wh, b, x, tape=tape)
        return nm.dot(y, mix, tape)
    _check(build, [wx, wh, b, x])


def test_chain_score_contract_errors():
    rng = np.random.default_rng(47)
    w, h_rec, b = _rand(rng, 3, 3), _rand(rng, 3, 2), _rand(rng, 3)
    x = _rand(rng, 2, 2)
    with pytest.raises(ContractError):
        nm.gated_chain(w, h_rec, b, x, Tensor(np.asarray([0.5, 1.0])))
    with pytest.raises(ContractError):
        nm.gated_chain(w, h_rec, b, x, Tensor(np.asarray([0.5])))


def test_kernel_outputs_finite_on_finite_inputs():
    rng = np.random.default_rng(30)
    a, x, b = _rand(rng, 6, 6), _rand(rng, 6), _rand(rng, 6)
    out = nm.recurrent_cell(a, x, a, x, b)
    out = nm.attention_cell(b, a, b, [out])
    assert np.all(np.isfinite(out.data))


def test_mse_rejects_length_mismatch():
    with pytest.raises(ContractError):
        nm.mean_squared_error([scalar(1.0)], [1.0, 2.0])


def test_gate_scores_strictly_inside_unit_interval():
    rng = np.random.default_rng(31)
    for _ in range(20):
        m, l, b = _rand(rng, 3), _rand(rng, 3, 4), _rand(rng, 3)
        a = float(nm.attention_cell(m, l, b, [_rand(rng, 4)]).data)
        assert 0.0 < a < 1.0
