"""Tape autodiff, Adam, and CKPT files against loop-based oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from threadforge.data import DataError
from threadforge.nn_core import (AdamState, ShapeError, Tape, adam_step,
                                 read_ckpt, write_ckpt)


def rng(seed=0):
    return np.random.default_rng(seed)


def finite_diff_node(build, params, h=1e-4):
    """Central differences of a scalar tape function w.r.t. named arrays."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            hi = build(params)
            p[idx] = old - h
            lo = build(params)
            p[idx] = old
            g[idx] = (hi - lo) / (2 * h)
        grads[name] = g
    return grads


# -- forward examples ---------------------------------------------------------

def test_softmax_singleton_row():
    t = Tape()
    out = t.row_softmax(t.constant([[3.7]]))
    assert t.value(out).tolist() == [[1.0]]


def test_cross_entropy_uniform_logits():
    t = Tape()
    loss = t.cross_entropy(t.constant([[0.0, 0.0, 0.0]]), [1])
    assert math.isclose(t.value(loss)[0, 0], math.log(3.0), rel_tol=1e-12)


def test_sum_backward_is_ones():
    t = Tape()
    p = t.param(rng().normal(size=(2, 3)))
    t.backward(t.sum_all(p))
    assert t.grad(p).tolist() == np.ones((2, 3)).tolist()


def test_matmul_forward_matches_oracle():
    a = rng(1).normal(size=(3, 4))
    b = rng(2).normal(size=(4, 2))
    t = Tape()
    out = t.matmul(t.constant(a), t.constant(b))
    assert np.allclose(t.value(out), oracles.matmul(a, b), atol=1e-12)


def test_masked_softmax_rows_sum_to_one_on_mask():
    x = rng(3).normal(size=(4, 4))
    mask = np.eye(4) + np.diag(np.ones(3), 1)
    t = Tape()
    out = t.value(t.masked_row_softmax(t.constant(x), mask))
    assert np.allclose(out.sum(axis=1), 1.0)
    assert np.all(out[mask == 0] == 0.0)


def test_masked_softmax_rejects_empty_row():
    t = Tape()
    x = t.constant(np.zeros((2, 2)))
    with pytest.raises(ShapeError, match="no unmasked"):
        t.masked_row_softmax(x, np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_concat_cols_layout():
    t = Tape()
    out = t.concat_cols([t.constant([[1.0], [2.0]]), t.constant([[3.0, 4.0], [5.0, 6.0]])])
    assert t.value(out).tolist() == [[1.0, 3.0, 4.0], [2.0, 5.0, 6.0]]


# -- per-primitive gradient checks -----------------------------------------------

PRIMS = {
    "matmul": (lambda t, p: t.matmul(p["w"], t.constant(rng(11).normal(size=(3, 2)))),
               {"w": (4, 3)}),
    "add": (lambda t, p: t.add(p["w"], t.constant(rng(12).normal(size=(4, 3)))),
            {"w": (4, 3)}),
    "add_bias": (lambda t, p: t.add(t.constant(rng(13).normal(size=(4, 3))), p["w"]),
                 {"w": (1, 3)}),
    "mul": (lambda t, p: t.mul(p["w"], t.constant(rng(14).normal(size=(3, 3)))),
            {"w": (3, 3)}),
    "scale": (lambda t, p: t.scale(p["w"], -1.7), {"w": (2, 5)}),
    "transpose": (lambda t, p: t.transpose(p["w"]), {"w": (2, 3)}),
    "relu": (lambda t, p: t.relu(p["w"]), {"w": (3, 3)}),
    "leaky_relu": (lambda t, p: t.leaky_relu(p["w"], 0.2), {"w": (3, 3)}),
    "row_softmax": (lambda t, p: t.row_softmax(p["w"]), {"w": (3, 4)}),
    "row_mean": (lambda t, p: t.row_mean(p["w"]), {"w": (4, 3)}),
    "concat": (lambda t, p: t.concat_cols([p["w"], p["u"]]), {"w": (3, 2), "u": (3, 4)}),
}


@pytest.mark.parametrize("name", sorted(PRIMS))
def test_primitive_gradients(name):
    build_op, shapes = PRIMS[name]
    # offset 0.5 keeps relu/leaky kinks away from the sampled points
    arrays = {k: rng(hash(k) % 100).normal(size=s) + 0.5 for k, s in shapes.items()}
    weight = rng(99).normal(size=(1, 1))  # random linear functional -> scalar

    def loss_of(arrs):
        t = Tape()
        nodes = {k: t.param(v) for k, v in arrs.items()}
        out = build_op(t, nodes)
        v = t.value(out)
        probe = rng(42).normal(size=v.shape)
        s = t.sum_all(t.mul(out, t.constant(probe)))
        return float(t.value(s)[0, 0])

    t = Tape()
    nodes = {k: t.param(v) for k, v in arrays.items()}
    out = build_op(t, nodes)
    probe = rng(42).normal(size=t.value(out).shape)
    loss = t.sum_all(t.mul(out, t.constant(probe)))
    got = t.backward(loss)
    want = finite_diff_node(lambda a: loss_of(a), arrays)
    for k in arrays:
        err = oracles.max_rel_err({k: got[nodes[k].index]}, {k: want[k]})
        assert err < 1e-6, f"{name}/{k}: rel err {err}"
    del weight


def test_masked_softmax_gradient():
    x = rng(7).normal(size=(3, 3))
    mask = np.array([[1, 1, 0], [0, 1, 1], [1, 1, 1]], dtype=float)
    probe = rng(8).normal(size=(3, 3)) * mask

    def loss_of(arrs):
        t = Tape()
        p = t.param(arrs["x"])
        out = t.masked_row_softmax(p, mask)
        return float(t.value(t.sum_all(t.mul(out, t.constant(probe))))[0, 0])

    t = Tape()
    p = t.param(x)
    loss = t.sum_all(t.mul(t.masked_row_softmax(p, mask), t.constant(probe)))
    got = t.backward(loss)[p.index]
    want = finite_diff_node(loss_of, {"x": x})["x"]
    assert oracles.max_rel_err({"x": got}, {"x": want}) < 1e-6


def test_cross_entropy_gradient():
    logits = rng(9).normal(size=(5, 3))
    labels = [0, 2, 1, 1, 0]

    def loss_of(arrs):
        t = Tape()
        return float(t.value(t.cross_entropy(t.param(arrs["z"]), labels))[0, 0])

    t = Tape()
    z = t.param(logits)
    got = t.backward(t.cross_entropy(z, labels))[z.index]
    want = finite_diff_node(loss_of, {"z": logits})["z"]
    assert oracles.max_rel_err({"z": got}, {"z": want}) < 1e-6


def test_shared_node_gradients_accumulate():
    # y = w @ w.T reuses w on both sides; d(sum y)/dw = 2 * ones @ w
    w = rng(5).normal(size=(3, 3))
    t = Tape()
    p = t.param(w)
    loss = t.sum_all(t.matmul(p, t.transpose(p)))
    got = t.backward(loss)[p.index]
    want = 2 * np.ones((3, 3)) @ w
    assert np.allclose(got, want, atol=1e-10)


# -- tape discipline -------------------------------------------------------------

def test_backward_twice_raises():
    t = Tape()
    p = t.param([[1.0, 2.0]])
    loss = t.sum_all(p)
    t.backward(loss)
    with pytest.raises(RuntimeError, match="reset_grads"):
        t.backward(loss)
    t.reset_grads()
    assert t.backward(loss)[p.index].tolist() == [[1.0, 1.0]]


def test_backward_requires_scalar():
    t = Tape()
    p = t.param(np.ones((2, 2)))
    with pytest.raises(ShapeError, match="1x1"):
        t.backward(t.relu(p))


def test_shape_errors_name_both_shapes():
    t = Tape()
    a = t.constant(np.ones((2, 3)))
    b = t.constant(np.ones((2, 2)))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        t.matmul(a, b)
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        t.add(a, b)


def test_rejects_non_2d_and_non_finite():
    t = Tape()
    with pytest.raises(ShapeError):
        t.constant([1.0, 2.0])
    with pytest.raises(FloatingPointError):
        t.constant([[np.inf]])


def test_foreign_node_rejected():
    t1, t2 = Tape(), Tape()
    a = t1.constant([[1.0]])
    with pytest.raises(ValueError, match="different tape"):
        t2.relu(a)


def test_unused_param_gets_zero_grad():
    t = Tape()
    used = t.param([[2.0]])
    unused = t.param([[5.0, 5.0]])
    grads = t.backward(t.sum_all(used))
    assert grads[unused.index].tolist() == [[0.0, 0.0]]


# -- adam -------------------------------------------------------------------------

def test_adam_first_step_direction():
    # with m=v=0 and bias correction, step 1 moves by lr * g/(|g| + eps)
    g = np.array([[0.3, -2.0], [0.0, 1e-4]])
    p = np.zeros((2, 2))
    state = AdamState(lr=5e-3, weight_decay=0.0)
    new = adam_step({"w": p}, {"w": g}, state)
    want = -state.lr * g / (np.abs(g) + state.eps)
    assert np.max(np.abs(new["w"] - want)) < 1e-12
    assert state.t == 1


def test_adam_zero_gradient_decay_only():
    p = np.full((1, 2), 4.0)
    state = AdamState(lr=1e-2, weight_decay=1e-1)
    new = adam_step({"w": p}, {"w": np.zeros((1, 2))}, state)
    assert np.allclose(new["w"], 4.0 * (1 - 1e-2 * 1e-1))


def test_adam_decay_applied_before_update():
    g = np.array([[1.0]])
    state = AdamState(lr=0.1, weight_decay=0.5)
    new = adam_step({"w": np.array([[10.0]])}, {"w": g}, state)
    # decayed first to 9.5, then stepped by ~lr
    step = 0.1 * 1.0 / (1.0 + state.eps)
    assert math.isclose(new["w"][0, 0], 10.0 * (1 - 0.1 * 0.5) - step, rel_tol=1e-12)


def test_adam_matches_scalar_oracle():
    def grad(w):
        return 2.0 * (w - 3.0)

    want = oracles.adam_scalar(grad, 0.0, 200, lr=5e-3)
    state = AdamState(lr=5e-3, weight_decay=0.0)
    params = {"w": np.array([[0.0]])}
    for _ in range(200):
        params = adam_step(params, {"w": np.array([[grad(params["w"][0, 0])]])}, state)
    assert math.isclose(params["w"][0, 0], want, rel_tol=1e-12)


def test_adam_quadratic_convergence_budget():
    # minimizing (w-3)^2 from 0 at lr 5e-3: each step moves at most ~lr, so
    # 100 steps reach ~0.5, still 2.5 away; ~1500 steps get within 0.5 of 3.
    def grad(w):
        return 2.0 * (w - 3.0)

    at_100 = oracles.adam_scalar(grad, 0.0, 100, lr=5e-3)
    assert abs(at_100 - 3.0) > 0.5
    assert abs(at_100 - 0.5) < 0.05  # moved essentially lr per step
    at_1500 = oracles.adam_scalar(grad, 0.0, 1500, lr=5e-3)
    assert abs(at_1500 - 3.0) < 0.5


def test_adam_with_decay_matches_scalar_oracle():
    def grad(w):
        return math.sin(w) + 0.3

    want = oracles.adam_scalar(grad, 1.0, 50, lr=1e-2, weight_decay=1e-3)
    state = AdamState(lr=1e-2, weight_decay=1e-3)
    params = {"w": np.array([[1.0]])}
    for _ in range(50):
        params = adam_step(params, {"w": np.array([[grad(params["w"][0, 0])]])}, state)
    assert math.isclose(params["w"][0, 0], want, rel_tol=1e-12)


def test_adam_errors():
    state = AdamState()
    with pytest.raises(KeyError, match="'w'"):
        adam_step({"w": np.ones((1, 1))}, {}, state)
    with pytest.raises(ShapeError):
        adam_step({"w": np.ones((1, 1))}, {"w": np.ones((1, 2))}, AdamState())
    with pytest.raises(FloatingPointError, match="'w'"):
        adam_step({"w": np.ones((1, 1))}, {"w": np.array([[np.nan]])}, AdamState())


def test_adam_state_persists_across_steps():
    state = AdamState(weight_decay=0.0)
    params = {"w": np.array([[1.0]])}
    params = adam_step(params, {"w": np.array([[1.0]])}, state)
    params = adam_step(params, {"w": np.array([[1.0]])}, state)
    assert state.t == 2
    assert "w" in state.m and "w" in state.v


# -- end-to-end tape + adam -----------------------------------------------------

def test_tape_adam_least_squares():
    x = rng(0).normal(size=(32, 3))
    true_w = np.array([[1.0], [-2.0], [0.5]])
    y = x @ true_w
    params = {"w": np.zeros((3, 1))}
    state = AdamState(lr=5e-2, weight_decay=0.0)
    for _ in range(400):
        t = Tape()
        w = t.param(params["w"])
        resid = t.add(t.matmul(t.constant(x), w), t.constant(-y))
        loss = t.scale(t.sum_all(t.mul(resid, resid)), 1.0 / 32)
        grads = t.backward(loss)
        params = adam_step(params, {"w": grads[w.index]}, state)
    assert np.max(np.abs(params["w"] - true_w)) < 1e-2


# -- CKPT ------------------------------------------------------------------------

def test_ckpt_round_trip(tmp_path):
    tensors = {"b": rng(1).normal(size=(1, 4)), "a": rng(2).normal(size=(3, 3))}
    path = tmp_path / "m.ckpt"
    write_ckpt(path, tensors)
    back = read_ckpt(path)
    assert sorted(back) == ["a", "b"]
    for k in tensors:
        assert back[k].dtype == np.float64
        assert np.array_equal(back[k], tensors[k])


def test_ckpt_layout(tmp_path):
    path = tmp_path / "m.ckpt"
    write_ckpt(path, {"w": np.array([[1.5]])})
    raw = path.read_bytes()
    assert raw[:4] == b"CKPT"
    assert raw[4:8] == (1).to_bytes(4, "little")
    assert raw[8:10] == (1).to_bytes(2, "little")
    assert raw[10:11] == b"w"
    assert raw[11:19] == (1).to_bytes(4, "little") * 2
    assert np.frombuffer(raw[19:], dtype="<f8")[0] == 1.5
    assert len(raw) == 27


def test_ckpt_sorted_by_name(tmp_path):
    path = tmp_path / "m.ckpt"
    write_ckpt(path, {"z": np.ones((1, 1)), "a": np.ones((1, 1))})
    raw = path.read_bytes()
    assert raw.index(b"a") < raw.index(b"z")


def test_ckpt_corruption(tmp_path):
    path = tmp_path / "m.ckpt"
    write_ckpt(path, {"w": np.ones((2, 2))})
    good = path.read_bytes()
    path.write_bytes(b"NOPE" + good[4:])
    with pytest.raises(DataError, match="magic"):
        read_ckpt(path)
    path.write_bytes(good[:-3])
    with pytest.raises(DataError):
        read_ckpt(path)
    path.write_bytes(good + b"\x01")
    with pytest.raises(DataError, match="trailing"):
        read_ckpt(path)


def test_ckpt_rejects_non_2d(tmp_path):
    with pytest.raises(ShapeError):
        write_ckpt(tmp_path / "m.ckpt", {"w": np.ones(3)})


# -- properties ---------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_softmax_rows_partition_unity(rows, cols, seed):
    x = np.random.default_rng(seed).normal(size=(rows, cols)) * 10
    t = Tape()
    out = t.value(t.row_softmax(t.constant(x)))
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert (out >= 0).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(2, 5), st.integers(0, 2**31))
def test_cross_entropy_grad_rows_sum_to_zero(rows, cols, seed):
    r = np.random.default_rng(seed)
    logits = r.normal(size=(rows, cols))
    labels = r.integers(0, cols, size=rows)
    t = Tape()
    z = t.param(logits)
    got = t.backward(t.cross_entropy(z, labels))[z.index]
    assert np.allclose(got.sum(axis=1), 0.0, atol=1e-12)
