"""Tests for the reverse-mode autodiff kernel."""

import numpy as np
import pytest

from deep_arguing import autodiff as ad
from deep_arguing.errors import DimensionError, NonFiniteError, ParameterError


def _project(out, rng_seed=1):
    """Reduce a tensor to a scalar through a fixed random projection."""
    weights = np.random.default_rng(rng_seed).normal(size=out.shape)
    return ad.reduce_sum(ad.hadamard(out, weights))


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


@pytest.mark.parametrize(
    "build, shapes",
    [
        (lambda a, b: ad.add(a, b), [(3, 4), (1, 4)]),
        (lambda a, b: ad.sub(a, b), [(3, 4), (3, 1)]),
        (lambda a, b: ad.hadamard(a, b), [(2, 3), (2, 3)]),
        (lambda a: ad.scale(a, -2.5), [(4,)]),
        (lambda a: ad.sigmoid(a), [(3, 3)]),
        (lambda a: ad.reduce_sum(a, axis=1), [(3, 5)]),
        (lambda a: ad.reduce_mean(a, axis=0), [(3, 5)]),
        (lambda a: ad.reduce_mean(a), [(2, 2)]),
        (lambda a: ad.reshape(a, (6, 2)), [(3, 4)]),
        (lambda a: ad.transpose(a), [(3, 4)]),
        (lambda a: ad.broadcast_to(a, (5, 3)), [(1, 3)]),
        (lambda a: ad.take(a, [2, 0, 2], axis=1), [(2, 3)]),
        (lambda a, b: ad.matmul(a, b), [(3, 4), (4, 2)]),
        (lambda a: ad.logsumexp_neg(a, 0.5, axis=1), [(3, 4)]),
        (lambda a: ad.logsumexp_neg(a, 0.3), [(2, 3)]),
    ],
)
def test_op_gradients_match_finite_differences(build, shapes, gradcheck, rng):
    """Every smooth op passes a central-difference check at random points."""
    for _ in range(20):
        inputs = [rng.normal(size=s) for s in shapes]
        gradcheck(lambda *xs: _project(build(*xs)), *inputs)


@pytest.mark.parametrize(
    "build",
    [
        lambda a: ad.absolute(a),
        lambda a: ad.relu(a),
        lambda a: ad.clip(a, -0.5, 0.5),
    ],
)
def test_piecewise_op_gradients_away_from_kinks(build, gradcheck, rng):
    """Piecewise-linear ops pass the check at points away from their kinks."""
    for _ in range(20):
        x = _away_from_zero(rng, (3, 4))
        x = np.where(np.abs(np.abs(x) - 0.5) < 0.05, x * 1.3, x)
        gradcheck(lambda a: _project(build(a)), x)


def test_elementwise_min_gradient(gradcheck, rng):
    """elementwise_min passes the check when no entries tie."""
    for _ in range(20):
        a = rng.normal(size=(3, 3))
        b = a + _away_from_zero(rng, (3, 3))
        gradcheck(lambda x, y: _project(ad.elementwise_min(x, y)), a, b)


def test_masked_logsumexp_gradient(gradcheck, rng):
    """Masked entries get no gradient and the rest pass the check."""
    mask = np.array([[True, False, True], [False, True, True]])
    x = rng.uniform(0, 1, size=(2, 3))
    gradcheck(lambda a: _project(ad.logsumexp_neg(a, 0.2, axis=1, mask=mask)), x)

    p = ad.parameter(x)
    ad.backward(ad.reduce_sum(ad.logsumexp_neg(p, 0.2, axis=1, mask=mask)))
    assert np.all(p.grad[~mask] == 0.0)


def test_trace_expm_gradient(gradcheck, rng):
    """tr(e^B) passes the check with the looser matrix-exponential tolerance."""
    for _ in range(20):
        b = rng.normal(scale=0.5, size=(4, 4))
        gradcheck(lambda m: ad.trace_expm(m), b, tol=1e-3)


def test_softmax_cross_entropy_gradient(gradcheck, rng):
    """Weighted cross entropy passes the check."""
    labels = [0, 2, 1, 2]
    weights = [0.5, 1.0, 2.0]
    for _ in range(20):
        logits = rng.normal(size=(4, 3))
        gradcheck(lambda z: ad.softmax_cross_entropy(z, labels, weights), logits)


def test_softmax_cross_entropy_value():
    """Uniform logits over two classes give log 2 per sample."""
    loss = ad.softmax_cross_entropy(ad.constant(np.zeros((3, 2))), [0, 1, 1], [1.0, 1.0])
    assert loss.item() == pytest.approx(np.log(2.0))


def test_softmax_cross_entropy_rejects_bad_labels():
    """Out-of-range labels raise ParameterError."""
    with pytest.raises(ParameterError):
        ad.softmax_cross_entropy(ad.constant(np.zeros((2, 2))), [0, 2], [1.0, 1.0])


def test_relu_gradient_is_zero_at_zero():
    """The ReLU subgradient at exactly 0 is 0."""
    x = ad.parameter([0.0, 1.0, -1.0])
    ad.backward(ad.reduce_sum(ad.relu(x)))
    assert x.grad.tolist() == [0.0, 1.0, 0.0]


def test_min_tie_sends_gradient_to_first_argument():
    """On ties the whole gradient goes to the first operand."""
    a = ad.parameter([0.5])
    b = ad.parameter([0.5])
    ad.backward(ad.reduce_sum(ad.elementwise_min(a, b)))
    assert a.grad.tolist() == [1.0]
    assert b.grad.tolist() == [0.0]


def test_shared_subexpression_accumulates_gradient():
    """x used twice receives the sum of both paths: d(x*x + x)/dx = 2x + 1."""
    x = ad.parameter([1.5, -2.0])
    ad.backward(ad.reduce_sum(ad.add(ad.hadamard(x, x), x)))
    assert x.grad == pytest.approx([4.0, -3.0])


def test_leaf_gradients_accumulate_across_calls():
    """A second backward call adds to the existing leaf gradient."""
    x = ad.parameter([2.0])
    for _ in range(2):
        ad.backward(ad.reduce_sum(ad.scale(x, 3.0)))
    assert x.grad.tolist() == [6.0]
    ad.zero_grads([x])
    assert x.grad is None


def test_backward_needs_scalar_loss():
    """Backward from a non-scalar raises DimensionError."""
    with pytest.raises(DimensionError):
        ad.backward(ad.scale(ad.parameter([1.0, 2.0]), 2.0))


def test_constants_are_not_recorded():
    """Ops on constants produce no computation record."""
    out = ad.add(ad.constant([1.0]), ad.constant([2.0]))
    assert not out.requires_grad
    assert len(ad.ComputationRecord.trace(out)) == 0


def test_computation_record_is_topological():
    """Every op appears after the ops producing its inputs."""
    x = ad.parameter([[1.0, 2.0]])
    y = ad.relu(ad.matmul(x, ad.constant([[1.0], [-1.0]])))
    loss = ad.reduce_sum(ad.add(y, ad.sigmoid(y)))
    record = ad.ComputationRecord.trace(loss)
    position = {id(op.output): i for i, op in enumerate(record.operations)}
    for i, op in enumerate(record.operations):
        for parent in op.inputs:
            if parent._op is not None:
                assert position[id(parent)] < i


@pytest.mark.parametrize(
    "build",
    [
        lambda: ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3)))),
        lambda: ad.add(ad.constant(np.ones((2, 3))), ad.constant(np.ones((3, 2)))),
        lambda: ad.elementwise_min(ad.constant(np.ones(2)), ad.constant(np.ones(3))),
        lambda: ad.reshape(ad.constant(np.ones(5)), (2, 3)),
        lambda: ad.trace_expm(ad.constant(np.ones((2, 3)))),
    ],
)
def test_shape_mismatches_raise(build):
    """Incompatible shapes raise DimensionError."""
    with pytest.raises(DimensionError):
        build()


def test_non_finite_values_are_rejected():
    """NaN inputs and overflowing ops raise NonFiniteError."""
    with pytest.raises(NonFiniteError):
        ad.Tensor([np.nan])
    with pytest.raises(NonFiniteError):
        ad.scale(ad.parameter([1e308]), 10.0)


def test_trace_expm_of_zero_matrix():
    """tr(e^0) is the matrix size."""
    assert ad.trace_expm(ad.constant(np.zeros((3, 3)))).item() == pytest.approx(3.0, abs=1e-12)


def test_clip_global_norm_rescales_jointly():
    """Gradients with norm 5 clipped to 1 keep their direction."""
    a, b = ad.parameter([0.0]), ad.parameter([0.0])
    a.grad, b.grad = np.array([3.0]), np.array([4.0])
    total = ad.clip_global_norm([a, b], 1.0)
    assert total == pytest.approx(5.0)
    assert a.grad == pytest.approx([0.6])
    assert b.grad == pytest.approx([0.8])


def test_clip_global_norm_leaves_small_gradients():
    """Gradients already under the limit are untouched."""
    a = ad.parameter([0.0])
    a.grad = np.array([0.5])
    ad.clip_global_norm([a], 1.0)
    assert a.grad.tolist() == [0.5]


def test_adamw_first_step():
    """First AdamW step: decay, then a step of about lr against the gradient sign."""
    p = ad.parameter([1.0])
    p.grad = np.array([0.5])
    state = ad.OptimizerState([p], lr=0.1, weight_decay=0.01)
    ad.adamw_step(state, [p])
    assert p.data[0] == pytest.approx(1.0 * (1 - 0.1 * 0.01) - 0.1, rel=1e-6)
    assert state.step_count == 1


def test_adamw_minimizes_quadratic():
    """Repeated steps drive (x - 3)^2 towards its minimum."""
    x = ad.parameter([0.0])
    state = ad.OptimizerState([x], lr=0.1, weight_decay=0.0)
    for _ in range(300):
        ad.zero_grads([x])
        diff = ad.sub(x, 3.0)
        ad.backward(ad.reduce_sum(ad.hadamard(diff, diff)))
        ad.adamw_step(state, [x])
    assert x.data[0] == pytest.approx(3.0, abs=5e-2)
