import numpy as np
import pytest

from metasurv.errors import ConfigError, DataError, UsageError
from metasurv.network import NetworkSpec, backward, forward, init_params


def small_spec(**kwargs):
    defaults = dict(
        numeric_inputs=2,
        boolean_inputs=1,
        categorical_cardinalities=(3,),
        embedding_width=2,
        embedding_dropout=0.4,
        hidden_widths=(3, 2),
        hidden_dropout=0.2,
        output_count=4,
    )
    defaults.update(kwargs)
    return NetworkSpec(**defaults)


def random_inputs(spec, n, seed=7):
    rng = np.random.default_rng(seed)
    numeric = rng.standard_normal((n, spec.numeric_inputs))
    boolean = (rng.uniform(size=(n, spec.boolean_inputs)) < 0.5).astype(float)
    if spec.categorical_cardinalities:
        categorical = np.stack(
            [rng.integers(0, c, size=n) for c in spec.categorical_cardinalities], axis=1
        )
    else:
        categorical = np.zeros((n, 0), dtype=np.int64)
    return numeric, boolean, categorical


def test_spec_validation():
    with pytest.raises(ConfigError):
        NetworkSpec(numeric_inputs=1, hidden_widths=(0,))
    with pytest.raises(ConfigError):
        NetworkSpec(numeric_inputs=1, hidden_dropout=1.0)
    with pytest.raises(ConfigError):
        NetworkSpec(numeric_inputs=1, output_count=0)
    with pytest.raises(ConfigError):
        NetworkSpec(numeric_inputs=-1)


def test_init_biases_zero_and_deterministic():
    spec = small_spec(hidden_widths=(2,))
    params = init_params(spec, seed=7)
    for b in params.biases:
        assert np.all(b == 0.0)
    again = init_params(spec, seed=7)
    for a, b in zip(params.arrays(), again.arrays()):
        assert np.array_equal(a, b)
    other = init_params(spec, seed=8)
    assert any(not np.array_equal(a, b) for a, b in zip(params.arrays(), other.arrays()))


def test_zero_params_forward():
    spec = small_spec(categorical_cardinalities=(), boolean_inputs=0, hidden_widths=(4,), output_count=3)
    params = init_params(spec, 0)
    for a in params.arrays():
        a[:] = 0.0
    out, tape = forward(params, np.array([[0.3, -0.4]]), np.zeros((1, 0)), np.zeros((1, 0), dtype=np.int64))
    assert np.array_equal(out, np.zeros((1, 3)))
    assert np.array_equal(tape.layer_sigmoid[0], np.full((1, 4), 0.5))


def test_single_unit_hand_value():
    spec = NetworkSpec(numeric_inputs=1, hidden_widths=(1,), output_count=1, hidden_dropout=0.0)
    params = init_params(spec, 0)
    params.weights[0][:] = 1.0
    params.weights[1][:] = 1.0
    out, _ = forward(params, np.array([[1.0]]), np.zeros((1, 0)), np.zeros((1, 0), dtype=np.int64))
    assert out[0, 0] == pytest.approx(0.731059, abs=1e-6)


def test_train_mode_without_dropout_matches_eval():
    spec = small_spec(embedding_dropout=0.0, hidden_dropout=0.0)
    params = init_params(spec, 1)
    x = random_inputs(spec, 5)
    out_eval, _ = forward(params, *x, mode="eval")
    out_train, _ = forward(params, *x, mode="train", rng=np.random.default_rng(0))
    assert np.array_equal(out_eval, out_train)


def test_eval_mode_ignores_rng():
    spec = small_spec()
    params = init_params(spec, 1)
    x = random_inputs(spec, 4)
    a, _ = forward(params, *x, mode="eval", rng=np.random.default_rng(1))
    b, _ = forward(params, *x, mode="eval", rng=np.random.default_rng(99))
    c, _ = forward(params, *x, mode="eval")
    assert np.array_equal(a, b) and np.array_equal(a, c)


def test_input_validation():
    spec = small_spec()
    params = init_params(spec, 1)
    numeric, boolean, categorical = random_inputs(spec, 3)
    bad_cat = categorical.copy()
    bad_cat[0, 0] = 5
    with pytest.raises(DataError):
        forward(params, numeric, boolean, bad_cat)
    bad_numeric = numeric.copy()
    bad_numeric[1, 0] = np.nan
    with pytest.raises(DataError):
        forward(params, bad_numeric, boolean, categorical)
    with pytest.raises(UsageError):
        forward(params, numeric, boolean, categorical, mode="predict")


def test_backward_zero_cotangent_and_shape_check():
    spec = small_spec()
    params = init_params(spec, 2)
    x = random_inputs(spec, 3)
    out, tape = forward(params, *x)
    grads = backward(params, tape, np.zeros_like(out))
    assert all(np.all(g == 0.0) for g in grads.arrays())
    with pytest.raises(UsageError):
        backward(params, tape, np.zeros((3, spec.output_count + 1)))


def test_untouched_embedding_rows_have_zero_gradient():
    spec = small_spec(categorical_cardinalities=(5,))
    params = init_params(spec, 3)
    numeric, boolean, _ = random_inputs(spec, 4)
    categorical = np.array([[0], [1], [1], [2]])
    out, tape = forward(params, numeric, boolean, categorical)
    grads = backward(params, tape, np.ones_like(out))
    assert np.all(grads.embeddings[0][3] == 0.0)
    assert np.all(grads.embeddings[0][4] == 0.0)
    assert np.any(grads.embeddings[0][0] != 0.0)


def relative_fd_error(params, value_fn, grads, step=1e-5, floor=1e-8):
    worst = 0.0
    for arr, g in zip(params.arrays(), grads.arrays()):
        flat, gflat = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = value_fn()
            flat[i] = orig - step
            down = value_fn()
            flat[i] = orig
            fd = (up - down) / (2.0 * step)
            denom = max(abs(fd), abs(gflat[i]), floor)
            worst = max(worst, abs(fd - gflat[i]) / denom)
    return worst


@pytest.mark.parametrize("mode", ["eval", "train"])
def test_gradients_match_finite_differences(mode):
    rng = np.random.default_rng(10)
    for trial in range(3):
        spec = small_spec(
            hidden_widths=tuple(rng.integers(1, 4, size=rng.integers(1, 3))),
            output_count=int(rng.integers(1, 4)),
        )
        params = init_params(spec, trial)
        for a in params.arrays():
            a += 0.3 * rng.standard_normal(a.shape)
        x = random_inputs(spec, 3, seed=trial)
        cot = rng.standard_normal((3, spec.output_count))
        noise_seed = 1234 + trial

        def value():
            out, _ = forward(params, *x, mode=mode, rng=np.random.default_rng(noise_seed))
            return float((out * cot).sum())

        out, tape = forward(params, *x, mode=mode, rng=np.random.default_rng(noise_seed))
        grads = backward(params, tape, cot)
        assert relative_fd_error(params, value, grads) < 1e-4


def test_dropout_expectation_matches_eval_single_site():
    # one dropout site feeding the linear head: mean-one noise preserves the
    # expected output exactly, so the draw average lands within 3 s.e.
    spec = NetworkSpec(
        numeric_inputs=2, hidden_widths=(4,), hidden_dropout=0.3, output_count=1
    )
    params = init_params(spec, 5)
    x = (np.array([[0.4, -1.2]]), np.zeros((1, 0)), np.zeros((1, 0), dtype=np.int64))
    eval_out, _ = forward(params, *x)
    rng = np.random.default_rng(17)
    draws = np.empty(10_000)
    for i in range(draws.size):
        out, _ = forward(params, *x, mode="train", rng=rng)
        draws[i] = out[0, 0]
    se = draws.std(ddof=1) / np.sqrt(draws.size)
    assert abs(draws.mean() - eval_out[0, 0]) < 3.0 * se
