import numpy as np
import pytest

from metasurv.basis import make_basis
from metasurv.data import Dataset
from metasurv.errors import DataError, EstimationError, UsageError
from metasurv.estimation import (
    AdamState,
    TrainConfig,
    _cox_minibatch_objective,
    _full_objective,
    cox_minibatch_step,
    cox_objective,
    cox_partial_loglik,
    full_loglik,
    kalbfleisch_prentice_baseline,
    kaplan_meier,
    train,
)
from metasurv.models import DhMnnModel, PhMnnModel, PositivityMap, QrMnnModel
from metasurv.network import NetworkSpec, init_params


def simple_dataset(times, events, etypes=None, event_count=1, x=None):
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    n = times.size
    etypes = np.asarray(etypes) if etypes is not None else events.copy()
    return Dataset(
        numeric=np.zeros((n, 1)) if x is None else np.asarray(x, dtype=float),
        boolean=np.zeros((n, 0)),
        categorical=np.zeros((n, 0), dtype=np.int64),
        time=times,
        event_type=etypes,
        event=events,
        event_count=event_count,
    )


def zero_model(cls, kind="constant", knots=(0.0, 10.0), events=1, hidden=(), inputs=1):
    bases = tuple(make_basis(kind, knots) for _ in range(events))
    spec = NetworkSpec(
        numeric_inputs=inputs,
        hidden_widths=hidden,
        hidden_dropout=0.0,
        output_count=sum(b.size for b in bases),
    )
    params = init_params(spec, 0)
    for a in params.arrays():
        a[:] = 0.0
    return cls(params=params, bases=bases, positivity=PositivityMap("exp"))


def random_model(cls, rng, kind="linear", knots=(0.0, 5.0, 10.0), events=2, hidden=(3,), inputs=2):
    bases = tuple(make_basis(kind, knots) for _ in range(events))
    spec = NetworkSpec(
        numeric_inputs=inputs,
        hidden_widths=hidden,
        hidden_dropout=0.0,
        output_count=sum(b.size for b in bases),
    )
    params = init_params(spec, int(rng.integers(1 << 30)))
    for a in params.arrays():
        a += 0.3 * rng.standard_normal(a.shape)
    return cls(params=params, bases=bases, positivity=PositivityMap("exp"))


def random_dataset(rng, n, event_count=2):
    return Dataset(
        numeric=rng.standard_normal((n, 2)),
        boolean=np.zeros((n, 0)),
        categorical=np.zeros((n, 0), dtype=np.int64),
        time=rng.uniform(0.1, 9.5, n),
        event_type=rng.integers(1, event_count + 1, size=n),
        event=(rng.uniform(size=n) < 0.7).astype(int),
        event_count=event_count,
    )


# --- partial likelihood ----------------------------------------------------


def test_cox_two_subject_hand_value():
    m = zero_model(PhMnnModel)
    d = simple_dataset([1.0, 2.0], [1, 1])
    assert cox_partial_loglik(m, d) == pytest.approx(-np.log(2.0) / 2.0, abs=1e-12)


def test_cox_all_censored_raises():
    m = zero_model(PhMnnModel)
    with pytest.raises(EstimationError):
        cox_partial_loglik(m, simple_dataset([1.0, 2.0], [0, 0]))


def test_cox_single_event_alone_is_zero():
    m = zero_model(PhMnnModel)
    assert cox_partial_loglik(m, simple_dataset([1.0], [1])) == 0.0


def test_cox_ties_share_risk_set():
    m = zero_model(PhMnnModel)
    d = simple_dataset([1.0, 1.0, 2.0], [1, 1, 0])
    # both tied events see all three subjects at risk
    assert cox_partial_loglik(m, d) == pytest.approx(-2.0 * np.log(3.0) / 2.0, abs=1e-12)


def test_cox_shift_invariance():
    rng = np.random.default_rng(0)
    m = random_model(PhMnnModel, rng, kind="constant", knots=(0.0, 10.0))
    d = random_dataset(rng, 40)
    before = cox_partial_loglik(m, d)
    for b in (m.params.biases[-1],):
        b += 3.7  # common factor exp(3.7) cancels inside every risk-set ratio
    after = cox_partial_loglik(m, d)
    assert after == pytest.approx(before, abs=1e-10)


def test_minibatch_full_size_matches_full_batch():
    rng = np.random.default_rng(1)
    for trial in range(3):
        d = random_dataset(rng, 60)
        m = random_model(PhMnnModel, rng)
        value_full, grad_full = cox_objective(m, d)
        uncensored = np.flatnonzero(d.event == 1)
        value_mb, grad_mb, skipped = _cox_minibatch_objective(
            m, d, np.arange(d.n), uncensored, "eval", None
        )
        assert skipped == 0
        assert abs(value_full - value_mb) < 1e-10
        for a, b in zip(grad_full.arrays(), grad_mb.arrays()):
            assert np.all(np.abs(a - b) < 1e-10)


def test_minibatch_zero_net_loss_and_bias_gradient():
    m = zero_model(PhMnnModel)
    rng = np.random.default_rng(2)
    d = simple_dataset(rng.uniform(1.0, 9.0, 30), (rng.uniform(size=30) < 0.5).astype(int))
    uncensored = np.flatnonzero(d.event == 1)
    value, grad, _ = _cox_minibatch_objective(m, d, np.arange(d.n), uncensored, "eval", None)
    risk_sizes = d.risk_counts(d.time[uncensored])
    assert value == pytest.approx(-np.mean(np.log(risk_sizes)), abs=1e-12)
    # identical outputs for every subject: each event term cancels against
    # its risk average, so the head-bias gradient vanishes
    assert np.all(np.abs(grad.biases[-1]) < 1e-12)


def test_minibatch_skips_events_without_risk_partners(caplog):
    m = zero_model(PhMnnModel)
    d = simple_dataset([1.0, 2.0, 8.0, 9.0], [0, 1, 0, 1])
    with caplog.at_level("WARNING"):
        value, grad, skipped = _cox_minibatch_objective(m, d, np.asarray([2]), np.asarray([1, 3]), "eval", None)
    # the event at t=9 has no at-risk partner in batch {t=8}
    assert skipped == 1
    assert "skipped" in caplog.text
    assert np.isfinite(value)


def test_cox_minibatch_step_validations():
    m = zero_model(PhMnnModel)
    d = simple_dataset([1.0, 2.0], [1, 1])
    config = TrainConfig(iterations=1, batch_size=10, event_batch_size=1)
    with pytest.raises(UsageError):
        cox_minibatch_step(m, d, config, np.random.default_rng(0), AdamState(m.params))
    d2 = simple_dataset([1.0, 2.0], [1, 0])
    with pytest.raises(UsageError):
        # the event batch may not contain censored subjects
        _cox_minibatch_objective(m, d2, np.asarray([0, 1]), np.asarray([1]), "eval", None)


# --- baseline --------------------------------------------------------------


def test_baseline_hand_example():
    m = zero_model(PhMnnModel)
    d = simple_dataset([1.0, 2.0, 3.0], [1, 0, 1])
    base = kalbfleisch_prentice_baseline(m, d)[0]
    assert base.jump_times.tolist() == [1.0]
    assert base.jump_sizes[0] == pytest.approx(-np.log(2.0 / 3.0), abs=1e-12)
    assert base.infinite_from == 3.0
    assert base.step(0.5) == 0.0
    assert base.step(2.9) == pytest.approx(0.405465, abs=1e-6)
    assert np.isinf(base.step(3.0))


def test_baseline_matches_product_limit_without_covariates():
    rng = np.random.default_rng(3)
    m = zero_model(PhMnnModel)
    times = rng.uniform(0.5, 9.5, 50)  # continuous: no ties
    events = (rng.uniform(size=50) < 0.6).astype(int)
    d = simple_dataset(times, events)
    base = kalbfleisch_prentice_baseline(m, d)[0]
    km = kaplan_meier(d)
    for t in np.linspace(0.0, 10.0, 64):
        s_ph = np.exp(-base.step(t))
        assert abs(s_ph - km(t)) < 1e-12


def test_baseline_no_events_of_type():
    m = zero_model(PhMnnModel, events=2, knots=(0.0, 10.0))
    d = simple_dataset([1.0, 2.0], [1, 1], etypes=[1, 1], event_count=2)
    bases = kalbfleisch_prentice_baseline(m, d)
    assert bases[1].jump_times.size == 0
    assert bases[1].step(5.0) == 0.0


# --- full likelihood -------------------------------------------------------


def test_full_loglik_unit_rate_hand_values():
    for cls, kind, knots in (
        (DhMnnModel, "linear", (0, 2, 4, 6, 8, 10)),
        (QrMnnModel, "linear", (0.0, 0.05, 0.2)),
    ):
        m = zero_model(cls, kind=kind, knots=knots)
        assert full_loglik(m, simple_dataset([2.0], [0])) == pytest.approx(-2.0, rel=1e-12)
        assert full_loglik(m, simple_dataset([1.0], [1])) == pytest.approx(-1.0, rel=1e-12)


def test_full_loglik_empty_and_zero_hazard():
    m = zero_model(DhMnnModel, kind="constant", knots=(1.0, 10.0))
    with pytest.raises(DataError):
        full_loglik(m, simple_dataset([], []))
    # event observed before the grid starts: hazard is exactly zero there
    with pytest.raises(EstimationError):
        full_loglik(m, simple_dataset([0.5], [1]))


def test_objective_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    step = 1e-5
    for trial in range(4):
        d = random_dataset(rng, 8)
        for cls, knots in (
            (PhMnnModel, (0.0, 5.0, 10.0)),
            (DhMnnModel, (0.0, 5.0, 10.0)),
            (QrMnnModel, (0.0, 0.05, 0.2)),
        ):
            m = random_model(cls, rng, knots=knots)

            def value():
                if cls is PhMnnModel:
                    return cox_objective(m, d)[0]
                return _full_objective(m, d, None, "eval", None)[0]

            if cls is PhMnnModel:
                _, grads = cox_objective(m, d)
            else:
                _, grads = _full_objective(m, d, None, "eval", None)
            worst = 0.0
            for arr, g in zip(m.params.arrays(), grads.arrays()):
                flat, gflat = arr.ravel(), g.ravel()
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + step
                    up = value()
                    flat[i] = orig - step
                    down = value()
                    flat[i] = orig
                    fd = (up - down) / (2 * step)
                    denom = max(abs(fd), abs(gflat[i]), 1e-8)
                    worst = max(worst, abs(fd - gflat[i]) / denom)
            assert worst < 1e-4


# --- training loop ---------------------------------------------------------


def test_train_zero_iterations_returns_initialized_model():
    d = simple_dataset([1.0, 2.0, 3.0], [1, 1, 0])
    bases = (make_basis("constant", (0.0, 10.0)),)
    spec = NetworkSpec(numeric_inputs=1, hidden_widths=(), output_count=1)
    config = TrainConfig(iterations=0, seed=5)
    model, trace = train("ph", spec, bases, d, config)
    assert trace.size == 0
    reference = init_params(spec, 5)
    for a, b in zip(model.params.arrays(), reference.arrays()):
        assert np.array_equal(a, b)
    assert model.baseline is not None  # baseline still estimated


def test_train_deterministic_given_seed():
    rng = np.random.default_rng(6)
    d = random_dataset(rng, 120, event_count=1)
    bases = (make_basis("linear", (0.0, 5.0, 10.0)),)
    spec = NetworkSpec(numeric_inputs=2, hidden_widths=(3,), output_count=3, hidden_dropout=0.1)
    config = TrainConfig(iterations=40, batch_size=32, event_batch_size=16, seed=9)
    m1, t1 = train("dh", spec, bases, d, config)
    m2, t2 = train("dh", spec, bases, d, config)
    assert np.array_equal(t1, t2)
    for a, b in zip(m1.params.arrays(), m2.params.arrays()):
        assert np.array_equal(a, b)


def test_train_smoothed_trace_ascends():
    # disjoint window-100 means over the first half of training climb
    rng = np.random.default_rng(7)
    n = 1500
    d = Dataset(
        numeric=rng.standard_normal((n, 1)),
        boolean=np.zeros((n, 0)),
        categorical=np.zeros((n, 0), dtype=np.int64),
        time=rng.exponential(2.0, n).clip(0.01, 20.0),
        event_type=np.ones(n, dtype=np.int64),
        event=np.ones(n, dtype=np.int64),
        event_count=1,
    )
    bases = (make_basis("linear", (0.0, 4.0, 8.0, 12.0, 16.0, 20.0)),)
    spec = NetworkSpec(numeric_inputs=1, hidden_widths=(4,), output_count=6, hidden_dropout=0.0)
    config = TrainConfig(iterations=800, batch_size=128, seed=11)
    _, trace = train("dh", spec, bases, d, config)
    blocks = trace[:400].reshape(4, 100).mean(axis=1)
    assert np.all(np.diff(blocks) >= 0.0)


# --- Kaplan-Meier ----------------------------------------------------------


def test_kaplan_meier_hand_example():
    d = simple_dataset([1.0, 2.0, 3.0], [1, 0, 1])
    km = kaplan_meier(d)
    assert km(0.5) == 1.0
    assert km(1.0) == pytest.approx(2.0 / 3.0, abs=1e-15)
    assert km(2.5) == pytest.approx(2.0 / 3.0, abs=1e-15)
    assert km(3.0) == 0.0


def test_kaplan_meier_all_censored_and_single_event():
    assert kaplan_meier(simple_dataset([1.0, 2.0], [0, 0]))(5.0) == 1.0
    km = kaplan_meier(simple_dataset([2.0], [1]))
    assert km(1.9) == 1.0 and km(2.0) == 0.0


def test_kaplan_meier_event_type_filter():
    d = simple_dataset([1.0, 2.0], [1, 1], etypes=[1, 2], event_count=2)
    km1 = kaplan_meier(d, event_type=1)
    assert km1(1.0) == pytest.approx(0.5)
    assert km1(2.0) == pytest.approx(0.5)  # type-2 event only shrinks the risk set


def test_kaplan_meier_matches_ph_composition_tie_free():
    rng = np.random.default_rng(12)
    times = rng.uniform(0.5, 9.5, 80)
    events = (rng.uniform(size=80) < 0.5).astype(int)
    if events.sum() == 0:
        events[0] = 1
    d = simple_dataset(times, events)
    m = zero_model(PhMnnModel)
    base = kalbfleisch_prentice_baseline(m, d)[0]
    km = kaplan_meier(d)
    for t in np.linspace(0.0, 10.0, 40):
        assert abs(np.exp(-base.step(t)) - km(t)) < 1e-12
