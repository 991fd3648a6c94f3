import json
import time

import numpy as np
import pytest

from fwda.classifier import FitConfig, _Scorer, fit, fwda_score
from fwda.data_io import SyntheticSpec, generate_synthetic, save_csv, train_test_split
from fwda.errors import EmptyInput, FwdaError, InvalidParameter, ShapeError
from fwda.evaluation import (
    ExperimentConfig,
    MethodSpec,
    adaptive_reference_score,
    convergence_study,
    derive_seed,
    hoeffding_bound,
    run_experiment,
    score_metrics,
    timing_comparison,
)
from fwda.wishart import sample


def _model(dim=3, n=40, n_test=30, sep=2.0, seed=0, **kw):
    task = generate_synthetic(SyntheticSpec(dim, n + n_test, sep, seed))
    train, test = train_test_split(task.data, n, n_test, seed)
    return fit(train, FitConfig(**kw)), test


def test_metrics_examples():
    m = score_metrics([1, -1, 1], [1, -1, 1])
    assert (m.accuracy, m.f1) == (1.0, 1.0)
    m = score_metrics([1, 1, 1, -1], [1, 1, -1, 1])
    assert (m.tp, m.fp, m.fn, m.tn) == (2, 1, 1, 0)
    assert m.accuracy == 0.5 and m.f1 == pytest.approx(2 / 3)
    assert score_metrics([-1, -1], [1, -1]).f1 == 0.0
    assert score_metrics([-1, -1], [-1, -1]).f1 == 0.0


def test_metrics_errors():
    with pytest.raises(ShapeError):
        score_metrics([1], [1, -1])
    with pytest.raises(EmptyInput):
        score_metrics([], [])


def test_metrics_identities():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pred, act = rng.choice([-1, 1], size=(2, int(rng.integers(1, 30))))
        m = score_metrics(pred, act)
        assert m.accuracy == (m.tp + m.tn) / (m.tp + m.fp + m.tn + m.fn)
        denom = 2 * m.tp + m.fp + m.fn
        assert m.f1 == (2 * m.tp / denom if denom else 0.0)


def test_derive_seed_deterministic():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(2, 1)
    assert 0 <= derive_seed(0) < 2**64


def test_adaptive_reference_range_and_single_member():
    model, test = _model()
    for x in test.features[:10]:
        assert -1.0 <= adaptive_reference_score(x, model, 500, 3) <= 1.0
        single = adaptive_reference_score(x, model, 1, 4)
        assert single in (-1.0, 1.0)
        assert np.sign(single) == fwda_score(x, model, sample(model.wishart, 4, 1)).label


def test_convergence_self_reference_zero():
    model, test = _model()
    seed = 99
    report = convergence_study(model, test.features[:5], [10, 50], reference_m=50, seeds=[seed], reference_seed=seed)
    assert report.errors[-1] == 0.0


def test_convergence_report_fields():
    model, test = _model()
    report = convergence_study(model, test.features[:10], [10, 40, 160], seeds=range(5))
    assert report.reference_m == 3200
    assert report.m_grid == [10, 40, 160]
    assert all(e >= 0 for e in report.errors)
    assert np.isfinite(report.fitted_slope) and report.empirical_variance > 0
    json.dumps(report.to_dict())


def test_convergence_median_non_increasing():
    model, test = _model(dim=3)
    report = convergence_study(model, test.features[:20], [10, 40, 160, 640], seeds=range(10))
    assert all(b <= a for a, b in zip(report.median_errors, report.median_errors[1:]))


def test_convergence_bad_grid():
    model, test = _model()
    for grid in ([10], [10, 10], [40, 10], [0, 10]):
        with pytest.raises(InvalidParameter):
            convergence_study(model, test.features[:2], grid)
    with pytest.raises(ShapeError):
        convergence_study(model, np.ones((2, 7)), [10, 20])


def test_hoeffding_envelope_clamped():
    model, test = _model(dim=3)
    report = convergence_study(model, test.features[:20], [10, 40, 160, 640], seeds=range(20), clamp=True)
    errs = np.array(report.errors_by_seed)
    bounds = np.array([hoeffding_bound(m) for m in report.m_grid])[:, None]
    assert report.clamped
    assert np.mean(errs <= bounds) >= 0.95


def test_sign_disagreement_shrinks():
    model, test = _model(dim=2)
    report = convergence_study(model, test.features, [10, 100, 1000], seeds=range(10))
    d = report.sign_disagreement
    assert d[-1] <= d[0]


def test_method_spec_display():
    assert MethodSpec("fwda", 1.0, 200).display == "fwda(200,1)"
    assert MethodSpec("lda_pinv").display == "lda_pinv"
    assert MethodSpec("fwda", 1.0, 200, label="x").display == "x"


def test_experiment_config_validation():
    with pytest.raises(InvalidParameter):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(InvalidParameter):
        ExperimentConfig(methods=["nope"]).method_specs()
    with pytest.raises(InvalidParameter):
        ExperimentConfig(methods=["fwda", "fwda"]).method_specs()
    cfg = ExperimentConfig()
    assert cfg.repeats == 30 and cfg.test_per_class == 200


def _small_config(**kw):
    base = dict(train_sizes=[10, 20], test_per_class=20, methods=["fwda", "lda_pinv", "lda_shrinkage"],
                repeats=2, dim=5, ensemble_size=30, master_seed=7)
    base.update(kw)
    return ExperimentConfig(**base)


def test_run_experiment_shape_and_determinism(tmp_path):
    cfg = _small_config()
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert a.rows == b.rows and a.summary == b.summary
    assert len(a.rows) == 2 * 3 * 2
    assert a.config["master_seed"] == 7
    a.write_json(tmp_path / "r.json")
    a.write_csv(tmp_path / "r.csv")
    assert json.loads((tmp_path / "r.json").read_text())["config"]["repeats"] == 2
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 13
    assert 0.0 <= a.mean_accuracy("lda_pinv", 10) <= 1.0


def test_run_experiment_csv_source(tmp_path):
    task = generate_synthetic(SyntheticSpec(4, 60, 2.0, seed=1))
    save_csv(task.data, tmp_path / "d.csv")
    report = run_experiment(_small_config(csv=str(tmp_path / "d.csv"), train_sizes=[15]))
    assert len(report.rows) == 2 * 3


def test_run_experiment_error_context(tmp_path):
    save_csv(generate_synthetic(SyntheticSpec(4, 20, 2.0, seed=1)).data, tmp_path / "d.csv")
    with pytest.raises(FwdaError) as err:
        run_experiment(_small_config(csv=str(tmp_path / "d.csv"), train_sizes=[15], repeats=1))
    assert "repeat 0" in str(err.value)


def test_timing_comparison_fields():
    model, test = _model(dim=5, ensemble_size=50)
    out = timing_comparison(model, test.features[:20])
    assert out["n_points"] == 20 and out["oracle_m"] == 50
    assert out["lazy_total_seconds"] > 0 and out["adaptive_total_seconds"] > 0
    assert 0.0 <= out["label_agreement"] <= 1.0


def test_lazy_cost_is_stateless():
    model, _ = _model(dim=20, n=40, ensemble_size=200)
    xs = generate_synthetic(SyntheticSpec(20, 200, 2.0, seed=5)).data.features
    scorer = _Scorer(model, model.ensemble())
    halves = []
    for chunk in (xs[:200], xs[200:]):
        best = np.inf
        for _ in range(3):
            start = time.perf_counter()
            for x in chunk:
                scorer.score(x)
            best = min(best, time.perf_counter() - start)
        halves.append(best)
    assert abs(halves[1] - halves[0]) <= 0.5 * halves[0]


def test_adaptive_cost_linear_in_oracle_m():
    model, test = _model(dim=10, n=30, ensemble_size=100)
    xs = test.features[:20]

    def best(m):
        return min(timing_comparison(model, xs, oracle_m=m)["adaptive_total_seconds"] for _ in range(3))

    ratio = best(2048) / best(1024)
    assert 1.5 <= ratio <= 2.5
