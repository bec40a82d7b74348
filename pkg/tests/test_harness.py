import csv

import numpy as np
import pytest

from survunc.harness import (
    EvalContext,
    ProtocolError,
    discard_order,
    misprediction_report,
    n_discarded,
    ood_from_scores,
    ood_report,
    selective_prediction,
    write_mispredict,
    write_ood,
    write_selective,
)
from survunc.meta import SurvUnc
from survunc.metrics import pearson, per_sample_ibs
from survunc.models.serialization import model_to_dict


class Constant:
    def score(self, X):
        return np.zeros(np.asarray(X).shape[0])


@pytest.fixture(scope="module")
def ctx(cox_small, synth_small):
    _, _, _, _, test = synth_small
    return EvalContext.build(cox_small, test)


def _oracle_scores(ctx):
    # precomputed scores are aligned with the uncensored test subjects
    return per_sample_ibs(ctx.surv, ctx.grid, ctx.time, ctx.event, ctx.eval_times, ctx.censor)


def test_discard_order_and_counts():
    np.testing.assert_array_equal(discard_order([0.2, 0.9, 0.2, 0.5]), [1, 3, 0, 2])
    assert [n_discarded(p, 10) for p in (0.0, 0.1, 0.3, 0.5)] == [0, 1, 3, 5]
    assert n_discarded(0.3, 7) == 2


def test_selective_retained_counts(cox_small, synth_small, ctx):
    _, _, _, _, test = synth_small
    pts = selective_prediction(cox_small, Constant(), test, b=0, context=ctx)
    n = ctx.index.size
    assert [p.n_retained for p in pts] == [n - n_discarded(p.discard_pct, n) for p in pts]
    assert pts[0].c_td_point == ctx.c_td() and pts[0].ibs_point == ctx.ibs()
    with pytest.raises(ProtocolError):
        selective_prediction(cox_small, Constant(), test, discard_pcts=(1.0,), b=0, context=ctx)


def test_constant_quantifier_leaves_metrics_unchanged(cox_small, synth_small, ctx):
    _, _, _, _, test = synth_small
    pts = selective_prediction(cox_small, Constant(), test, (0.0, 0.3, 0.5), b=30, seed=1, context=ctx)
    for p in pts[1:]:
        for name in ("c_td", "ibs"):
            a, b = getattr(pts[0], name), getattr(p, name)
            assert abs(a.mean - b.mean) <= 2 * np.sqrt(a.std ** 2 + b.std ** 2)


def test_oracle_quantifier_ibs_non_increasing(cox_small, synth_small, ctx):
    _, _, _, _, test = synth_small
    pts = selective_prediction(cox_small, _oracle_scores(ctx), test, b=0, context=ctx)
    ibs = [p.ibs_point for p in pts]
    assert np.all(np.diff(ibs) <= 1e-12)


def test_misprediction_oracle_and_random(cox_small, synth_small, ctx):
    _, _, _, _, test = synth_small
    psi = _oracle_scores(ctx)
    rep = misprediction_report(cox_small, psi, test, context=ctx)
    assert rep.rho_ibs == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(rep.scatter[:, 2], psi)
    rng = np.random.default_rng(0)
    psi_big = rng.exponential(size=2000)
    assert max(abs(pearson(rng.random(2000), psi_big)) for _ in range(20)) < 0.1
    rep = misprediction_report(cox_small, rng.random(ctx.index.size), test, context=ctx)
    assert abs(rep.rho_ibs) < 0.15
    with pytest.raises(ProtocolError):
        misprediction_report(cox_small, rng.random(test.n), test, context=ctx)
    const = misprediction_report(cox_small, Constant(), test, context=ctx)
    assert const.rho_ibs is None and const.notes


def test_ood_identity_and_separation():
    rng = np.random.default_rng(1)
    s = rng.random(300)
    rep = ood_from_scores(s, s.copy())
    assert rep.auroc == 0.5
    assert rep.ind_counts.sum() == 300 and rep.edges.size == 31
    rep = ood_from_scores(s, s + 2.0)
    assert rep.auroc == 1.0 and rep.auprc == 1.0


def test_ood_report_dimension_check(cox_small, synth_small):
    _, _, train, _, test = synth_small
    q = SurvUnc.fit(train, cox_small, "rf", k=10, seed=0, n_estimators=5)
    assert ood_report(q, test.X, test.X).auroc == 0.5
    with pytest.raises(ProtocolError):
        ood_report(q, test.X, test.X[:, :3])
    with pytest.raises(ProtocolError):
        ood_report(q, test.X[:0], test.X)


def test_protocols_do_not_mutate(cox_small, synth_small):
    _, _, train, _, test = synth_small
    q = SurvUnc.fit(train, cox_small, "rf", k=10, seed=0, n_estimators=5)
    before = (model_to_dict(cox_small), q.meta_model.to_dict())
    selective_prediction(cox_small, q, test, (0.0, 0.5), b=3)
    misprediction_report(cox_small, q, test)
    ood_report(q, test.X, test.X + 1)
    assert (model_to_dict(cox_small), q.meta_model.to_dict()) == before


def test_writers(tmp_path, cox_small, synth_small, ctx):
    _, _, _, _, test = synth_small
    pts = selective_prediction(cox_small, Constant(), test, (0.0, 0.2), b=4, context=ctx)
    write_selective(pts, tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "selective.csv")))
    assert [float(r["discard_pct"]) for r in rows] == [0.0, 0.2]
    assert float(rows[0]["c_td"]) == pts[0].c_td_point
    reps = list(csv.DictReader(open(tmp_path / "selective_replicates.csv")))
    assert len(reps) == 2 * 2 * 4
    write_mispredict(misprediction_report(cox_small, Constant(), test, context=ctx), tmp_path)
    rows = {r["metric"]: r for r in csv.DictReader(open(tmp_path / "mispredict.csv"))}
    assert rows["rho_ibs"]["value"] == ""
    assert len(list(csv.DictReader(open(tmp_path / "scatter.csv")))) == ctx.index.size
    write_ood(ood_from_scores(np.arange(5.0), np.arange(5.0) + 3), tmp_path)
    rows = {r["metric"]: float(r["value"]) for r in csv.DictReader(open(tmp_path / "ood.csv"))}
    assert rows["auroc"] == pytest.approx(0.92)
    assert len(list(csv.DictReader(open(tmp_path / "hist.csv")))) == 30
