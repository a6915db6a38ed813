"""End-to-end acceptance checks.

Each criterion records a PASS/FAIL line that is printed in the pytest terminal
summary. Runtime is roughly 15 minutes on one core.
"""

import time

import numpy as np
import pytest
from scipy import stats

from pfiaudit import data, pipeline, simgen, spca, trip
from pfiaudit.data import Dataset
from pfiaudit.forest import Hyperparams

from conftest import WINE, record

pytestmark = pytest.mark.acceptance

RUNS = 10
REPS = 25
PI = 10_000
FULL = pipeline.AuditConfig(Hyperparams(500), repetitions=REPS, n_perm=PI)


def _runs(kind, config=FULL, **spec_kw):
    out = []
    for seed in range(RUNS):
        ds = simgen.generate(simgen.GeneratorSpec(kind, seed=seed, **spec_kw))
        out.append(pipeline.audit_dataset(ds, config, seed))
    return out


def _median(pooled, names):
    return float(np.median(np.concatenate([pooled[n] for n in names])))


def _fmt(d):
    return ", ".join(f"{k}={v:.4g}" for k, v in d.items())


@pytest.fixture(scope="module")
def two_correlated_runs():
    config = pipeline.AuditConfig(Hyperparams(500), repetitions=REPS, n_perm=PI,
                                  relearn=("V1", "V7"))
    return _runs("two_correlated", config, n=500, rho=(0.75,))


def test_c1_two_correlated(two_correlated_runs):
    pooled = pipeline.pooled_pvalues(two_correlated_runs)
    med = {n: float(np.median(v)) for n, v in pooled.items()}
    ok = (max(med["V1"], med["V2"]) <= 0.005
          and min(med[f"V{j}"] for j in range(3, 9)) >= 0.5)
    record("criterion 1", ok, "median p: " + _fmt(med))
    assert ok


def test_c2_circle():
    results = _runs("circle", n=500)
    corr = [abs(np.corrcoef(np.vstack([r.train.features[:, :2], r.test.features[:, :2]]),
                            rowvar=False)[0, 1]) for r in results]
    pooled = pipeline.pooled_pvalues(results)
    med = {n: float(np.median(v)) for n, v in pooled.items()}
    ok = np.median(corr) < 0.05 and max(med["V1"], med["V2"]) <= 0.05
    record("criterion 2", ok, f"median |corr(V1,V2)|={np.median(corr):.4f} "
           f"(max {max(corr):.4f}); median p: V1={med['V1']:.4g}, V2={med['V2']:.4g}")
    assert ok


def test_c3_varied_blocks():
    results = _runs("varied_blocks", n=500, p=8, k=3, rho=(0.75, 0.25))
    pooled = pipeline.pooled_pvalues(results)
    b1, b2, ind = ["V1", "V2", "V3"], ["V4", "V5", "V6"], ["V7", "V8"]
    m1, m2, m3 = _median(pooled, b1), _median(pooled, b2), _median(pooled, ind)
    q1, q3 = np.percentile(np.concatenate([pooled[n] for n in b2]), [25, 75])
    # IQR must overlap [0.3, 0.8]; each quartile within 0.15 of its reported range
    overlaps = q1 <= 0.8 and q3 >= 0.3
    near = 0.315 - 0.15 <= q1 <= 0.343 + 0.15 and 0.692 - 0.15 <= q3 <= 0.767 + 0.15
    ok = m1 < m2 < m3 and overlaps and near
    record("criterion 3", ok, f"medians block1={m1:.4g} < block2={m2:.4g} < indep={m3:.4g}; "
           f"block2 IQR=[{q1:.3f}, {q3:.3f}]")
    assert ok


def test_c4_extrapolation_direction(two_correlated_runs):
    pfi = {n: np.array([r.importance.pfi[r.importance.feature_names.index(n)].mean()
                        for r in two_correlated_runs]) for n in ("V1", "V7")}
    rel = {n: np.array([r.importance.relearn[n] for r in two_correlated_runs])
           for n in ("V1", "V7")}
    gap7 = pfi["V7"] - rel["V7"]
    ok = (pfi["V1"].mean() > rel["V1"].mean()
          and abs(gap7.mean()) <= 2 * gap7.std(ddof=1))
    record("criterion 4", ok,
           f"V1 pfi={pfi['V1'].mean():.4f} vs relearn={rel['V1'].mean():.4f}; "
           f"V7 pfi-relearn={gap7.mean():.4f} (2 sd={2 * gap7.std(ddof=1):.4f})")
    assert ok


def test_c5_curse_of_dimensionality():
    config = pipeline.AuditConfig(Hyperparams(500), repetitions=10, n_perm=2000)
    specs = simgen.cod_suite([100], [10, 100, 250])
    rows = pipeline.cod_sweep(specs, [2.0], config, seeds=range(5))
    dep = {p: d for _, p, _, d, _ in rows}
    ok = dep[10] <= dep[100] <= dep[250] and dep[250] - dep[10] >= 0.3
    record("criterion 5", ok, "mean dependent p (n=100, exponent 2): "
           + _fmt({f"p={p}": v for p, v in dep.items()}))
    assert ok


def test_c6_monte_carlo_matches_exact():
    rng = np.random.default_rng(2024)
    hits = 0
    for case in range(100):
        m = int(rng.integers(1, 13))
        d = rng.normal(rng.normal(0, 0.5), 1, m)
        exact = trip.exact_test(d, "greater")
        _, mc = trip.permutation_test(d, PI, seed=case, alternative="greater")
        se = np.sqrt(exact * (1 - exact) / PI)
        # the +1 in numerator and denominator shifts the estimate by at most 1/(PI+1)
        hits += abs(mc - exact) <= 3 * se + 1 / (PI + 1)
    ok = hits >= 97
    record("criterion 6", ok, f"{hits}/100 Monte Carlo p-values within 3 SE of exact")
    assert ok


@pytest.mark.xfail(strict=True, reason="permuting a column barely moves the paired "
                   "statistic, so the sign-flip null is far too wide; see decisions ledger")
def test_c7_null_calibration():
    config = pipeline.AuditConfig(Hyperparams(500), repetitions=REPS, n_perm=PI)
    pvals = []
    for seed in range(8):
        rng = np.random.default_rng(seed)
        X = rng.random((500, 3))
        ds = Dataset(X, X[:, 0] + X[:, 1] + rng.normal(0, 0.1, 500), ["S1", "S2", "NOISE"])
        res = pipeline.audit_dataset(ds, config, seed)
        pvals.append(res.trip.p_values("NOISE"))
    pvals = np.concatenate(pvals)
    ks = stats.kstest(pvals, "uniform")
    q = np.percentile(pvals, [10, 25, 50, 75, 90])
    ok = ks.pvalue > 0.01
    record("criterion 7", ok, f"KS p={ks.pvalue:.3g} over {pvals.size} p-values; "
           f"deciles 10/25/50/75/90 = {np.round(q, 3).tolist()}")
    assert ok


def test_c8_spca_matches_pca():
    rng = np.random.default_rng(8)
    worst, monotone = 0.0, True
    for trial in range(20):
        X = rng.normal(size=(100, 20)) * rng.uniform(0.2, 3, 20)
        X -= X.mean(axis=0)
        R = int(rng.integers(1, 21))
        model = spca.fit(X, R)
        ev = np.sort(np.linalg.eigvalsh(X.T @ X))[::-1]
        ref = ev[R:].sum()
        got = spca.reconstruction_error(X, model.W, model.P)
        worst = max(worst, abs(got - ref) / max(ref, 1e-12 * ev.sum()))
        t = np.array(model.objective_trace)
        # rounding noise allowance relative to the total sum of squares
        monotone &= bool(np.all(np.diff(t) <= 1e-12 * np.sum(X * X)))
    ok = worst <= 1e-6 and monotone
    record("criterion 8", ok, f"max relative error {worst:.2e}; traces non-increasing: "
           f"{monotone}")
    assert ok


def test_c9_spca_pipeline():
    spec = simgen.GeneratorSpec("equal_blocks", n=150, p=150, k=25, rho=(0.75,))
    block = simgen.block_membership(150, 25)
    runs, single, one_block = [], True, True
    for seed in range(RUNS):
        run = pipeline.spca_audit(simgen.generate(spec.with_seed(seed)), FULL, seed, R=6,
                                  train_size=100)
        single &= bool(np.all(run.model.memberships() <= 1))
        one_block &= all(len(set(block[s])) == 1 for s in run.model.supports() if s.size)
        runs.append(run.audit)
    pooled = pipeline.pooled_pvalues(runs)
    q = {n: np.percentile(v, [25, 50]) for n, v in pooled.items()}
    ok = (single and one_block and all(v[0] > 0.5 for v in q.values())
          and all(0.55 <= v[1] <= 0.85 for v in q.values()))
    record("criterion 9", ok, f"single-membership={single}, one block per component="
           f"{one_block}; q1/median: "
           + ", ".join(f"{n}={v[0]:.3f}/{v[1]:.3f}" for n, v in q.items()))
    assert ok


def test_c10_wine():
    ds = data.load_csv(WINE, "cultivar", data.CLASSIFICATION)
    results = [pipeline.audit_dataset(ds, FULL, seed) for seed in range(RUNS)]
    pooled = pipeline.pooled_pvalues(results)
    flagged = ["proline", "flavanoids", "color_intensity", "alcohol"]
    other = ["proanthocyanins", "malic_acid", "ash"]
    med = {n: float(np.median(pooled[n])) for n in flagged + other}
    ok = max(med[n] for n in flagged) < min(med[n] for n in other)
    acc = 1 - np.mean([r.test_error for r in results])
    record("criterion 10", ok, "median p: " + _fmt(med) + f"; mean test accuracy {acc:.3f}")
    assert ok


def _expression_like(n=136, p=12_600, seed=0):
    """Synthetic expression matrix: a few hundred high-variance genes on latent factors."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    Z = rng.normal(size=(n, 7)) + y[:, None] * np.array([1.5, 0, 0, 0, 0, 0, 0])
    X = rng.normal(size=(n, p)) * rng.uniform(0.2, 1.0, p)
    active = rng.choice(p, 700, replace=False)
    load = rng.normal(size=(7, 700)) * (rng.random((7, 700)) < 0.3)
    X[:, active] += 2.0 * Z @ load
    names = [f"G{j}" for j in range(p)]
    return Dataset(X, y, names, data.CLASSIFICATION, ("normal", "tumor"))


def test_smoke_expression_shaped():
    start = time.perf_counter()
    ds = _expression_like()
    config = pipeline.AuditConfig(Hyperparams(500), repetitions=REPS, n_perm=PI)
    run = pipeline.spca_audit(ds, config, seed=0, R=7, target=spca.TOTAL, top_fraction=0.05,
                              train_size=102)
    elapsed = time.perf_counter() - start
    ok = (run.kept_columns.size == 630 and run.audit.train.n == 102
          and run.audit.test.n == 34 and run.audit.trip.p_value.shape == (7, REPS)
          and run.model.nonzeros() <= 630 and elapsed < 1800)
    record("smoke (136x630)", ok, f"{run.kept_columns.size} columns kept, "
           f"{run.model.nonzeros()} nonzero weights, lam1={run.lam1:.4g}, "
           f"{elapsed:.0f} s")
    assert ok
