"""End-to-end audit runs: baseline, split, forest, ALCD table, TRIP, PFI."""

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import alcd, data, importance, simgen, spca, trip
from . import forest as forest_mod
from .data import BASELINE_NAME, Dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AuditConfig:
    hyperparams: forest_mod.Hyperparams = field(default_factory=forest_mod.Hyperparams)
    train_fraction: float = 0.75
    repetitions: int = 25
    n_perm: int = trip.DEFAULT_PERMUTATIONS
    metric_exponent: float = 2.0
    standardize: bool = False
    alternative: str = "two-sided"
    relearn: tuple = ()

    def to_dict(self):
        d = asdict(self)
        d["relearn"] = list(self.relearn)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hyperparams"] = forest_mod.Hyperparams(**d.get("hyperparams", {}))
        d["relearn"] = tuple(d.get("relearn", ()))
        return cls(**d)


@dataclass(frozen=True, eq=False)
class RunResult:
    seed: int
    train: Dataset
    test: Dataset
    forest: forest_mod.Forest
    table: alcd.AlcdTable
    trip: trip.TripResult
    importance: importance.ImportanceReport

    @property
    def test_error(self):
        return self.importance.base_error


def attach_baseline(train, test, seed):
    """Add one baseline column drawn jointly for the stacked train and test rows."""
    both = Dataset(np.vstack([train.features, test.features]),
                   np.concatenate([train.target, test.target]), train.feature_names,
                   train.task, train.classes)
    both = data.add_baseline(both, seed)
    return both.take(np.arange(train.n)), both.take(np.arange(train.n, both.n))


def audit_split(train, test, config, seed):
    """Audit a forest fitted on ``train``; ALCD and PFI are evaluated on ``test``.

    Both splits must already carry the baseline column.
    """
    if config.standardize:
        train, scaling = data.standardize(train)
        test = scaling.apply(test)
    fitted = forest_mod.fit(train, config.hyperparams, seed)
    metric = alcd.Metric(config.metric_exponent)
    table = alcd.build_alcd_table(fitted, test, train.features, config.repetitions, metric, seed)
    result = trip.run_trip(table, config.n_perm, seed, config.alternative)
    relearn = {}
    for name in config.relearn:
        relearn[name] = importance.relearn_importance(train, test, name, config.hyperparams,
                                                      seed, reference=fitted)
    report = importance.importance_report(fitted, test, config.repetitions, seed, relearn)
    return RunResult(seed, train, test, fitted, table, result, report)


def audit_dataset(ds, config, seed):
    """Split ``ds``, add the baseline, and audit."""
    tr_idx, te_idx = data.split_indices(ds.n, data.SplitSpec(config.train_fraction, seed))
    train, test = attach_baseline(ds.take(tr_idx), ds.take(te_idx), seed)
    return audit_split(train, test, config, seed)


def quartiles(values):
    q1, q2, q3 = np.percentile(values, [25, 50, 75])
    return {"q1": float(q1), "median": float(q2), "q3": float(q3)}


def pooled_pvalues(results):
    """Feature name -> all p-values across runs and repetitions."""
    names = results[0].trip.feature_names
    return {name: np.concatenate([r.trip.p_values(name) for r in results]) for name in names}


def summarize(results):
    """Per-feature p-value quartiles and importance summaries across runs."""
    names = results[0].trip.feature_names
    pooled = pooled_pvalues(results)
    out = {"runs": len(results), "seeds": [r.seed for r in results], "features": {}}
    for name in names:
        k = results[0].importance.feature_names.index(name)
        pfi_means = np.array([r.importance.pfi[k].mean() for r in results])
        entry = {"p_value": quartiles(pooled[name]),
                 "pfi_mean": float(pfi_means.mean()),
                 "pfi_run_means": pfi_means.tolist()}
        relearned = [r.importance.relearn[name] for r in results if name in r.importance.relearn]
        if relearned:
            entry["relearn"] = [float(v) for v in relearned]
        out["features"][name] = entry
    b = results[0].importance.feature_names.index(BASELINE_NAME)
    out["baseline_pfi_mean"] = float(np.mean([r.importance.pfi[b].mean() for r in results]))
    out["test_error"] = [r.test_error for r in results]
    return out


# curse-of-dimensionality sweep ---------------------------------------------

def cod_cell(spec, exponents, config, seed):
    """Mean p-values of dependent and independent features for one dataset.

    One forest is fitted per dataset and reused for every metric exponent.

    Returns
    -------
    dict exponent -> (mean_p_dependent, mean_p_independent); NaN when a
    group is empty.
    """
    ds = simgen.generate(spec.with_seed(seed))
    tr_idx, te_idx = data.split_indices(ds.n, data.SplitSpec(config.train_fraction, seed))
    train, test = attach_baseline(ds.take(tr_idx), ds.take(te_idx), seed)
    if config.standardize:
        train, scaling = data.standardize(train)
        test = scaling.apply(test)
    fitted = forest_mod.fit(train, config.hyperparams, seed)
    dependent = set(spec.dependent_features())
    out = {}
    for e in exponents:
        table = alcd.build_alcd_table(fitted, test, train.features, config.repetitions,
                                      alcd.Metric(e), seed)
        res = trip.run_trip(table, config.n_perm, seed, config.alternative)
        dep = [res.p_values(n).mean() for n in res.feature_names if n in dependent]
        ind = [res.p_values(n).mean() for n in res.feature_names if n not in dependent]
        out[e] = (float(np.mean(dep)) if dep else float("nan"),
                  float(np.mean(ind)) if ind else float("nan"))
    return out


def cod_sweep(specs, exponents, config, seeds):
    """Rows ``(n, p, exponent, mean_p_dependent, mean_p_independent)`` averaged over seeds."""
    rows = []
    for spec in specs:
        cells = [cod_cell(spec, exponents, config, s) for s in seeds]
        for e in exponents:
            dep = np.array([c[e][0] for c in cells])
            ind = np.array([c[e][1] for c in cells])
            rows.append((spec.n, spec.p, float(e),
                         float(np.mean(dep)) if not np.all(np.isnan(dep)) else float("nan"),
                         float(np.mean(ind)) if not np.all(np.isnan(ind)) else float("nan")))
        log.info("cod cell n=%d p=%d done", spec.n, spec.p)
    return rows


# sparse PCA front end --------------------------------------------------------

def top_variance_columns(train, fraction):
    """Indices of the ``fraction`` of columns with the largest training variance."""
    k = max(1, int(round(fraction * train.p)))
    var = train.features.var(axis=0, ddof=1)
    return np.sort(np.argsort(-var, kind="stable")[:k])


@dataclass(frozen=True, eq=False)
class SpcaRun:
    model: spca.SpcaModel
    lam1: float
    audit: RunResult
    component_corr: np.ndarray
    kept_columns: np.ndarray


def spca_audit(ds, config, seed, R, lam2=0.0, target=spca.SINGLE, lam1_grid=None,
               top_fraction=None, train_size=None, **fit_kw):
    """Sparse PCA on the training split, then audit the component scores.

    ``train_size`` (a row count) overrides ``config.train_fraction``.
    ``top_fraction`` keeps only that share of highest-variance columns,
    chosen on the training split. Remaining keywords go to :func:`spca.fit`.
    """
    # half-row offset so floor(fraction * n) lands exactly on train_size
    fraction = (train_size + 0.5) / ds.n if train_size else config.train_fraction
    tr_idx, te_idx = data.split_indices(ds.n, data.SplitSpec(fraction, seed))
    train, test = ds.take(tr_idx), ds.take(te_idx)
    keep = np.arange(ds.p)
    if top_fraction is not None:
        keep = top_variance_columns(train, top_fraction)
        train = train.with_features(train.features[:, keep],
                                    [train.feature_names[k] for k in keep])
        test = test.with_features(test.features[:, keep], train.feature_names)

    mean = train.features.mean(axis=0)
    lam1, model = spca.sparsity_path(train.features - mean, R, lam2, lam1_grid, target, **fit_kw)
    model = replace(model, mean=mean)
    names = [f"PC{r + 1}" for r in range(R)]
    comp_train = Dataset(model.scores(train.features), train.target, names, train.task,
                         train.classes)
    comp_test = Dataset(model.scores(test.features), test.target, names, test.task,
                        test.classes)
    # an all-zero component has constant scores; its correlations are NaN
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(comp_test.features, rowvar=False)
    comp_train, comp_test = attach_baseline(comp_train, comp_test, seed)
    audit = audit_split(comp_train, comp_test, config, seed)
    return SpcaRun(model, lam1, audit, np.atleast_2d(corr), keep)
