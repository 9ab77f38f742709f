"""Real-data evaluation: CSV ingestion, candidate construction, repeated holdout.

The design matrix built from a :class:`TabularSource` always has an
intercept in column 0 followed by the covariates in file order; every
candidate model contains the intercept.
"""

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .criteria import LABELS, CriterionConfig, canonical_method, compute_weights
from .exceptions import (
    BenchmarkAborted,
    ConstantColumn,
    MissingResponse,
    ModelAveragingError,
    ParseError,
)
from .model_space import Dataset, ModelSpec, build_criterion_matrices, fit_models, model_predictions
from .tuning import TuningConfig, tuning_average

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "."})
INTERCEPT_TOKENS = frozenset({"intercept", "(intercept)", "const", "1"})
MAX_FAILURE_RATE = 0.01


class ConstantColumnWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TabularSource:
    covariate_names: tuple
    response_name: str
    X: np.ndarray
    y: np.ndarray
    rejected_rows: int = 0

    @property
    def n_rows(self) -> int:
        return self.y.shape[0]

    def design(self) -> np.ndarray:
        return np.column_stack([np.ones(self.n_rows), self.X])

    def dataset(self) -> Dataset:
        return Dataset(self.design(), self.y)


def ingest_csv(path, response_name: str, delimiter: str = ",") -> TabularSource:
    """Read a delimited file with a header row.

    All non-response columns are covariates and must be numeric. Rows with a
    missing cell are dropped and counted in ``rejected_rows``.

    Raises
    ------
    MissingResponse
        ``response_name`` is not in the header.
    ParseError
        A cell is non-numeric or a row has the wrong number of fields; the
        message names the line and column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1) from None
        if response_name not in header:
            raise MissingResponse(f"response column {response_name!r} not in header {header}")
        rows, rejected = [], 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{line_no}: expected {len(header)} fields, "
                                 f"got {len(row)}", line=line_no)
            cells = [c.strip() for c in row]
            if any(c.lower() in MISSING_TOKENS for c in cells):
                rejected += 1
                continue
            values = []
            for col, cell in zip(header, cells):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}:{line_no}: non-numeric value {cell!r} in "
                                     f"column {col!r}", line=line_no, column=col) from None
            rows.append(values)
    if rejected:
        warnings.warn(f"{path}: dropped {rejected} rows with missing values")
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    j = header.index(response_name)
    cov = [h for h in header if h != response_name]
    X = np.delete(data, j, axis=1)
    return TabularSource(tuple(cov), response_name, X, data[:, j], rejected)


def rank_by_correlation(ts: TabularSource) -> list:
    """Nested specs over the covariates ordered by ``|corr(x, y)|``, largest first.

    Spec ``m`` holds the intercept (column 0) and the top ``m - 1``
    covariates. Constant covariates have no correlation; they are ranked
    last and reported with a :class:`ConstantColumnWarning`.
    """
    if ts.X.shape[1] < 1:
        raise ValueError("need at least one covariate")
    yc = ts.y - ts.y.mean()
    if not np.any(np.abs(yc) > 0):
        raise ConstantColumn(f"response {ts.response_name!r} is constant")
    Xc = ts.X - ts.X.mean(axis=0)
    sx = np.sqrt(np.sum(Xc ** 2, axis=0))
    constant = sx == 0
    corr = np.zeros(ts.X.shape[1])
    ok = ~constant
    corr[ok] = np.abs(Xc[:, ok].T @ yc) / (sx[ok] * np.sqrt(yc @ yc))
    if constant.any():
        names = [ts.covariate_names[j] for j in np.flatnonzero(constant)]
        warnings.warn(f"constant covariates ranked last: {names}", ConstantColumnWarning)
    # Sort key: constant columns last, then |corr| descending, then file order.
    order = sorted(range(corr.size), key=lambda j: (constant[j], -corr[j], j))
    return [ModelSpec((0,) + tuple(1 + j for j in order[: m - 1]))
            for m in range(1, corr.size + 2)]


def correlation_order(ts: TabularSource) -> list:
    """Covariate names in the order used by :func:`rank_by_correlation`."""
    full = rank_by_correlation(ts)[-1].indices[1:]
    return [ts.covariate_names[i - 1] for i in full]


def read_model_list(path, ts: TabularSource) -> list:
    """Parse a model-list file: one model per line, comma-separated column names.

    Blank lines and ``#`` comments are skipped. The intercept is always
    included; an explicit intercept token is accepted and ignored.
    """
    lookup = {name: j + 1 for j, name in enumerate(ts.covariate_names)}
    specs = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            idx = [0]
            for tok in (t.strip() for t in line.split(",")):
                if not tok or tok.lower() in INTERCEPT_TOKENS:
                    continue
                if tok not in lookup:
                    raise ParseError(f"{path}:{line_no}: unknown column {tok!r}",
                                     line=line_no, column=tok)
                idx.append(lookup[tok])
            specs.append(ModelSpec(tuple(idx)))
    if not specs:
        raise ParseError(f"{path}: no models listed")
    return specs


@dataclass(frozen=True)
class EvalProtocol:
    n_train: int
    reps: int = 200
    seed: int = 0
    case: str = "nested_by_correlation"
    model_list: str = None
    sigma2: object = "largest_model"
    grid_size: int = 100
    folds: int = 10
    keep: int = 50

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.case not in ("nested_by_correlation", "model_list"):
            raise ValueError(f"unknown case {self.case!r}")
        if self.case == "model_list" and not self.model_list:
            raise ValueError("case 'model_list' needs a model_list path")


@dataclass
class MethodTable:
    methods: tuple
    records: np.ndarray   # (reps, methods) holdout MSE
    reps: np.ndarray
    failures: list

    @property
    def mean(self) -> dict:
        # column-by-column so the value is reproducible from the written records
        return {m: float(np.mean(self.records[:, j].copy())) for j, m in enumerate(self.methods)}

    @property
    def median(self) -> dict:
        return {m: float(np.median(self.records[:, j])) for j, m in enumerate(self.methods)}

    @property
    def bpr(self) -> dict:
        return {m: float(v) for m, v in zip(self.methods, best_performance_rate(self.records))}

    def rows(self) -> list:
        mean, median, bpr = self.mean, self.median, self.bpr
        return [{"method": LABELS[m], "mean": mean[m], "median": median[m], "bpr": bpr[m]}
                for m in self.methods]


def best_performance_rate(records: np.ndarray) -> np.ndarray:
    """Share of replications in which each column attains the row minimum;
    exact ties split the credit equally."""
    records = np.asarray(records, dtype=float)
    wins = records == records.min(axis=1, keepdims=True)
    credit = wins / wins.sum(axis=1, keepdims=True)
    return credit.mean(axis=0)


def split_indices(n_rows: int, n_train: int, seed, rep: int):
    """Random train/test partition for replication ``rep``."""
    if not 0 < n_train < n_rows:
        raise ValueError(f"n_train must be in (0, {n_rows}), got {n_train}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))
    perm = rng.permutation(n_rows)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _weights(method, ds, specs, cm, protocol, seed):
    if method in ("RMMA", "RJMA"):
        cfg = TuningConfig(grid_size=protocol.grid_size, folds=protocol.folds,
                           keep=protocol.keep, seed=seed, criterion=method,
                           sigma2=protocol.sigma2)
        return tuning_average(ds, specs, cfg).final_weights.w
    return compute_weights(CriterionConfig(method), cm, ds.y).w


def run_real_eval(ts: TabularSource, specs, protocol: EvalProtocol, methods) -> MethodTable:
    """Repeated random holdout evaluation of each method.

    Raises
    ------
    BenchmarkAborted
        If more than 1% of replications fail.
    """
    methods = tuple(canonical_method(m) for m in methods)
    full = ts.dataset()
    out, reps, failures = [], [], []
    for r in range(protocol.reps):
        train, test = split_indices(full.n, protocol.n_train, protocol.seed, r)
        try:
            ds = full.subset(train)
            fits = fit_models(ds, specs)
            cm = build_criterion_matrices(ds, specs, protocol.sigma2, fits=fits)
            gamma = model_predictions(full.X[test], specs, fits)
            tune_seed = int(np.random.SeedSequence(protocol.seed, spawn_key=(r, 1))
                            .generate_state(1)[0])
            row = []
            for m in methods:
                w = _weights(m, ds, specs, cm, protocol, tune_seed)
                row.append(float(np.mean((full.y[test] - gamma @ w) ** 2)))
        except ModelAveragingError as exc:
            failures.append({"rep": r, "error": f"{type(exc).__name__}: {exc}"})
            continue
        out.append(row)
        reps.append(r)
    if len(failures) > MAX_FAILURE_RATE * protocol.reps:
        raise BenchmarkAborted(f"{len(failures)} of {protocol.reps} replications failed; "
                               f"first: {failures[0]['error']}", failures)
    return MethodTable(methods, np.array(out).reshape(len(out), len(methods)),
                       np.array(reps), failures)


def write_records_csv(table: MethodTable, path) -> None:
    """Long format (method, rep, mse); also serves as box-plot input."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "rep", "mse"])
        for i, rep in enumerate(table.reps):
            for j, m in enumerate(table.methods):
                w.writerow([LABELS[m], int(rep), repr(float(table.records[i, j]))])


def write_table_csv(table: MethodTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "mean", "median", "bpr"])
        for row in table.rows():
            w.writerow([row["method"], repr(row["mean"]), repr(row["median"]), repr(row["bpr"])])


# --- wage1-shaped data --------------------------------------------------------

WAGE1_DUMMIES = ("nonwhite", "female", "married", "numdep", "smsa", "northcen", "south",
                 "west", "construc", "ndurman", "trcommpu", "trade", "services",
                 "profserv", "profocc", "clerocc", "servocc")
WAGE1_CONTINUOUS = ("educ", "exper", "tenure")
WAGE1_INTERACTIONS = tuple(f"{a}_{b}" for a in ("nonwhite", "female", "married")
                           for b in WAGE1_CONTINUOUS)
WAGE1_COVARIATES = WAGE1_DUMMIES + WAGE1_CONTINUOUS + WAGE1_INTERACTIONS
WAGE1_RESPONSE = "lwage"


def wage1_source(path) -> TabularSource:
    """Load a wage1 file and keep the 29 covariates used in the analysis.

    Interaction columns named ``<dummy>_<var>`` are derived when absent;
    other columns (``wage``, ``expersq``, ...) are dropped.
    """
    raw = ingest_csv(path, WAGE1_RESPONSE)
    cols = {name: raw.X[:, j] for j, name in enumerate(raw.covariate_names)}
    missing = [c for c in WAGE1_DUMMIES + WAGE1_CONTINUOUS if c not in cols]
    if missing:
        raise ParseError(f"{path}: wage1 columns missing: {missing}")
    for name in WAGE1_INTERACTIONS:
        if name not in cols:
            a, b = name.split("_")
            cols[name] = cols[a] * cols[b]
    X = np.column_stack([cols[c] for c in WAGE1_COVARIATES])
    return TabularSource(WAGE1_COVARIATES, WAGE1_RESPONSE, X, raw.y, raw.rejected_rows)


def make_wage_like(n: int = 526, seed: int = 0) -> TabularSource:
    """Synthetic data with the wage1 column layout (not the real survey values)."""
    rng = np.random.default_rng(seed)
    rates = np.linspace(0.25, 0.5, len(WAGE1_DUMMIES))
    D = (rng.random((n, len(WAGE1_DUMMIES))) < rates).astype(float)
    D[:, WAGE1_DUMMIES.index("numdep")] = rng.poisson(1.0, n)
    educ = np.clip(np.round(rng.normal(12.5, 2.8, n)), 0, 18)
    exper = np.clip(np.round(rng.gamma(2.0, 8.5, n)), 1, 51)
    tenure = np.minimum(np.round(rng.exponential(6.0, n)) + 1, exper)
    C = np.column_stack([educ, exper, tenure])
    inter = np.column_stack([D[:, WAGE1_DUMMIES.index(a)] * C[:, j]
                             for a in ("nonwhite", "female", "married")
                             for j in range(3)])
    X = np.column_stack([D, C, inter])
    beta = np.zeros(X.shape[1])
    beta[WAGE1_COVARIATES.index("educ")] = 0.08
    beta[WAGE1_COVARIATES.index("exper")] = 0.008
    beta[WAGE1_COVARIATES.index("tenure")] = 0.02
    beta[WAGE1_COVARIATES.index("female")] = -0.25
    beta[WAGE1_COVARIATES.index("married")] = 0.1
    beta[WAGE1_COVARIATES.index("smsa")] = 0.15
    beta[WAGE1_COVARIATES.index("profocc")] = 0.2
    beta[WAGE1_COVARIATES.index("female_tenure")] = -0.01
    y = 0.4 + X @ beta + rng.normal(0.0, 0.4, n)
    return TabularSource(WAGE1_COVARIATES, WAGE1_RESPONSE, X, y)


def write_csv(ts: TabularSource, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(ts.covariate_names) + [ts.response_name])
        for xi, yi in zip(ts.X, ts.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
