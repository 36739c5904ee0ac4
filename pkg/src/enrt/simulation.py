"""Data generation for ENRT designs, the Monte Carlo study behind the
simulation table, and design-time sample-size curves."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import ConvergenceError, EstimabilityError, PowerUndefinedError
from .estimation import fit_gee, lemma1_cov
from .mcb import _best_of_others, mcb_min_k, mcb_test
from .model import MAXIMIZE, MINIMIZE, DesignSpec, EgoDataset, best_structure, check_direction
from .wald import wald_min_k, wald_test

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SimScenario:
    K: int
    n: int
    H: int
    p: float
    g: tuple
    zeta: tuple
    delta: tuple
    sigma_u2: float
    sigma_e2: float
    alpha: float = 0.05
    n_reps: int = 1000
    master_seed: int = 20240101
    direction: str = MAXIMIZE
    n_max: int | None = None  # network sizes uniform on n..n_max when set
    name: str = ""

    def __post_init__(self):
        for f in ("g", "zeta", "delta"):
            object.__setattr__(self, f, tuple(float(x) for x in getattr(self, f)))
        check_direction(self.direction)
        if self.K < 1 or self.n < 1 or self.H < 1:
            raise ValueError("K, n and H must be positive")
        if self.n_max is not None and self.n_max < self.n:
            raise ValueError("n_max must be at least n")
        if not (len(self.g) == len(self.zeta) == len(self.delta) == self.H):
            raise ValueError("g, zeta and delta must have length H")
        if min(self.g) < 0 or abs(sum(self.g) - 1.0) > 1e-9:
            raise ValueError("g must be probabilities summing to 1")
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")
        if self.sigma_u2 < 0 or self.sigma_e2 < 0:
            raise ValueError("variance components must be nonnegative")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def sigma2(self):
        return self.sigma_u2 + self.sigma_e2

    @property
    def rho_y(self):
        return self.sigma_u2 / self.sigma2 if self.sigma2 > 0 else 0.0

    def design(self):
        """The matching :class:`DesignSpec` (balanced sizes only)."""
        return DesignSpec(H=self.H, n=self.n, p=self.p, g=self.g, sigma2=self.sigma2, rho_y=self.rho_y,
                          delta=self.delta, alpha=self.alpha, direction=self.direction)


TABLE1_DELTAS = {
    1: (1.0, 2.0, 3.0, 4.0),
    2: (1.0, 2.0, 4.0, 4.0),
    3: (1.0, 3.5, 4.0, 4.0),
    4: (2.0, 2.0, 2.0, 2.0),
}


def table1_scenario(number, n_reps=1000, master_seed=20240101, K=5000) -> SimScenario:
    """Scenarios 1-4 of the simulation table: K=5000, n=5, H=4, sigma2=5, rho=0.8."""
    if number not in TABLE1_DELTAS:
        raise ValueError(f"scenario must be one of {sorted(TABLE1_DELTAS)}")
    return SimScenario(K=K, n=5, H=4, p=0.5, g=(0.25,) * 4, zeta=(1.0,) * 4, delta=TABLE1_DELTAS[number],
                       sigma_u2=4.0, sigma_e2=1.0, alpha=0.05, n_reps=n_reps,
                       master_seed=master_seed + number, name=f"scenario{number}")


def replicate_rng(master_seed, rep_index):
    """Independent counter-based stream for one replicate."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master_seed), int(rep_index)])))


def generate_dataset(scenario: SimScenario, rep_index) -> EgoDataset:
    s = scenario
    rng = replicate_rng(s.master_seed, rep_index)
    K = s.K
    subgroup = rng.choice(s.H, size=K, p=np.asarray(s.g))
    treated = rng.random(K) < s.p
    if s.n_max is None:
        sizes = np.full(K, s.n)
    else:
        sizes = rng.integers(s.n, s.n_max + 1, size=K)
    u = rng.normal(0.0, np.sqrt(s.sigma_u2), K)
    mean = np.asarray(s.zeta)[subgroup] + np.asarray(s.delta)[subgroup] * treated + u
    owner = np.repeat(np.arange(K), sizes)
    y = mean[owner] + rng.normal(0.0, np.sqrt(s.sigma_e2), owner.size)
    return EgoDataset.from_arrays(subgroup + 1, treated, sizes, y, s.H, s.direction)


def step_like_scenario(K=600, master_seed=7) -> SimScenario:
    """Six subgroups, smaller is better; groups 1 and 2 clearly worse, 3-6 tied best."""
    return SimScenario(K=K, n=1, n_max=5, H=6, p=0.5, g=(1 / 6,) * 6, zeta=(2.0,) * 6,
                       delta=(0.6, 0.6, -0.4, -0.4, -0.4, -0.4), sigma_u2=0.3, sigma_e2=0.7,
                       n_reps=100, master_seed=master_seed, direction=MINIMIZE, name="step_like")


def step_like_dataset(scenario=None, max_tries=100):
    """First replicate of the STEP-like scenario whose MCB result shows the designed structure.

    Under tied best groups MCB drops a true best with probability up to
    alpha, so a fixture meant to illustrate the structure is taken from the
    first replicate that is not such a draw. Returns ``(data, rep_index)``.
    """
    s = scenario or step_like_scenario()
    target = best_structure(s.delta, s.direction).b0
    for rep in range(max_tries):
        data = generate_dataset(s, rep)
        res = mcb_test(fit_gee(data), alpha=s.alpha)
        if res.best_set == target:
            return data, rep
    raise RuntimeError("no replicate reproduced the designed best structure")


# -- Monte Carlo study -------------------------------------------------------

def run_replicate(scenario: SimScenario, rep_index):
    """Analyse one generated dataset; ``failed`` names the error when the fit was impossible."""
    s = scenario
    data = generate_dataset(s, rep_index)
    try:
        fit = fit_gee(data)
    except (EstimabilityError, ConvergenceError) as exc:
        return {"failed": type(exc).__name__}
    truth = np.asarray(s.delta)
    H = s.H
    se = np.sqrt(np.diag(fit.cov_delta))
    z = stats.norm.ppf(1 - s.alpha / 2)
    counts = fit.cell_counts
    g_hat = counts.sum(axis=1) / counts.sum()
    # analytic standard error at the realized subgroup split and estimated variance components
    if s.n_max is None and np.all(g_hat > 0):
        design = DesignSpec(H=H, n=s.n, p=s.p, g=tuple(g_hat), sigma2=fit.sigma2_hat,
                            rho_y=min(fit.rho_hat, 0.999999), delta=s.delta, alpha=s.alpha)
        stde = np.sqrt(np.diag(lemma1_cov(design, s.K)))
    else:
        stde = np.full(H, np.nan)
    res = mcb_test(fit, alpha=s.alpha, direction=s.direction)
    displayed = mcb_test(fit, alpha=s.alpha, direction=s.direction, overall_method="displayed").overall_p
    st = best_structure(truth, s.direction)
    diff = np.asarray(st.delta_diff)
    best_true = np.zeros(H, dtype=bool)
    best_true[list(st.b0)] = True
    best_hat = np.zeros(H, dtype=bool)
    best_hat[list(res.best_set)] = True
    wald = wald_test(fit)
    return {
        "failed": None,
        "delta_hat": fit.delta_hat,
        "se": se,
        "stde": stde,
        "covered": np.abs(fit.delta_hat - truth) <= z * se,
        "pairwise_p": res.pairwise_p,
        "overall_p": res.overall_p,
        "overall_p_displayed": displayed,
        "sci_covered": (res.lower <= diff) & (diff <= res.upper),
        "best_hat": best_hat,
        "correct": bool(np.array_equal(best_hat, best_true)),
        "wald_reject": wald.p_value < s.alpha,
    }


def _run_chunk(args):
    scenario, reps = args
    return [(r, run_replicate(scenario, r)) for r in reps]


def _workers():
    env = os.environ.get("ENRT_THREADS")
    n = int(env) if env else (os.cpu_count() or 1)
    return max(1, n)


@dataclass
class SimReport:
    scenario: dict
    n_reps: int
    n_failed: int
    failures: dict
    truth: list
    comparisons: list
    bias: list
    stde: list
    estde: list
    coverage: list
    pval_star: list
    pval: float
    pval_displayed: float
    cstar: list
    c_simultaneous: float
    mcb_power: float
    wald_power: float | None
    best_set_rate: list = field(default_factory=list)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    TABLE_COLUMNS = ("scenario", "parameter", "true", "bias", "stde", "estde", "coverage", "compare",
                     "pval_star", "pval", "cstar", "c_simultaneous", "mcb_power", "wald_power")

    def table_rows(self):
        name = self.scenario.get("name") or ""
        rows = []
        for h in range(len(self.truth)):
            rows.append({
                "scenario": name, "parameter": f"delta_{h + 1}", "true": self.truth[h], "bias": self.bias[h],
                "stde": self.stde[h], "estde": self.estde[h], "coverage": self.coverage[h],
                "compare": self.comparisons[h], "pval_star": self.pval_star[h], "pval": self.pval,
                "cstar": self.cstar[h], "c_simultaneous": self.c_simultaneous, "mcb_power": self.mcb_power,
                "wald_power": "" if self.wald_power is None else self.wald_power,
            })
        return rows

    def to_csv(self, header=True):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.TABLE_COLUMNS, lineterminator="\n")
        if header:
            w.writeheader()
        w.writerows(self.table_rows())
        return buf.getvalue()


def run_replicates(scenario: SimScenario, workers=None):
    """Per-replicate results in replicate order.

    ``workers`` defaults to ``ENRT_THREADS`` (or the CPU count). Results do
    not depend on it.
    """
    s = scenario
    workers = _workers() if workers is None else max(1, int(workers))
    reps = list(range(s.n_reps))
    if workers == 1:
        return [run_replicate(s, r) for r in reps]
    chunks = [(s, reps[i::workers]) for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = [item for part in pool.map(_run_chunk, chunks) for item in part]
    results.sort(key=lambda t: t[0])
    return [r for _, r in results]


def run_study(scenario: SimScenario, workers=None, min_reps=100) -> SimReport:
    if scenario.n_reps < min_reps:
        raise ValueError(f"n_reps must be at least {min_reps}")
    return summarize(scenario, run_replicates(scenario, workers))


def summarize(s: SimScenario, results) -> SimReport:
    """Aggregate replicate results (as from :func:`run_replicates`) into table columns."""
    failures = {}
    ok = []
    for r in results:
        if r["failed"]:
            failures[r["failed"]] = failures.get(r["failed"], 0) + 1
        else:
            ok.append(r)
    if not ok:
        raise EstimabilityError("every replicate failed")
    stack = lambda key: np.array([r[key] for r in ok])  # noqa: E731
    truth = np.asarray(s.delta)
    est = stack("delta_hat")
    comp = _best_of_others(truth if s.direction == MAXIMIZE else -truth)
    heterogeneous = not np.all(truth == truth[0])
    return SimReport(
        scenario={k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(s).items()},
        n_reps=len(ok),
        n_failed=len(results) - len(ok),
        failures=failures,
        truth=truth.tolist(),
        comparisons=[f"delta_{h + 1}-delta_{comp[h] + 1}" for h in range(s.H)],
        bias=(est.mean(axis=0) - truth).tolist(),
        stde=stack("stde").mean(axis=0).tolist(),
        estde=est.std(axis=0, ddof=1).tolist(),
        coverage=stack("covered").mean(axis=0).tolist(),
        pval_star=stack("pairwise_p").mean(axis=0).tolist(),
        pval=float(stack("overall_p").mean()),
        pval_displayed=float(stack("overall_p_displayed").mean()),
        cstar=stack("sci_covered").mean(axis=0).tolist(),
        c_simultaneous=float(stack("sci_covered").all(axis=1).mean()),
        mcb_power=float(stack("correct").mean()),
        wald_power=float(stack("wald_reject").mean()) if heterogeneous else None,
        best_set_rate=stack("best_hat").mean(axis=0).tolist(),
    )


# -- sample-size curves ------------------------------------------------------

EXAMPLES = ("unique_best", "multiple_best")
CURVE_COLUMNS = ("test", "H", "n", "rho", "K_min")


def example_delta(example, H, gap=0.5):
    """Example 1 (one best, rest ``-gap``) or Example 3 (one worst, rest tied best)."""
    if example == "unique_best":
        return (-gap,) * (H - 1) + (0.0,)
    if example == "multiple_best":
        return (-gap,) + (0.0,) * (H - 1)
    raise ValueError(f"example must be one of {EXAMPLES}")


def sample_size_curves(rhos=tuple(np.round(np.arange(0, 1, 0.1), 1)), ns=(2, 3, 5, 10), Hs=(3, 4, 5, 6),
                       example="unique_best", sigma2=1.0, p=0.5, alpha=0.05, beta=0.1, tests=("wald", "mcb")):
    """Minimal K per (test, H, n, rho); undefined cells carry ``K_min=None``."""
    if not (len(rhos) and len(ns) and len(Hs)):
        raise ValueError("grid must be nonempty")
    rows = []
    for test in tests:
        for H in Hs:
            for n in ns:
                for rho in rhos:
                    design = DesignSpec.balanced(example_delta(example, H), n, float(rho), sigma2=sigma2,
                                                 p=p, alpha=alpha, beta=beta)
                    try:
                        K = wald_min_k(design) if test == "wald" else mcb_min_k(design)[0]
                    except PowerUndefinedError:
                        K = None
                    rows.append({"test": test, "H": H, "n": n, "rho": float(rho), "K_min": K})
    return rows


def curves_to_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CURVE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "K_min": "NA" if r["K_min"] is None else r["K_min"]})
    return buf.getvalue()
