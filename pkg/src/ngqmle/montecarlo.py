"""Seeded replication engine for estimator comparisons on simulated GARCH paths.

Replication ``r`` draws its path from ``SeedSequence(master_seed, spawn_key=(r,))``,
so results do not depend on how replications are spread over workers. All
estimators in a configuration are fitted to the same path.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from ngqmle import asymptotics as asy
from ngqmle.estimators import FitOptions, FitResult, fit_gaussian, fit_mle, fit_oracle, fit_two_step
from ngqmle.eta import eta_population
from ngqmle.likelihoods import InnovationDistribution, QuasiLikelihood, moment_functionals
from ngqmle.selection import CandidateGrid, aggregate, choose_likelihood
from ngqmle.volatility import GarchParams, simulate

THREADS_ENV = "NGQMLE_THREADS"
KINDS = ("gaussian", "two_step", "oracle", "mle", "four_step", "aggregate")


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str
    likelihood: QuasiLikelihood | None = None
    grid: CandidateGrid | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("two_step", "oracle") and self.likelihood is None:
            raise ValueError(f"{self.kind} needs a likelihood")

    @property
    def name(self) -> str:
        if self.kind in ("two_step", "oracle"):
            return f"{self.kind}:{self.likelihood.label}"
        if self.kind == "aggregate":
            return f"aggregate:{self.likelihood.label}" if self.likelihood else "aggregate:select"
        return self.kind

    @property
    def selects(self) -> bool:
        return self.kind == "four_step" or (self.kind == "aggregate" and self.likelihood is None)

    @classmethod
    def parse(cls, text: str | dict) -> EstimatorSpec:
        """'gaussian', 'mle', 'four_step', 'two_step:t:4', 'oracle:gg:1', 'aggregate:t:4', 'aggregate:select'."""
        if isinstance(text, dict):
            lik = text.get("likelihood")
            grid = text.get("grid")
            return cls(
                text["kind"],
                QuasiLikelihood.parse(lik) if isinstance(lik, str) else (QuasiLikelihood.from_dict(lik) if lik else None),
                CandidateGrid.from_dict(grid) if grid else None,
            )
        kind, _, rest = text.partition(":")
        if kind == "four_step":
            return cls(kind, None, CandidateGrid.wide() if rest == "wide" else None)
        if not rest or rest == "select":
            return cls(kind)
        return cls(kind, QuasiLikelihood.parse(rest))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "name": self.name}
        if self.likelihood is not None:
            d["likelihood"] = self.likelihood.to_dict()
        if self.grid is not None:
            d["grid"] = self.grid.to_dict()
        return d


@dataclass(frozen=True)
class McConfig:
    true_params: GarchParams
    innovation: InnovationDistribution
    T: int
    replications: int
    estimators: tuple[EstimatorSpec, ...]
    master_seed: int = 0
    burn_in: int = 500
    grid: CandidateGrid | None = None  # default grid for selecting estimators
    standardize: bool = False
    multistart: int = 2

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("replications must be >= 2")
        if self.T < 100:
            raise ValueError("T must be >= 100")
        if not self.estimators:
            raise ValueError("no estimators configured")
        for spec in self.estimators:
            if spec.kind == "mle" and not self.innovation.has_density:
                raise ValueError(f"mle needs a closed-form density; {self.innovation.label} has none")
        names = [s.name for s in self.estimators]
        if len(set(names)) != len(names):
            raise ValueError("duplicate estimator specs")

    def to_dict(self) -> dict:
        return {
            "true_params": self.true_params.to_dict(),
            "innovation": self.innovation.to_dict(),
            "T": self.T,
            "replications": self.replications,
            "estimators": [s.to_dict() for s in self.estimators],
            "master_seed": self.master_seed,
            "burn_in": self.burn_in,
            "grid": (self.grid or CandidateGrid()).to_dict(),
            "standardize": self.standardize,
            "multistart": self.multistart,
        }

    @classmethod
    def from_dict(cls, d: dict) -> McConfig:
        innov = d["innovation"]
        innov = InnovationDistribution.parse(innov) if isinstance(innov, str) else InnovationDistribution.from_dict(innov)
        grid = d.get("grid")
        return cls(
            GarchParams.from_dict(d["true_params"]),
            innov,
            int(d["T"]),
            int(d["replications"]),
            tuple(EstimatorSpec.parse(s) for s in d["estimators"]),
            int(d.get("master_seed", 0)),
            int(d.get("burn_in", 500)),
            CandidateGrid.from_dict(grid) if grid else None,
            bool(d.get("standardize", False)),
            int(d.get("multistart", 2)),
        )

    @classmethod
    def from_json(cls, text: str) -> McConfig:
        return cls.from_dict(json.loads(text))


def replication_rng(master_seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(r,)))


def path_checksum(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x, dtype=np.float64).tobytes()).hexdigest()[:16]


@dataclass
class _RepOutcome:
    r: int
    checksum: str
    estimates: dict  # name -> param vector or None
    etas: dict  # name -> eta-hat
    converged: dict
    ses: dict  # name -> plug-in standard errors of (theta, eta)
    chosen: dict  # name -> selected likelihood label
    weights: dict  # name -> w*
    failures: list


def _oracle_etas(config: McConfig) -> dict:
    out = {}
    for spec in config.estimators:
        if spec.kind == "oracle":
            f = spec.likelihood
            if f.is_gaussian:
                out[spec.name] = 1.0
            elif config.innovation.has_density:
                out[spec.name] = eta_population(f, config.innovation).eta
            else:
                out[spec.name] = asy.sampled_functionals(f, config.innovation)[0]
    return out


def _plugin_se(fit, T: int, key: str) -> np.ndarray | None:
    se = fit.standard_errors(T)
    if se is None:
        return None
    return np.concatenate([se[key], [se["eta"]]])


def _one_replication(config: McConfig, r: int, oracle_etas: dict) -> _RepOutcome:
    rng = replication_rng(config.master_seed, r)
    x = simulate(config.true_params, config.innovation, config.T, config.burn_in, rng)
    order = config.true_params.order
    opts = FitOptions(multistart=config.multistart)
    grid = config.grid or CandidateGrid()
    out = _RepOutcome(r, path_checksum(x), {}, {}, {}, {}, {}, {}, [])
    cache = {}

    def gaussian() -> FitResult:
        if "g" not in cache:
            cache["g"] = fit_gaussian(x, order, opts)
        return cache["g"]

    def two_step(f):
        key = ("ts", f)
        if key not in cache:
            cache[key] = fit_two_step(x, order, f, opts, gaussian_fit=gaussian())
        return cache[key]

    def selected(spec_grid):
        key = ("sel", spec_grid)
        if key not in cache:
            cache[key] = choose_likelihood(gaussian().residuals, spec_grid).chosen
        return cache[key]

    for spec in config.estimators:
        name = spec.name
        try:
            if spec.kind == "gaussian":
                fit = gaussian()
                theta, conv = fit.params.to_vector(), fit.converged
            elif spec.kind == "mle":
                fit = fit_mle(x, order, config.innovation, opts, warm_start=gaussian().params)
                theta, conv = fit.params.to_vector(), fit.converged
            elif spec.kind == "oracle":
                fit = fit_oracle(x, order, spec.likelihood, oracle_etas[name], opts, warm_start=gaussian().params)
                theta, conv = fit.params.to_vector(), fit.converged
            else:
                f = spec.likelihood if not spec.selects else selected(spec.grid or grid)
                ts = two_step(f)
                if spec.selects:
                    out.chosen[name] = f.label
                if spec.kind == "aggregate":
                    agg = aggregate(ts, x)
                    theta = agg.params.to_vector()
                    out.weights[name] = agg.w_star
                else:
                    theta = ts.params.to_vector()
                    out.etas[name] = ts.eta_hat.eta
                    out.ses[name] = _plugin_se(ts, config.T, "two_step")
                conv = ts.converged
            out.estimates[name] = theta
            out.converged[name] = bool(conv)
            if not conv:
                out.failures.append({"replication": r, "estimator": name, "reason": "optimizer did not converge"})
        except Exception as exc:  # recorded, never fatal
            out.estimates[name] = None
            out.converged[name] = False
            out.failures.append({"replication": r, "estimator": name, "reason": f"{type(exc).__name__}: {exc}"})
    return out


def _run_chunk(args) -> list[_RepOutcome]:
    config, reps, oracle_etas = args
    return [_one_replication(config, r, oracle_etas) for r in reps]


@dataclass
class McReport:
    config: McConfig
    estimates: dict  # name -> (N, n_params) array, NaN where the fit raised
    etas: dict  # name -> (N,) eta-hat for two-step style estimators
    converged: dict  # name -> (N,) bool
    checksums: list
    failures: list
    plugin_se: dict = field(default_factory=dict)
    chosen: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    population_se: dict = field(default_factory=dict)  # name -> asymptotic sd of (theta, eta) at T
    population_eta: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.config.estimators]

    @property
    def param_names(self) -> list[str]:
        p = self.config.true_params
        return asy.param_names(p.a.size, p.b.size)

    def summary(self, name: str) -> dict:
        theta0 = self.config.true_params.to_vector()
        est = self.estimates[name][self.converged[name]]
        out = {}
        for i, pn in enumerate(self.param_names):
            col = est[:, i]
            bias = float(col.mean() - theta0[i]) if col.size else float("nan")
            var = float(col.var(ddof=1)) if col.size > 1 else float("nan")
            out[pn] = {
                "mean": float(col.mean()) if col.size else float("nan"),
                "bias": bias,
                "variance": var,
                "mse": float(np.mean((col - theta0[i]) ** 2)) if col.size else float("nan"),
                "median": float(np.median(col)) if col.size else float("nan"),
                "mad": float(np.median(np.abs(col - np.median(col)))) if col.size else float("nan"),
            }
        out["n_converged"] = int(self.converged[name].sum())
        return out

    def standardized(self, name: str, use: str = "population") -> np.ndarray:
        """(theta-hat - theta0) / ase per replication, with eta-hat as a last column when available."""
        theta0 = self.config.true_params.to_vector()
        est = self.estimates[name]
        if use == "population":
            se = self.population_se.get(name)
            if se is None:
                raise KeyError(f"no population standard errors for {name}; set standardize=true")
            cols = [(est - theta0) / se[: theta0.size]]
            if name in self.etas and name in self.population_eta:
                cols.append(((self.etas[name] - self.population_eta[name]) / se[-1])[:, None])
            z = np.hstack(cols)
        else:
            se = self.plugin_se[name]
            z = (est - theta0) / se[:, : theta0.size]
        return z[self.converged[name]]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "summary": {n: self.summary(n) for n in self.names},
            "ratios": {
                f"{a}/{b}": ratio_tables(self, (a, b)) for i, a in enumerate(self.names) for b in self.names[i + 1 :]
            },
            "selection_counts": {n: _counts(v) for n, v in self.chosen.items()},
            "w_star_mean": {n: float(np.nanmean(v)) for n, v in self.weights.items()},
            "failures": {"count": len(self.failures), "items": self.failures[:100]},
            "checksums": {"first": self.checksums[:3], "n_paths": len(self.checksums)},
        }


def _counts(labels) -> dict:
    vals, cnt = np.unique(np.asarray([lab for lab in labels if lab is not None]), return_counts=True)
    return {str(v): int(c) for v, c in zip(vals, cnt)}


def population_standard_errors(config: McConfig, n_sim: int = 200_000) -> tuple[dict, dict]:
    """Asymptotic sd at sample size T for the non-selecting estimators, from population moments."""
    p0, g = config.true_params, config.innovation
    stats = asy.population_k_stats(p0, g, n=n_sim, seed=config.master_seed + 7919)
    T = config.T
    se, etas = {}, {}

    def functionals(f):
        if g.has_density:
            return asy.population_functionals(f, g)
        return asy.sampled_functionals(f, g)

    for spec in config.estimators:
        if spec.kind == "gaussian":
            eta, fn = functionals(QuasiLikelihood.gaussian())
            cov = asy.covariance_blocks(stats, fn, p0.sigma, eta)
            se[spec.name] = np.sqrt(np.append(np.diag(cov.sigma_G), 0.0) / T)
        elif spec.kind in ("two_step", "oracle"):
            eta, fn = functionals(spec.likelihood)
            cov = asy.covariance_blocks(stats, fn, p0.sigma, eta)
            mat = cov.sigma_2 if spec.kind == "two_step" else cov.sigma_1
            se[spec.name] = np.sqrt(np.append(np.diag(mat), cov.sigma_eta) / T)
            etas[spec.name] = eta
        elif spec.kind == "mle":
            fn = moment_functionals(g, g, 1.0)
            cov = asy.covariance_blocks(stats, fn, p0.sigma, 1.0)
            se[spec.name] = np.sqrt(np.append(np.diag(cov.sigma_1), 0.0) / T)
    return se, etas


def run(config: McConfig, workers: int | None = None) -> McReport:
    """Run all replications; the result is identical for any ``workers``."""
    workers = workers or default_workers()
    oracle_etas = _oracle_etas(config)
    reps = list(range(config.replications))
    if workers <= 1:
        outcomes = _run_chunk((config, reps, oracle_etas))
    else:
        chunks = [reps[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk, [(config, c, oracle_etas) for c in chunks])
            outcomes = [o for part in parts for o in part]
    outcomes.sort(key=lambda o: o.r)
    N = config.replications
    k = config.true_params.to_vector().size
    names = [s.name for s in config.estimators]
    estimates = {n: np.full((N, k), np.nan) for n in names}
    converged = {n: np.zeros(N, dtype=bool) for n in names}
    etas, ses, chosen, weights = {}, {}, {}, {}
    failures = []
    for o in outcomes:
        for n in names:
            if o.estimates.get(n) is not None:
                estimates[n][o.r] = o.estimates[n]
            converged[n][o.r] = o.converged.get(n, False)
        for n, v in o.etas.items():
            etas.setdefault(n, np.full(N, np.nan))[o.r] = v
        for n, v in o.ses.items():
            arr = ses.setdefault(n, np.full((N, k + 1), np.nan))
            if v is not None:
                arr[o.r] = v
        for n, v in o.chosen.items():
            chosen.setdefault(n, [None] * N)[o.r] = v
        for n, v in o.weights.items():
            weights.setdefault(n, np.full(N, np.nan))[o.r] = v
        failures.extend(o.failures)
    report = McReport(
        config, estimates, etas, converged, [o.checksum for o in outcomes], failures, ses, chosen, weights
    )
    if config.standardize:
        report.population_se, report.population_eta = population_standard_errors(config)
    return report


def ratio_tables(report: McReport, pair: tuple[str, str]) -> dict:
    """Variance and MSE ratios A/B per parameter over replications where both converged."""
    a, b = pair
    mask = report.converged[a] & report.converged[b]
    theta0 = report.config.true_params.to_vector()
    ea, eb = report.estimates[a][mask], report.estimates[b][mask]
    out = {"pair": [a, b], "n": int(mask.sum()), "variance": {}, "mse": {}, "flags": []}
    for i, pn in enumerate(report.param_names):
        if mask.sum() < 2:
            out["variance"][pn] = out["mse"][pn] = float("nan")
            out["flags"].append(f"{pn}: fewer than 2 paired replications")
            continue
        va, vb = ea[:, i].var(ddof=1), eb[:, i].var(ddof=1)
        ma, mb = np.mean((ea[:, i] - theta0[i]) ** 2), np.mean((eb[:, i] - theta0[i]) ** 2)
        if vb > 0:
            out["variance"][pn] = float(va / vb)
        else:
            out["variance"][pn] = float("nan")
            out["flags"].append(f"{pn}: zero variance for {b}")
        if mb > 0:
            out["mse"][pn] = float(ma / mb)
        else:
            out["mse"][pn] = float("nan")
            out["flags"].append(f"{pn}: zero MSE for {b}")
    return out


def ratio_csv_rows(report: McReport, pair: tuple[str, str]) -> tuple[list[str], list]:
    """Header and one row: variance ratios for each parameter, then MSE ratios."""
    t = ratio_tables(report, pair)
    pn = report.param_names
    header = ["pair"] + [f"var_{p}" for p in pn] + [f"mse_{p}" for p in pn]
    row = [f"{pair[0]}/{pair[1]}"] + [t["variance"][p] for p in pn] + [t["mse"][p] for p in pn]
    return header, row


def normality_check(z, names: list[str] | None = None) -> dict:
    """Moments and the Kolmogorov-Smirnov distance to N(0,1) for each column."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    names = names or [f"col{i}" for i in range(z.shape[1])]
    out = {}
    for i, n in enumerate(names):
        col = z[:, i]
        col = col[np.isfinite(col)]
        degenerate = col.size < 3 or not np.ptp(col) > 0
        if degenerate:
            out[n] = {"n": int(col.size), "degenerate": True, "mean": float(np.mean(col)) if col.size else float("nan")}
            continue
        out[n] = {
            "n": int(col.size),
            "degenerate": False,
            "mean": float(col.mean()),
            "variance": float(col.var(ddof=1)),
            "skewness": float(sps.skew(col)),
            "excess_kurtosis": float(sps.kurtosis(col)),
            "ks": float(sps.kstest(col, "norm").statistic),
        }
    return out


def histogram(z, bins: int = 40, limit: float = 4.0) -> dict:
    """Density-normalized bins for plotting standardized estimates against N(0,1)."""
    col = np.asarray(z, dtype=float)
    col = col[np.isfinite(col)]
    dens, edges = np.histogram(col, bins=bins, range=(-limit, limit), density=True)
    mids = 0.5 * (edges[1:] + edges[:-1])
    return {"edges": edges.tolist(), "density": dens.tolist(), "normal_pdf": sps.norm.pdf(mids).tolist()}
