"""
Experiment harness
====================================
Resolved experiment configurations, tidy result records and the report object that runs a method on a
built-in target, times it and persists records, manifests, PMFs and samples.
"""
import functools
import json
import os
import statistics
import time
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

import numpy as np
import pandas as pd
import tomli
from prettytable import PrettyTable
from threadpoolctl import threadpool_limits

from madmix._version import __version__
from madmix.baselines import GibbsChain, cavi_fit, empirical_frequencies, empirical_pmf, kl_to_target
from madmix.discrete import FullConditionalTarget
from madmix.enums import Experiment, Method, Metric
from madmix.main import CategoricalReference, MadMixFlow, WeightedPair, elbo_trace, flow_length_grid, optimize_weight
from madmix.mixed import HamiltonianConfig, MixedMadMixFlow, MixedTarget
from madmix.models import GmmModel, IsingChain, SpikeSlabModel, ToyTarget
from madmix.utils.const import DEFAULT_XI, EXPERIMENT_META, TIMING_REPETITIONS, default_output_dir
from madmix.utils.dataset import convert_to_df, make_gmm_data, make_regression_data, read_observations, read_regression
from madmix.utils.metrics import kl_divergence, total_variation
from madmix.utils.persist import load_object, save_object

GIBBS_CHAINS = 10
GIBBS_BURN_IN = 100
WEIGHT_INITIAL = 0.2


@dataclass
class ExperimentConfig:
    """
    Fully resolved experiment settings. Unset counts and flow lengths take the per-experiment defaults of
    :mod:`madmix.utils.const`; ``params`` overrides the model parameters.
    """

    experiment: str
    method: str = Method.MADMIX.value
    n_flow: Optional[int] = None
    xi: float = DEFAULT_XI
    seed: int = 0
    n_samples: Optional[int] = None
    n_u_samples: Optional[int] = None
    leapfrog_steps: int = 10
    step_size: float = 0.05
    data: Optional[str] = None
    out: Optional[str] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        try:
            experiment = Experiment(self.experiment)
        except ValueError as err:
            choices = [e.value for e in Experiment]
            raise ValueError(f"Unknown experiment '{self.experiment}'. Choose one of {choices}.") from err
        try:
            Method(self.method)
        except ValueError as err:
            raise ValueError(f"Unknown method '{self.method}'. Choose one of {[m.value for m in Method]}.") from err

        meta = EXPERIMENT_META[experiment]
        unknown = set(self.params) - set(meta["params"])
        if unknown:
            raise ValueError(f"Unknown parameters for {experiment.value}: {sorted(unknown)}.")
        self.params = {**meta["params"], **self.params}

        if self.n_flow is None:
            large_ising = experiment == Experiment.ISING and self.params["n_spins"] > 20
            self.n_flow = meta["large_n_flow"] if large_ising else meta["n_flow"]
        if self.n_samples is None:
            self.n_samples = meta["n_samples"]
        if self.n_u_samples is None:
            self.n_u_samples = meta.get("n_u_samples", 1000)
        if self.out is None:
            self.out = default_output_dir()

        if int(self.n_flow) < 1:
            raise ValueError(f"Flow length must be at least 1, got {self.n_flow}.")
        if int(self.n_samples) < 2:
            raise ValueError(f"At least 2 samples are needed, got {self.n_samples}.")
        if self.data is not None and not os.path.isfile(self.data):
            raise FileNotFoundError(f"Dataset file {self.data} does not exist.")
        self.n_flow, self.n_samples, self.n_u_samples = int(self.n_flow), int(self.n_samples), int(self.n_u_samples)

    @property
    def experiment_kind(self) -> Experiment:
        return Experiment(self.experiment)

    @property
    def method_kind(self) -> Method:
        return Method(self.method)

    @classmethod
    def from_dict(cls, values: dict, **overrides):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"Unknown configuration keys: {sorted(unknown)}.")
        merged = {**values, **{k: v for k, v in overrides.items() if v is not None}}
        return cls(**merged)

    @classmethod
    def from_file(cls, path, **overrides):
        """Reads a JSON or TOML file; non-None ``overrides`` win over file values."""
        if not os.path.isfile(path):
            raise FileNotFoundError(f"Configuration file {path} does not exist.")
        if path.endswith(".toml"):
            with open(path, "rb") as file:
                values = tomli.load(file)
        else:
            with open(path, "r", encoding="utf-8") as file:
                values = json.load(file)
        return cls.from_dict(values, **overrides)

    def to_dict(self):
        return asdict(self)

    def hamiltonian(self):
        return HamiltonianConfig(leapfrog_steps=self.leapfrog_steps, step_size=self.step_size)


@dataclass
class ResultRecord:
    """One tidy row: a metric of a method on an experiment for a seed. Unavailable metrics carry no value."""

    method: str
    experiment: str
    metric: str
    value: Optional[float]
    se: Optional[float]
    seed: int
    available: bool = True

    def __post_init__(self):
        Metric(self.metric)
        if self.available and (self.value is None or not np.isfinite(self.value)):
            raise FloatingPointError(f"Metric {self.metric} of {self.method} on {self.experiment} is not finite.")

    @classmethod
    def unavailable(cls, method, experiment, metric, seed):
        return cls(method, experiment, metric, None, None, seed, available=False)

    def to_dict(self):
        return asdict(self)


RECORD_COLUMNS = [f.name for f in fields(ResultRecord)]


def records_to_frame(records: List[ResultRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in records], columns=RECORD_COLUMNS)


def records_from_frame(frame: pd.DataFrame) -> List[ResultRecord]:
    def _optional(value):
        return None if pd.isna(value) else float(value)

    return [
        ResultRecord(
            method=str(row.method),
            experiment=str(row.experiment),
            metric=str(row.metric),
            value=_optional(row.value),
            se=_optional(row.se),
            seed=int(row.seed),
            available=bool(row.available),
        )
        for row in frame.itertuples(index=False)
    ]


def write_records(records, path):
    records_to_frame(records).to_csv(path, index=False, float_format="%.17g")


def read_records(path):
    return records_from_frame(pd.read_csv(path))


def build_target(config: ExperimentConfig):
    """Instantiates the target of an experiment (synthetic data unless a dataset path is given)."""
    params = config.params
    kind = config.experiment_kind
    if kind in (Experiment.TOY1D, Experiment.TOY2D, Experiment.TOY3D):
        return ToyTarget.random(tuple(np.atleast_1d(params["support_sizes"])), seed=params["seed"])
    if kind == Experiment.ISING:
        return IsingChain(params["n_spins"], params["beta"])
    if kind == Experiment.GMM:
        if config.data:
            y = read_observations(config.data)
        else:
            y, _ = make_gmm_data(
                params["n_observations"], params["n_components"], params["dimension"], seed=config.seed
            )
        return GmmModel(
            y,
            n_components=params["n_components"],
            alpha=params["alpha"],
            nu0=params["nu0"],
            covariance_prior=params["covariance_prior"],
            seed=config.seed,
        )
    if config.data:
        X, y = read_regression(config.data)
    else:
        X, y, _ = make_regression_data(
            params["n_observations"], params["n_features"], params["n_nonzero"], params["snr"], seed=config.seed
        )
    return SpikeSlabModel(
        X,
        y,
        alpha1=params["alpha1"],
        alpha2=params["alpha2"],
        s2=params["s2"],
        a=params["a"],
        b=params["b"],
        sigma2_law=params["sigma2_law"],
    )


def _median_seconds(func, repetitions):
    timings = []
    for _ in range(repetitions):
        start = time.perf_counter()
        func()
        timings.append(time.perf_counter() - start)
    return statistics.median(timings), float(np.std(timings, ddof=1) / np.sqrt(len(timings)))


def _check_if_run(func):
    """
    Checks whether the report already holds records, i.e. one of run(), timing() or weight() was called.

    Parameters
    ----------
    func: callable
        Function to apply decorator to.
    """

    @functools.wraps(func)
    def wrapper(self, *args, **kwargs):
        if len(self.records) == 0:
            raise ValueError("No records have been collected yet. Please run() the experiment first.")
        return func(self, *args, **kwargs)

    return wrapper


class ExperimentReport:
    """Runs one configuration and collects its records and data dumps."""

    def __init__(self, config: ExperimentConfig, logger=None, verbose=False):
        """
        ExperimentReport constructor.

        Parameters
        ----------
        config: ExperimentConfig
            Resolved configuration.

        logger: Logger object, default=None
            A logger object to log messages to. If none is given, the print() method will be used to log messages.

        verbose: bool, default=False
            Whether to log progress messages.
        """
        self.config = config
        self.logger = logger
        self.verbose = verbose

        self.target = build_target(config)
        self.records: List[ResultRecord] = []
        self.pmf: Optional[pd.DataFrame] = None
        self.samples: Optional[pd.DataFrame] = None
        self.summary: Optional[pd.DataFrame] = None
        self.factors: Optional[dict] = None
        self.trace: Optional[pd.DataFrame] = None

    def _log(self, *args):
        if self.verbose:
            (self.logger.log if self.logger else print)(*args)

    def _record(self, metric: Metric, value=None, se=None):
        config = self.config
        if value is None:
            record = ResultRecord.unavailable(config.method, config.experiment, metric.value, config.seed)
        else:
            record = ResultRecord(config.method, config.experiment, metric.value, float(value), se, config.seed)
        self.records.append(record)
        return record

    @property
    def is_mixed(self):
        return isinstance(self.target, MixedTarget)

    @property
    def is_enumerable(self):
        return isinstance(self.target, FullConditionalTarget) and self.target.is_enumerable

    def flow(self):
        config = self.config
        if self.is_mixed:
            return MixedMadMixFlow(
                self.target,
                n_flow=config.n_flow,
                config=config.hamiltonian(),
                xi=config.xi,
                logger=self.logger,
                verbose=self.verbose,
            )
        return MadMixFlow(self.target, n_flow=config.n_flow, xi=config.xi, logger=self.logger, verbose=self.verbose)

    def run(self) -> List[ResultRecord]:
        """Computes the accuracy metrics of the configured method; deterministic given the seed."""
        self._log(f"Running {self.config.method} on {self.config.experiment} (seed {self.config.seed})...")
        method = self.config.method_kind
        if self.is_mixed:
            runners = {
                Method.MADMIX: self._run_mixed_madmix,
                Method.GIBBS: self._run_mixed_gibbs,
                Method.MEANFIELD: self._run_unavailable,
            }
        else:
            runners = {
                Method.MADMIX: self._run_madmix,
                Method.GIBBS: self._run_gibbs,
                Method.MEANFIELD: self._run_meanfield,
            }
        runners[method]()
        self._log("Done!")
        return self.records

    def _exact_frame(self, approx_pmf, frame=None):
        exact = self.target.exact_pmf()
        if frame is None:
            frame = convert_to_df(self.target.enumerate_states())
            frame["probability"] = approx_pmf.probs
        frame.insert(frame.columns.get_loc("probability"), "exact", exact.probs)
        self.pmf = frame
        return exact

    def _run_madmix(self):
        config = self.config
        flow = self.flow()
        if self.is_enumerable:
            approx, total = flow.exact_marginal_pmf(config.n_u_samples, seed=config.seed)
            exact = self._exact_frame(approx, frame=flow.pmf_frame(approx))
            self._record(Metric.KL, kl_divergence(approx, exact))
            self._record(Metric.TV, total_variation(approx, exact))
            self._log(f"Marginal PMF pre-normalization mass: {total:.6f}")
        else:
            self._record(Metric.KL)
            self._record(Metric.TV)
        self.trace = elbo_trace(
            self.target, flow_length_grid(config.n_flow), xi=config.xi, n_samples=config.n_samples, seed=config.seed
        )
        last = self.trace.iloc[-1]
        self._log(f"ELBO (N={config.n_flow}): {last.elbo:.5f} +/- {last.se:.5f}")
        self._record(Metric.NEG_ELBO, -last.elbo, last.se)
        draws = flow.sample(config.n_samples, seed=config.seed + 1)
        self.samples = convert_to_df(draws.x)

    def _run_gibbs(self):
        config = self.config
        n_sweeps = max(1, config.n_samples // GIBBS_CHAINS)
        chain = GibbsChain(
            self.target, n_chains=GIBBS_CHAINS, seed=config.seed, logger=self.logger, verbose=self.verbose
        )
        samples = chain.run(n_sweeps, burn_in=GIBBS_BURN_IN)
        self.samples = chain.samples_frame(samples)
        if self.is_enumerable:
            approx = empirical_pmf(samples, self.target.support_sizes)
            exact = self._exact_frame(approx)
            self._record(Metric.KL, kl_to_target(approx, exact))
            self._record(Metric.TV, total_variation(approx, exact))
            raw = empirical_frequencies(samples, self.target.support_sizes)
            self.summary = pd.DataFrame([{"statistic": "kl_raw", "value": kl_to_target(raw, exact)}])
        else:
            self._record(Metric.KL)
            self._record(Metric.TV)
        self._record(Metric.NEG_ELBO)

    def _run_meanfield(self):
        config = self.config
        approx = cavi_fit(self.target, seed=config.seed, logger=self.logger, verbose=self.verbose)
        self.factors = approx.factor_table()
        elbo = approx.elbo
        if self.is_enumerable:
            flattened = approx.flattened_pmf()
            exact = self._exact_frame(flattened)
            self._record(Metric.KL, kl_divergence(flattened, exact))
            self._record(Metric.TV, total_variation(flattened, exact))
            elbo -= self.target.log_normalizer()
        else:
            self._record(Metric.KL)
            self._record(Metric.TV)
        self._record(Metric.NEG_ELBO, -elbo)
        draws = approx.sample(config.n_samples, seed=config.seed)
        self.samples = convert_to_df(draws)

    def _summarize(self, states):
        stats_ = pd.DataFrame([self.target.summary_statistics(x_c, x_d) for x_c, x_d in states])
        self.summary = pd.DataFrame(
            {
                "statistic": stats_.columns,
                "value": stats_.mean().to_numpy(),
                "se": (stats_.std(ddof=1) / np.sqrt(len(stats_))).to_numpy(),
            }
        )

    def _run_mixed_madmix(self):
        config = self.config
        flow = self.flow()
        elbo, se = flow.elbo(config.n_samples, seed=config.seed)
        self._record(Metric.KL)
        self._record(Metric.TV)
        self._record(Metric.NEG_ELBO, -elbo, se)
        draws = flow.sample_many(config.n_samples, seed=config.seed + 1)
        self.samples = flow.samples_frame(draws)
        self._summarize([(s.x_c, s.x_d) for s in draws])

    def _run_mixed_gibbs(self):
        config = self.config
        chain = GibbsChain(self.target, seed=config.seed, logger=self.logger, verbose=self.verbose)
        draws = chain.run(config.n_samples, burn_in=GIBBS_BURN_IN)
        self.samples = chain.samples_frame(draws)
        self._summarize(draws)
        for metric in (Metric.KL, Metric.TV, Metric.NEG_ELBO):
            self._record(metric)

    def _run_unavailable(self):
        for metric in (Metric.KL, Metric.TV, Metric.NEG_ELBO):
            self._record(metric)

    def timing(self, repetitions=TIMING_REPETITIONS) -> List[ResultRecord]:
        """
        Median wall-clock seconds of one density evaluation and one sample draw, single-threaded.
        Construction and the draw of the evaluation point are not timed.
        """
        repetitions = max(int(repetitions), TIMING_REPETITIONS)
        config = self.config
        rng = np.random.default_rng(config.seed)
        method = config.method_kind
        with threadpool_limits(limits=1):
            if method == Method.MADMIX:
                flow = self.flow()
                point = flow.sample(rng=rng)
                density = _median_seconds(lambda: flow.log_density(point), repetitions)
                sample = _median_seconds(lambda: flow.sample(rng=rng), repetitions)
            elif method == Method.GIBBS:
                chain = GibbsChain(self.target, seed=config.seed)
                density = None
                sample = _median_seconds(chain.sweep, repetitions)
            elif self.is_mixed:
                density = sample = None
            else:
                approx = cavi_fit(self.target, seed=config.seed)
                point = approx.sample(1, seed=config.seed)
                density = _median_seconds(lambda: approx.log_mass(point), repetitions)
                sample = _median_seconds(lambda: approx.sample(1, seed=config.seed), repetitions)

        timing_records = [
            self._record(Metric.SECONDS_DENSITY, *(density or (None, None))),
            self._record(Metric.SECONDS_SAMPLE, *(sample or (None, None))),
        ]
        return timing_records

    def pmf_table(self) -> pd.DataFrame:
        """Flattened exact and approximate PMFs of an enumerable discrete experiment."""
        if not self.is_enumerable:
            raise ValueError(f"Experiment {self.config.experiment} has no enumerable discrete state space.")
        if self.pmf is None:
            self.run()
        return self.pmf

    def weight(self, initial=WEIGHT_INITIAL, step_size=0.01, n_iters=500) -> List[ResultRecord]:
        """
        Two-reference weighting demo on a one-dimensional target built as the equal mixture of two
        flows started from references supported on disjoint halves of the atoms.
        """
        config = self.config
        if not isinstance(self.target, ToyTarget) or self.target.dim != 1:
            raise ValueError("The weighting demo runs on a one-dimensional toy support (toy1d).")
        pair = build_two_mode_pair(self.target.support_sizes[0], config.n_flow, config.xi, w=initial)
        alpha = optimize_weight(
            pair,
            step_size=step_size,
            n_iters=n_iters,
            n_samples=min(config.n_samples, 200),
            seed=config.seed,
            logger=self.logger,
            verbose=self.verbose,
        )
        self.target = pair.target
        return [self._record(Metric.WEIGHT, alpha)]

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["logger"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self.logger = None

    def __str__(self):
        """
        Formats collected records using PrettyTable.

        Returns
        -------
        report: str
            Formatted experiment report.
        """
        report = PrettyTable(title="MAD Mix Experiment Report", header=False)

        settings = PrettyTable(title="Configuration", header=False)
        for key, value in self.config.to_dict().items():
            settings.add_row([key, value])

        results = PrettyTable(title="Results", field_names=["Method", "Experiment", "Metric", "Value", "SE", "Seed"])
        for r in self.records:
            value = f"{r.value:.6g}" if r.available else "unavailable"
            se = f"{r.se:.3g}" if r.se is not None else "-"
            results.add_row([r.method, r.experiment, r.metric, value, se, r.seed])

        report.add_row([settings])
        report.add_row([results])
        if self.summary is not None:
            summary = PrettyTable(title="Posterior summary", field_names=list(self.summary.columns))
            for row in self.summary.itertuples(index=False):
                summary.add_row([f"{v:.6g}" if isinstance(v, float) else v for v in row])
            report.add_row([summary])
        return str(report)

    def manifest(self):
        manifest = {"version": __version__, "config": self.config.to_dict(), "n_records": len(self.records)}
        if self.is_mixed:
            manifest["hamiltonian"] = self.config.hamiltonian().to_dict()
        return manifest

    @_check_if_run
    def save(self, output_dir=None):
        """
        Saves records, manifest, text report and data dumps to the output dir.

        Parameters
        ----------
        output_dir: str, default=None
            Directory to write to; the configuration's ``out`` when None.
        """
        output_dir = output_dir or self.config.out
        self._log(f"Saving to {output_dir}...")
        os.makedirs(output_dir, exist_ok=True)

        write_records(self.records, f"{output_dir}/records.csv")
        with open(f"{output_dir}/manifest.json", "w", encoding="utf-8") as file:
            json.dump(self.manifest(), file, indent=2, default=float)
        with open(f"{output_dir}/report.txt", "w", encoding="utf-8") as file:
            file.write(f"\n{str(self)}")

        if self.pmf is not None:
            self.pmf.to_csv(f"{output_dir}/pmf.csv", index=False, float_format="%.17g")
            with open(f"{output_dir}/pmf.json", "w", encoding="utf-8") as file:
                json.dump({"exact": self.pmf["exact"].tolist(), "probability": self.pmf["probability"].tolist()}, file)
        if self.samples is not None:
            self.samples.to_csv(f"{output_dir}/samples.csv", index=False)
        if self.summary is not None:
            self.summary.to_csv(f"{output_dir}/summary.csv", index=False)
        if self.trace is not None:
            self.trace.to_csv(f"{output_dir}/elbo_trace.csv", index=False, float_format="%.17g")
        if self.factors is not None:
            with open(f"{output_dir}/factors.json", "w", encoding="utf-8") as file:
                json.dump(self.factors, file, indent=2)

        save_object(self, f"{output_dir}/report.joblib")
        self._log("Done!")

    @classmethod
    def load(cls, path):
        """
        Load a saved report.

        Parameters
        ----------
        path: str
            The path to ``report.joblib`` (optionally zipped).

        Returns
        -------
        report: ExperimentReport
        """
        return load_object(path)


def build_two_mode_pair(n_atoms, n_flow, xi, w=0.5):
    """
    Two flows on ``n_atoms`` atoms whose references are uniform on the lower and upper halves, with target
    the equal mixture of those references. The MAD map preserves the augmented target, so the target equals
    ``0.5 q_{N,0} + 0.5 q_{N,1}`` for every flow length and the KL-optimal weight is 0.5. ``w`` is the
    pair's starting weight.
    """
    if n_atoms < 2:
        raise ValueError("The two-mode target needs at least 2 atoms.")
    half = n_atoms // 2
    lower = np.r_[np.full(half, 1.0 / half), np.zeros(n_atoms - half)]
    upper = np.r_[np.zeros(half), np.full(n_atoms - half, 1.0 / (n_atoms - half))]
    target = ToyTarget(0.5 * lower + 0.5 * upper)
    flows = [MadMixFlow(target, CategoricalReference([p]), n_flow=n_flow, xi=xi) for p in (lower, upper)]
    return WeightedPair(flows[0], flows[1], w=w)


def run_experiment(config: ExperimentConfig, logger=None, verbose=False, save=True) -> List[ResultRecord]:
    report = ExperimentReport(config, logger=logger, verbose=verbose)
    records = report.run()
    if save:
        report.save()
    return records


def timing_probe(config: ExperimentConfig, logger=None, verbose=False, save=True) -> List[ResultRecord]:
    report = ExperimentReport(config, logger=logger, verbose=verbose)
    records = report.timing()
    if save:
        report.save()
    return records
