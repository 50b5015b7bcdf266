"""JSON run configuration: schema validation, problem building, run identity.

One JSON document drives every CLI command. Field reference lives in the
README; this module turns a validated document into the library objects
(:class:`~scaledopt.data.Dataset`, :class:`~scaledopt.objective.LogisticProblem`,
:class:`~scaledopt.optim.AlgoConfig`) and derives stable run identifiers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .adaptive import TheoryParams
from .data import Dataset, SeededRng, apply_feature_scaling, generate_synthetic, parse_libsvm
from .linalg import EPS_FLOOR
from .objective import DENSE_HESSIAN_CAP, LogisticProblem
from .optim import ALGORITHMS, AlgoConfig, BetaSchedule, EtaSchedule

__all__ = ["ConfigError", "RunConfig", "load_config", "build_dataset", "build_problem", "run_id_for"]


class ConfigError(ValueError):
    """Invalid run configuration; the CLI maps this to exit code 1."""


_TOP_LEVEL_KEYS = {
    "dataset", "n_features", "A", "scale_seed", "algo", "T", "batch_size", "p",
    "eta", "beta", "precond", "seed", "repeats", "diagnostics",
    "diagnostics_cadence", "theory", "sample_with_replacement", "trace_thin",
    "grid", "sweep_A", "plotdata", "_provenance", "_comment",
}


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _as_mapping(value, name: str) -> dict:
    _require(isinstance(value, dict), f"{name} must be an object")
    return value


@dataclass
class RunConfig:
    """Validated contents of one config document."""

    raw: dict
    dataset_spec: dict
    n_features: int | None
    amplitude: float | None
    scale_seed: int
    algo: str
    T: int
    batch_size: int
    p: float
    eta: EtaSchedule
    beta: BetaSchedule
    precond_kind: str | None
    precond_eps: float
    precond_full_hessian: bool
    seed: int
    repeats: int
    diagnostics: str
    diagnostics_cadence: int
    theory: TheoryParams
    sample_with_replacement: bool
    trace_thin: int
    grid: dict | None = None
    sweep_A: list | None = None
    plotdata: dict | None = None

    def algo_config(self, seed: int | None = None, **overrides) -> AlgoConfig:
        """AlgoConfig for one run, optionally overriding seed/eta/beta etc."""
        kwargs = dict(
            algo=self.algo,
            T=self.T,
            batch_size=self.batch_size,
            p=self.p,
            seed=self.seed if seed is None else seed,
            eta=self.eta,
            beta=self.beta,
            precond_kind=self.precond_kind,
            precond_eps=self.precond_eps,
            precond_full_hessian=self.precond_full_hessian,
            sample_with_replacement=self.sample_with_replacement,
            diagnostics=self.diagnostics,
            diagnostics_cadence=self.diagnostics_cadence,
            theory=self.theory,
            trace_thin=self.trace_thin,
        )
        kwargs.update(overrides)
        try:
            return AlgoConfig(**kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def dataset_key(self) -> str:
        """Canonical identity of the (scaled) dataset, for worker-side caching."""
        payload = {
            "dataset": self.dataset_spec,
            "n_features": self.n_features,
            "A": self.amplitude,
            "scale_seed": self.scale_seed,
        }
        return json.dumps(payload, sort_keys=True)

    def resolved(self) -> dict:
        """Config echo: every field after defaulting, JSON-serializable."""
        return {
            "dataset": self.dataset_spec,
            "n_features": self.n_features,
            "A": self.amplitude,
            "scale_seed": self.scale_seed,
            "algo": self.algo,
            "T": self.T,
            "batch_size": self.batch_size,
            "p": self.p,
            "eta": {"kind": self.eta.kind, "value": self.eta.value, "alpha": self.eta.alpha},
            "beta": {"kind": self.beta.kind, "value": self.beta.value, "a0": self.beta.a0},
            "precond": {
                "kind": self.precond_kind,
                "eps": self.precond_eps,
                "full_hessian": self.precond_full_hessian,
            },
            "seed": self.seed,
            "repeats": self.repeats,
            "diagnostics": self.diagnostics,
            "diagnostics_cadence": self.diagnostics_cadence,
            "theory": {
                "sigma": self.theory.sigma,
                "M_prime": self.theory.M_prime,
                "alpha": self.theory.alpha,
                "p": self.theory.p,
            },
            "sample_with_replacement": self.sample_with_replacement,
            "trace_thin": self.trace_thin,
            "grid": self.grid,
            "sweep_A": self.sweep_A,
            "plotdata": self.plotdata,
        }


def load_config(path_or_dict) -> RunConfig:
    """Parse and validate a config document (path, stream, or dict)."""
    if isinstance(path_or_dict, dict):
        doc = path_or_dict
    elif hasattr(path_or_dict, "read"):
        doc = json.load(path_or_dict)
    else:
        try:
            with open(path_or_dict, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path_or_dict}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    _require(isinstance(doc, dict), "config root must be an object")
    unknown = set(doc) - _TOP_LEVEL_KEYS
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")

    dataset = _as_mapping(doc.get("dataset"), "dataset") if "dataset" in doc else None
    _require(dataset is not None, "config needs a dataset section")
    _require(
        ("path" in dataset) != ("synthetic" in dataset),
        "dataset needs exactly one of path or synthetic",
    )
    if "synthetic" in dataset:
        syn = _as_mapping(dataset["synthetic"], "dataset.synthetic")
        _require(set(syn) <= {"m", "n", "seed", "density"}, f"unknown synthetic keys: {sorted(set(syn) - {'m', 'n', 'seed', 'density'})}")
        _require(isinstance(syn.get("m"), int) and syn["m"] >= 1, "synthetic.m must be a positive integer")
        _require(isinstance(syn.get("n"), int) and syn["n"] >= 1, "synthetic.n must be a positive integer")

    amplitude = doc.get("A")
    if amplitude is not None:
        _require(isinstance(amplitude, (int, float)) and amplitude >= 0, "A must be a nonnegative number or null")
        amplitude = float(amplitude)

    algo = doc.get("algo")
    _require(algo in ALGORITHMS, f"algo must be one of {ALGORITHMS}, got {algo!r}")

    eta_doc = _as_mapping(doc.get("eta", {"kind": "constant", "value": 0.1}), "eta")
    beta_doc = _as_mapping(doc.get("beta", {"kind": "constant", "value": 0.99}), "beta")
    precond_doc = _as_mapping(doc.get("precond", {}), "precond")
    theory_doc = _as_mapping(doc.get("theory", {}), "theory")

    p = doc.get("p", 0.9)
    _require(isinstance(p, (int, float)) and 0.0 < p < 1.0, "p must lie in (0, 1)")

    try:
        theory = TheoryParams(
            sigma=float(theory_doc.get("sigma", 0.1)),
            M_prime=float(theory_doc.get("M_prime", 1.0)),
            alpha=float(theory_doc.get("alpha", 1.0)),
            p=float(p),
        )
    except ValueError as exc:
        raise ConfigError(f"theory: {exc}") from None

    try:
        eta = EtaSchedule(
            kind=eta_doc.get("kind", "constant"),
            value=float(eta_doc.get("value", 0.1)),
            alpha=float(eta_doc.get("alpha", theory.alpha)),
        )
        beta = BetaSchedule(
            kind=beta_doc.get("kind", "constant"),
            value=float(beta_doc.get("value", 0.99)),
            a0=float(beta_doc.get("a0", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    grid = doc.get("grid")
    if grid is not None:
        grid = _as_mapping(grid, "grid")
        _require(
            isinstance(grid.get("eta"), list) and len(grid["eta"]) >= 1,
            "grid.eta must be a non-empty list",
        )
        _require(
            isinstance(grid.get("beta"), list) and len(grid["beta"]) >= 1,
            "grid.beta must be a non-empty list",
        )
        seeds = grid.get("seeds", 1)
        _require(isinstance(seeds, int) and seeds >= 1, "grid.seeds must be a positive integer")

    sweep_A = doc.get("sweep_A")
    if sweep_A is not None:
        _require(
            isinstance(sweep_A, list) and len(sweep_A) >= 1
            and all(isinstance(a, (int, float)) and a > 0 for a in sweep_A),
            "sweep_A must be a non-empty list of positive amplitudes",
        )

    cfg = RunConfig(
        raw=doc,
        dataset_spec=dataset,
        n_features=doc.get("n_features"),
        amplitude=amplitude,
        scale_seed=int(doc.get("scale_seed", 0)),
        algo=algo,
        T=int(doc.get("T", 300)),
        batch_size=int(doc.get("batch_size", 100)),
        p=float(p),
        eta=eta,
        beta=beta,
        precond_kind=precond_doc.get("kind"),
        precond_eps=float(precond_doc.get("eps", EPS_FLOOR)),
        precond_full_hessian=bool(precond_doc.get("full_hessian", False)),
        seed=int(doc.get("seed", 0)),
        repeats=int(doc.get("repeats", 1)),
        diagnostics=doc.get("diagnostics", "off"),
        diagnostics_cadence=int(doc.get("diagnostics_cadence", 10)),
        theory=theory,
        sample_with_replacement=bool(doc.get("sample_with_replacement", True)),
        trace_thin=int(doc.get("trace_thin", 1)),
        grid=grid,
        sweep_A=sweep_A,
        plotdata=doc.get("plotdata"),
    )
    _require(cfg.repeats >= 1, "repeats must be at least 1")
    cfg.algo_config()  # surface AlgoConfig validation errors now, as ConfigError
    return cfg


def build_dataset(cfg: RunConfig) -> Dataset:
    spec = cfg.dataset_spec
    if "path" in spec:
        try:
            ds = parse_libsvm(spec["path"], n_features=cfg.n_features)
        except FileNotFoundError:
            raise ConfigError(f"dataset file not found: {spec['path']}") from None
    else:
        syn = spec["synthetic"]
        ds, _ = generate_synthetic(
            syn["m"], syn["n"], SeededRng(int(syn.get("seed", 0))),
            density=float(syn.get("density", 0.1)),
        )
    if cfg.amplitude is not None:
        ds = apply_feature_scaling(ds, cfg.amplitude, SeededRng(cfg.scale_seed))
    return ds


def build_problem(cfg: RunConfig) -> LogisticProblem:
    prob = LogisticProblem(build_dataset(cfg))
    if cfg.algo_config().resolved_precond_kind == "dense-absolute" and prob.n > DENSE_HESSIAN_CAP:
        raise ConfigError(
            f"dense preconditioning needs n <= {DENSE_HESSIAN_CAP}, dataset has n = {prob.n}"
        )
    return prob


def run_id_for(cfg: RunConfig, seed: int) -> str:
    """Stable 12-hex-digit identity of (resolved config, seed)."""
    payload = cfg.resolved()
    payload["seed"] = int(seed)
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]
