"""Experiment orchestration for the regression and classification suites."""
from __future__ import annotations

import dataclasses
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from moebma import bayes, datagen
from moebma import models as glm
from moebma.bayes import GaussianPosterior, PosteriorSamples, SghmcConfig, ViConfig
from moebma.datagen import Dataset, GeneratorSpec
from moebma.moe import MoeModel, TrainConfig, init_moe, moe_mixture_nll, moe_predict, train_moe
from moebma.numerics import derive_seed

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "MOEBMA_OUTPUT_DIR"
SUITES = ("regression", "classification")
DEFAULT_DEGREES = {"regression": (1, 2, 3, 4, 5), "classification": tuple(range(1, 9))}
DEFAULT_ROSTER = {
    "regression": ("blr", "moe-2", "moe-3", "moe-4"),
    "classification": ("sghmc-lr", "vi-lr", "moe-2", "moe-3", "moe-4"),
}
MAX_DEGREE = {"regression": 5, "classification": 8}
MOE_TOP_K = 2
BMA_SAMPLES = 16


class ConfigError(ValueError):
    pass


class CellFailure(RuntimeError):
    def __init__(self, model: str, degree: int, cause: BaseException):
        super().__init__(f"cell ({model}, degree {degree}) failed: {type(cause).__name__}: {cause}")
        self.model = model
        self.degree = degree


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV, "results"))


def moe_experts(model_id: str) -> int | None:
    if model_id.startswith("moe-"):
        try:
            n = int(model_id[4:])
        except ValueError:
            return None
        return n if n >= 1 else None
    return None


def kind_of(model_id: str) -> str | None:
    """Which suite a model id belongs to (None for mixtures, which fit both)."""
    if model_id == "blr":
        return "regression"
    if model_id in ("sghmc-lr", "vi-lr"):
        return "classification"
    if moe_experts(model_id) is not None:
        return None
    raise ConfigError(f"unknown model id {model_id!r}")


@dataclass
class ExperimentConfig:
    suite: str
    degrees: tuple[int, ...] = ()
    models: tuple[str, ...] = ()
    seed: int = 0
    n_train: int = 10000
    n_test: int = 2000
    risk_samples: int = glm.DEFAULT_RISK_SAMPLES
    out: Path | None = None
    workers: int = 1
    inline_timings: bool = False
    moe: dict = field(default_factory=dict)
    sghmc: dict = field(default_factory=dict)
    vi: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ConfigError(f"suite must be one of {SUITES}, got {self.suite!r}")
        self.degrees = tuple(int(d) for d in (self.degrees or DEFAULT_DEGREES[self.suite]))
        self.models = tuple(self.models or DEFAULT_ROSTER[self.suite])
        for d in self.degrees:
            if not 1 <= d <= MAX_DEGREE[self.suite]:
                raise ConfigError(f"degree {d} outside 1..{MAX_DEGREE[self.suite]} for the {self.suite} suite")
        if len(set(self.degrees)) != len(self.degrees):
            raise ConfigError("duplicate degrees")
        if len(set(self.models)) != len(self.models):
            raise ConfigError("duplicate model ids")
        for m in self.models:
            k = kind_of(m)
            if k is not None and k != self.suite:
                raise ConfigError(f"model {m!r} is not valid in the {self.suite} suite")
        if self.n_train < 1 or self.n_test < 1 or self.risk_samples < 2 or self.workers < 1:
            raise ConfigError("n_train, n_test, workers must be >= 1 and risk_samples >= 2")
        for name, cls in (("moe", TrainConfig), ("sghmc", SghmcConfig), ("vi", ViConfig)):
            known = {f.name for f in dataclasses.fields(cls)} - {"seed"}
            bad = set(getattr(self, name)) - known
            if bad:
                raise ConfigError(f"unknown {name} override(s): {sorted(bad)}")
        if self.out is not None:
            self.out = Path(self.out)

    def data_seed(self, degree: int) -> int:
        return derive_seed(self.seed, "data", self.suite, degree)

    def risk_seed(self, degree: int) -> int:
        return derive_seed(self.seed, "risk", self.suite, degree)

    def cell_seed(self, model_id: str, degree: int) -> int:
        return derive_seed(self.seed, model_id, degree)


@lru_cache(maxsize=4)
def _cached_data(kind: str, degree: int, n_train: int, n_test: int, seed: int):
    return datagen.generate(kind, degree, n_train, n_test, seed)


def suite_data(cfg: ExperimentConfig, degree: int):
    return _cached_data(cfg.suite, degree, cfg.n_train, cfg.n_test, cfg.data_seed(degree))


def _override(cls, base: dict, overrides: dict):
    return cls(**{**base, **overrides})


def fit_model(model_id: str, train: Dataset, seed: int, kind: str,
              moe: dict | None = None, sghmc: dict | None = None, vi: dict | None = None):
    """Fit one roster entry; returns a MoeModel, GaussianPosterior or PosteriorSamples."""
    n_exp = moe_experts(model_id)
    if n_exp is not None:
        link = glm.IDENTITY if kind == "regression" else glm.LOGISTIC
        base = TrainConfig.regression if kind == "regression" else TrainConfig.classification
        tcfg = base(**{**(moe or {}), "seed": seed})
        init = init_moe(n_exp, train.dim, MOE_TOP_K, link, glm.DEFAULT_SIGMA, seed)
        trained, _ = train_moe(init, train, tcfg)
        return trained
    if model_id == "blr":
        return bayes.blr_posterior(GaussianPosterior.standard(train.dim, glm.DEFAULT_SIGMA), train)
    if model_id == "sghmc-lr":
        scfg = _override(SghmcConfig, {"n_samples": BMA_SAMPLES}, {**(sghmc or {}), "seed": seed})
        return bayes.sghmc_sample(train, scfg)
    if model_id == "vi-lr":
        vcfg = _override(ViConfig, {"inference_samples": BMA_SAMPLES}, {**(vi or {}), "seed": seed})
        return bayes.vi_samples(bayes.vi_fit(train, vcfg), vcfg)
    raise ConfigError(f"unknown model id {model_id!r}")


def predictor(fitted):
    """Vectorized map from a design matrix to predictive means or probabilities."""
    if isinstance(fitted, MoeModel):
        return lambda X: moe_predict(fitted, X)
    if isinstance(fitted, GaussianPosterior):
        return lambda X: bayes.blr_predictive(fitted, X)[0]
    if isinstance(fitted, PosteriorSamples):
        return lambda X: bayes.bma_predict(fitted, X)
    raise TypeError(f"no predictor for {type(fitted).__name__}")


def evaluate(model_id: str, fitted, test: Dataset, spec: GeneratorSpec, degree: int, seed: int,
             risk_seed: int, risk_samples: int) -> glm.MetricsRecord:
    predict = predictor(fitted)
    preds = predict(test.X)
    risk, risk_se = glm.frequentist_risk(predict, spec, risk_samples, risk_seed, return_se=True)
    if spec.kind == "regression":
        sq = (preds - test.y) ** 2
        if isinstance(fitted, MoeModel):
            nll = moe_mixture_nll(fitted, test.X, test.y)
        else:
            nll = bayes.blr_nll(fitted, test.X, test.y)
        return glm.MetricsRecord(
            model=model_id, degree=degree, mse=float(sq.mean()), nll=nll, risk=risk, seed=seed,
            mse_se=float(sq.std(ddof=1) / math.sqrt(len(test))), risk_se=risk_se,
        )
    return glm.MetricsRecord(
        model=model_id, degree=degree, nll=glm.cross_entropy(preds, test.y),
        accuracy=glm.accuracy(preds, test.y), risk=risk, seed=seed, risk_se=risk_se,
    )


def run_cell(cfg: ExperimentConfig, model_id: str, degree: int) -> glm.MetricsRecord:
    train, test, spec = suite_data(cfg, degree)
    seed = cfg.cell_seed(model_id, degree)
    start = time.perf_counter()
    fitted = fit_model(model_id, train, seed, cfg.suite, cfg.moe, cfg.sghmc, cfg.vi)
    rec = evaluate(model_id, fitted, test, spec, degree, seed, cfg.risk_seed(degree), cfg.risk_samples)
    rec.seconds = time.perf_counter() - start
    return rec


def _run_cell_safe(args):
    cfg, model_id, degree = args
    try:
        return run_cell(cfg, model_id, degree), None
    except Exception as exc:  # reported per cell, suite decides
        return None, CellFailure(model_id, degree, exc)


@dataclass
class SuiteResult:
    config: ExperimentConfig
    records: list[glm.MetricsRecord]

    def csv_text(self) -> str:
        return glm.records_to_csv(self._csv_records())

    def _csv_records(self):
        if self.config.inline_timings:
            return self.records
        return [dataclasses.replace(r, seconds=None) for r in self.records]

    def timings_csv(self) -> str:
        lines = ["model,degree,seconds"]
        lines += [f"{r.model},{r.degree},{r.seconds!r}" for r in self.records]
        return "\n".join(lines) + "\n"

    def get(self, model: str, degree: int) -> glm.MetricsRecord:
        for r in self.records:
            if r.model == model and r.degree == degree:
                return r
        raise KeyError((model, degree))


def _write_outputs(result: SuiteResult) -> None:
    out = result.config.out
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{result.config.suite}.csv").write_text(result.csv_text())
    (out / f"{result.config.suite}_timings.csv").write_text(result.timings_csv())


def run_suite(cfg: ExperimentConfig) -> SuiteResult:
    """Run every (model, degree) cell; rows come out in (model, degree) roster order.

    On a cell failure, the rows that did finish are written before the
    failure is raised.
    """
    cells = [(cfg, m, d) for m in cfg.models for d in cfg.degrees]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(_run_cell_safe, cells))
    else:
        outcomes = []
        for cell in cells:
            outcomes.append(_run_cell_safe(cell))
            rec = outcomes[-1][0]
            if rec is not None:
                log.info("%s degree %d: %.2fs", rec.model, rec.degree, rec.seconds)
            else:
                break
    records = [rec for rec, err in outcomes if rec is not None]
    result = SuiteResult(cfg, records)
    _write_outputs(result)
    for _, err in outcomes:
        if err is not None:
            raise err
    return result


def run_regression_suite(cfg: ExperimentConfig) -> SuiteResult:
    if cfg.suite != "regression":
        raise ConfigError("run_regression_suite needs suite=regression")
    return run_suite(cfg)


def run_classification_suite(cfg: ExperimentConfig) -> SuiteResult:
    if cfg.suite != "classification":
        raise ConfigError("run_classification_suite needs suite=classification")
    return run_suite(cfg)


# ---------------------------------------------------------------------------
# key=value configuration files


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def _coerce(value: str, like):
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def _int_list(value) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).split(",") if v.strip())


def _str_list(value) -> tuple[str, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return tuple(v.strip() for v in str(value).split(",") if v.strip())


def build_config(file_values: dict, flag_values: dict) -> ExperimentConfig:
    """Merge config-file entries with CLI flags (flags win) into a validated config."""
    merged = {**file_values, **{k: v for k, v in flag_values.items() if v is not None}}
    overrides = {"moe": {}, "sghmc": {}, "vi": {}}
    defaults = {"moe": TrainConfig(), "sghmc": SghmcConfig(), "vi": ViConfig()}
    kwargs = {}
    try:
        for key, value in merged.items():
            if "." in key:
                group, name = key.split(".", 1)
                if group not in overrides:
                    raise ConfigError(f"unknown config group {group!r} in key {key!r}")
                if not hasattr(defaults[group], name) or name == "seed":
                    raise ConfigError(f"unknown {group} option {name!r}")
                like = getattr(defaults[group], name)
                overrides[group][name] = _coerce(value, like) if isinstance(value, str) else value
            elif key == "suite":
                kwargs["suite"] = str(value)
            elif key == "degrees":
                kwargs["degrees"] = _int_list(value)
            elif key == "models":
                kwargs["models"] = _str_list(value)
            elif key in ("seed", "n_train", "n_test", "risk_samples", "workers"):
                kwargs[key] = int(value)
            elif key == "out":
                kwargs["out"] = Path(value)
            elif key == "inline_timings":
                kwargs[key] = _coerce(value, True) if isinstance(value, str) else bool(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if "suite" not in kwargs:
        raise ConfigError("no suite given")
    return ExperimentConfig(**kwargs, **overrides)


def summarize(result: SuiteResult) -> str:
    metric = "mse" if result.config.suite == "regression" else "accuracy"
    lines = [f"{'model':<10}" + "".join(f"{d:>10}" for d in result.config.degrees)]
    for m in result.config.models:
        vals = []
        for d in result.config.degrees:
            try:
                vals.append(getattr(result.get(m, d), metric))
            except KeyError:
                vals.append(float("nan"))
        lines.append(f"{m:<10}" + "".join(f"{v:>10.4f}" for v in vals))
    return f"{metric} by degree\n" + "\n".join(lines)


def array_of(result: SuiteResult, model: str, metric: str) -> np.ndarray:
    return np.array([getattr(result.get(model, d), metric) for d in result.config.degrees])
