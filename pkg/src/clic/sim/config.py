"""Scenario configuration and the presets of the simulation studies."""

import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from ..clcore import MarginScheme, ModelSpec
from ..models import (
    BETA_LADDER,
    LmmSpec,
    MvnRegSpec,
    TrueLaw,
    example3_delta,
    make_covariates,
    sigma_schedule,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

__all__ = ["TruthConfig", "CovariateConfig", "CandidateConfig", "ScenarioConfig", "preset", "PRESETS"]

CRITERIA = ("AIC", "BIC", "CLAIC", "CLBIC")


@dataclass
class TruthConfig:
    family: str = "mvn"  # mvn | lmm-exchangeable
    beta: list = field(default_factory=lambda: [0.3, 1.3])
    sigma: str = "Sigma1"  # schedule name for mvn
    delta: float | None = None  # explicit Sigma_delta perturbation
    delta_label: str | None = None  # Sigma1..Sigma4 of the delta family
    sigma3_rate: str = "sqrt-log"
    sigma2: float = 1.0  # lmm-exchangeable only
    rho: float = 0.5
    effects: str = "normal"
    df: float = 3.0
    t_scaled: bool = False
    mean_shift: list | None = None

    def law(self, n, d):
        if self.family == "lmm-exchangeable":
            base = LmmSpec.exchangeable(self.beta, self.sigma2, self.rho, d)
        elif self.family == "mvn":
            delta = self.delta
            if self.delta_label is not None:
                delta = example3_delta(self.delta_label, n, self.sigma3_rate)
            kind = "Sigma_delta" if delta is not None else self.sigma
            base = MvnRegSpec(self.beta, sigma_schedule(kind, n, d, delta))
        else:
            raise ValueError(f"unknown family {self.family!r}")
        return TrueLaw(base, self.effects, self.df, self.t_scaled, self.mean_shift)


@dataclass
class CovariateConfig:
    setting: str = "iid-normal"
    n_covariates: int = 1
    level: str = "observation"
    df: float = 3.0

    def draw(self, n, d, rng):
        return make_covariates(self.setting, n, d, self.n_covariates, level=self.level, df=self.df, rng=rng)


@dataclass
class CandidateConfig:
    name: str
    covariance: str  # exchangeable | unstructured
    beta_cols: list

    def model(self, d):
        if self.covariance == "exchangeable":
            return ModelSpec.exchangeable(d, self.beta_cols, self.name)
        if self.covariance == "unstructured":
            return ModelSpec.unstructured(d, self.beta_cols, self.name)
        raise ValueError(f"unknown covariance {self.covariance!r}")


@dataclass
class ScenarioConfig:
    id: str
    truth: TruthConfig
    covariates: CovariateConfig
    candidates: list
    schemes: list = field(default_factory=lambda: ["FULL", "BCL"])
    criteria: list = field(default_factory=lambda: ["AIC", "CLAIC"])
    n: int = 100
    d: int = 4
    replicates: int = 200
    seed: int = 0
    classical_full: bool = False  # True: AIC/BIC penalty = p exactly
    penalty: str = "empirical"  # empirical | model

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if len(self.candidates) < 2:
            raise ValueError("need at least two candidates")
        for c in self.criteria:
            if c not in CRITERIA:
                raise ValueError(f"unknown criterion {c!r}")
        if any(c in ("AIC", "BIC") for c in self.criteria) and "FULL" not in self.schemes:
            raise ValueError("AIC/BIC need the FULL scheme")
        if any(c in ("CLAIC", "CLBIC") for c in self.criteria) and not set(self.schemes) - {"FULL"}:
            raise ValueError("CLAIC/CLBIC need a composite scheme")
        if self.penalty not in ("empirical", "model"):
            raise ValueError("penalty must be 'empirical' or 'model'")
        for s in self.schemes:
            MarginScheme.named(s, self.d)
        self.truth.law(self.n, self.d)  # validates the schedule

    def law(self):
        return self.truth.law(self.n, self.d)

    def models(self):
        return [c.model(self.d) for c in self.candidates]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        truth = TruthConfig(**raw.pop("truth", {}))
        cov = CovariateConfig(**raw.pop("covariates", {}))
        cands = [CandidateConfig(**c) for c in raw.pop("candidates", [])]
        return cls(truth=truth, covariates=cov, candidates=cands, **raw)

    @classmethod
    def from_toml(cls, path):
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def to_toml(self):
        """Serialize to TOML (flat tables only, which is all this config uses)."""

        def fmt(v):
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, str):
                return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
            if isinstance(v, (list, tuple)):
                return "[" + ", ".join(fmt(x) for x in v) + "]"
            if isinstance(v, (float, np.floating)):
                return repr(float(v))
            return str(v)

        d = self.to_dict()
        lines = []
        for k, v in d.items():
            if k not in ("truth", "covariates", "candidates") and v is not None:
                lines.append(f"{k} = {fmt(v)}")
        for table in ("truth", "covariates"):
            lines.append(f"\n[{table}]")
            lines += [f"{k} = {fmt(v)}" for k, v in d[table].items() if v is not None]
        for c in d["candidates"]:
            lines.append("\n[[candidates]]")
            lines += [f"{k} = {fmt(v)}" for k, v in c.items()]
        return "\n".join(lines) + "\n"


def _exch_vs_unstr():
    return [
        CandidateConfig("exchangeable", "exchangeable", [0, 1]),
        CandidateConfig("unstructured", "unstructured", [0, 1]),
    ]


def example1(
    beta="beta0", setting="i", replicates=200, n=100, seed=1, effects="normal", level="observation", penalty="model"
):
    """Nested regressions with 1, 2 or 3 covariates, exchangeable clusters."""
    cov_setting = {"i": "iid-normal", "ii": "correlated-normal", "iii": "iid-normal"}.get(setting, setting)
    eff = "t" if setting == "iii" else effects
    return ScenarioConfig(
        id=f"example1-{setting}-{beta}",
        truth=TruthConfig(family="lmm-exchangeable", beta=list(BETA_LADDER[beta]), effects=eff),
        covariates=CovariateConfig(cov_setting, 3, level),
        candidates=[CandidateConfig(f"nc={k}", "exchangeable", list(range(k + 1))) for k in (1, 2, 3)],
        schemes=["FULL", "BCL"],
        criteria=["AIC", "CLAIC"],
        n=n,
        replicates=replicates,
        seed=seed,
        classical_full=True,
        penalty=penalty,
    )


def example2(sigma="Sigma1", n=200, scheme="BCL", replicates=200, seed=2, penalty="model"):
    """Exchangeable versus unstructured under the perturbation schedules."""
    return ScenarioConfig(
        id=f"example2-{sigma}-n{n}-{scheme}",
        truth=TruthConfig(sigma=sigma),
        covariates=CovariateConfig(),
        candidates=_exch_vs_unstr(),
        schemes=["FULL", scheme],
        criteria=["AIC", "CLAIC"],
        n=n,
        replicates=replicates,
        seed=seed,
        classical_full=True,
        penalty=penalty,
    )


def example3(
    label="Sigma1",
    n=500,
    replicates=200,
    seed=3,
    sigma3_rate="sqrt-log",
    effects="normal",
    mean_shift=None,
    scheme="TCL",
    penalty="model",
):
    """All four criteria under the Sigma(delta) family."""
    tag = "example3" if effects == "normal" and mean_shift is None else "example4"
    return ScenarioConfig(
        id=f"{tag}-{label}-{effects}{'-shift' if mean_shift else ''}",
        truth=TruthConfig(delta_label=label, sigma3_rate=sigma3_rate, effects=effects, mean_shift=mean_shift),
        covariates=CovariateConfig(),
        candidates=_exch_vs_unstr(),
        schemes=["FULL", scheme],
        criteria=list(CRITERIA),
        n=n,
        replicates=replicates,
        seed=seed,
        classical_full=True,
        penalty=penalty,
    )


def example4(
    kind="laplace", label="Sigma1", n=500, replicates=200, seed=4, sigma3_rate="sqrt-log", scheme="TCL", penalty="model"
):
    """The example3 scenario with Laplace effects or a mean shift the candidates ignore."""
    common = dict(scheme=scheme, penalty=penalty)
    if kind == "laplace":
        return example3(label, n, replicates, seed, sigma3_rate, effects="laplace", **common)
    if kind == "mean-shift":
        return example3(label, n, replicates, seed, sigma3_rate, mean_shift=[0.3, 0.6, 0.9, 1.2], **common)
    raise ValueError("kind must be 'laplace' or 'mean-shift'")


PRESETS = {"example1": example1, "example2": example2, "example3": example3, "example4": example4}


def preset(name, **kwargs):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**kwargs)
