"""Strict JSON experiment configuration.

Every model forbids unknown keys, so a typo such as ``"sigma_"`` fails with
the offending field path instead of being silently ignored.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..core import (BatchingConfig, DiscrepancyConfig, OptimizerParams, ResamplingConfig,
                    SchedulerConfig)
from ..errors import ConfigurationError

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "dump_config",
    "set_path",
    "config_schema",
    "to_params",
]

Matrix = Union[List[List[float]], str]
Vector = Union[List[float], float, str]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SchedulerSpec(_Strict):
    kind: Literal["multiply", "ess"] = "multiply"
    eta: float = 1.05
    alpha_max: float = Field(1e12, gt=0)


class ResamplingSpec(_Strict):
    sigma_indep: float = Field(0.1, ge=0)
    patience: int = Field(5, ge=0)
    eta: float = Field(0.99, gt=0)
    tol: float = Field(1e-5, ge=0)


class BatchingSpec(_Strict):
    batch_size: int = Field(ge=1)


class DiscrepancySpec(_Strict):
    delta: Optional[float] = Field(None, gt=0)  # None: take the problem's noise level
    eta_incr: float = Field(0.9, gt=0, le=1)
    eta_decr: float = Field(1.1, ge=1)
    lam_min: float = Field(0.0, ge=0)
    lam_max: float = Field(1.0, ge=0)


class ParamsSpec(_Strict):
    tau: float = Field(gt=0)
    alpha: float = Field(gt=0)
    sigma: float = Field(ge=0)
    noise: Literal["isotropic", "anisotropic"] = "isotropic"
    n_particles: int = Field(ge=1)
    k_max: int = Field(ge=0)
    scheduler: Optional[SchedulerSpec] = None
    resampling: Optional[ResamplingSpec] = None
    batching: Optional[BatchingSpec] = None
    discrepancy: Optional[DiscrepancySpec] = None
    consensus: Literal["standard", "polarized"] = "standard"
    kernel_width: float = Field(1.0, gt=0)
    argmin_switch: bool = False
    lam: float = Field(0.0, ge=0)
    lam1: float = Field(0.0, ge=0)
    lam2: float = Field(0.0, ge=0)
    p: Literal[1, 2] = 2
    penalty_eta: float = Field(1.5, gt=0)
    penalty_tol: float = Field(1e-3, ge=0)
    penalty_max: float = Field(1e8, gt=0)
    l0_weight: float = Field(0.0, ge=0)


class ConstraintSpec(_Strict):
    kind: Literal["hyperplane", "sphere", "ball", "linf_sphere", "stiefel", "quadric"]
    normal: Optional[Vector] = None
    offset: float = 0.0
    n: Optional[int] = None
    p: Optional[int] = None
    Q: Optional[Matrix] = None
    n_Q: Optional[Vector] = None
    c_Q: float = 0.0

    @model_validator(mode="after")
    def _required(self):
        need = {"hyperplane": ["normal"], "stiefel": ["n", "p"], "quadric": ["Q"]}
        for name in need.get(self.kind, []):
            if getattr(self, name) is None:
                raise ValueError(f"constraint kind {self.kind!r} requires {name!r}")
        return self


class MapSpec(_Strict):
    kind: Literal["quadratic", "preconditioned", "elastic_net", "neg_log_entropy", "ball",
                  "projection"]
    lam: Optional[float] = Field(None, ge=0)
    H: Optional[Matrix] = None
    set: Optional[ConstraintSpec] = None

    @model_validator(mode="after")
    def _required(self):
        need = {"elastic_net": "lam", "preconditioned": "H", "projection": "set"}
        name = need.get(self.kind)
        if name is not None and getattr(self, name) is None:
            raise ValueError(f"mirror map kind {self.kind!r} requires {name!r}")
        return self


class OptimizerSpec(_Strict):
    kind: Literal["mirrorcbo", "cbo", "projected", "penalized", "drift_constrained",
                  "combination", "hypersurface_sphere", "hypersurface_stiefel",
                  "wirtinger_flow"]
    mirror_map: Optional[MapSpec] = None
    constraint: Optional[ConstraintSpec] = None
    params: Optional[ParamsSpec] = None
    tau0: Optional[float] = Field(None, gt=0)  # wirtinger_flow
    k_max: Optional[int] = Field(None, ge=0)  # wirtinger_flow

    @model_validator(mode="after")
    def _consistent(self):
        if self.kind == "wirtinger_flow":
            if self.tau0 is None or self.k_max is None:
                raise ValueError("wirtinger_flow requires 'tau0' and 'k_max'")
            return self
        if self.params is None:
            raise ValueError(f"optimizer {self.kind!r} requires 'params'")
        if self.kind == "mirrorcbo" and self.mirror_map is None:
            raise ValueError("mirrorcbo requires 'mirror_map'")
        if self.kind in ("projected", "penalized", "drift_constrained", "combination",
                         "hypersurface_stiefel") and self.constraint is None:
            raise ValueError(f"optimizer {self.kind!r} requires 'constraint'")
        return self


class ProblemSpec(_Strict):
    kind: Literal["ackley", "holder_table", "half_norm_squared", "quadratic_fidelity",
                  "l1_residual", "deconvolution", "simplex_regression", "phase_retrieval"]
    dim: Optional[int] = Field(None, ge=1)
    # Ackley
    a: float = 20.0
    b: float = 0.1
    c: float = 1.0
    shift: Optional[Union[Vector, Literal["random_stiefel", "random_normal"]]] = 0.0
    stiefel_n: Optional[int] = None
    stiefel_p: Optional[int] = None
    # linear systems
    A: Optional[Matrix] = None
    rhs: Optional[Vector] = None
    scale: float = 0.5
    # builders
    K: Optional[int] = None
    sigma_kappa: Optional[float] = None
    n_peaks: Optional[int] = None
    d_tilde: Optional[int] = None
    M: Optional[int] = None
    noise_factor: float = Field(0.0, ge=0)
    fidelity: Literal["quadratic", "l1"] = "quadratic"
    l0_zero_tol: float = Field(0.0, ge=0)


class InitSpec(_Strict):
    kind: Literal["normal", "uniform", "simplex", "sphere", "stiefel", "explicit"]
    mean: Vector = 0.0
    std: float = Field(1.0, gt=0)
    lo: float = 0.0
    hi: float = 1.0
    center: Vector = 0.0
    radius: float = Field(1.0, gt=0)
    radius_max: Optional[float] = None
    n: Optional[int] = None
    p: Optional[int] = None
    data: Optional[Matrix] = None
    antithetic: bool = False
    space: Literal["primal", "dual"] = "primal"


class SuccessSpec(_Strict):
    tol: float = Field(0.1, gt=0)
    norm: Literal["l2", "linf", "l1"] = "l2"


class ExperimentConfig(_Strict):
    """Top-level experiment description."""

    experiment: str
    problem: ProblemSpec
    optimizer: OptimizerSpec
    init: Optional[InitSpec] = None
    target: Union[Literal["known", "projected_shift", "ground_truth", "none"], List[float]] = "known"
    success: Optional[SuccessSpec] = None
    lyapunov: bool = False
    n_runs: int = Field(1, ge=1)
    seed: int = Field(0, ge=0)
    record_stride: int = Field(1, ge=1)
    output_dir: Optional[str] = None
    base_dir: Optional[str] = Field(None, exclude=True)

    @field_validator("experiment")
    @classmethod
    def _name(cls, v):
        if not v or any(ch in v for ch in "/\\"):
            raise ValueError("experiment must be a non-empty name without path separators")
        return v

    @model_validator(mode="after")
    def _init_required(self):
        if self.optimizer.kind != "wirtinger_flow" and self.init is None:
            raise ValueError("particle optimizers require 'init'")
        return self


def _format_error(exc: ValidationError):
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        if err["type"] == "extra_forbidden":
            lines.append(f"{path}: unknown key {err['loc'][-1]!r}")
        else:
            lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: Any, base_dir=None) -> ExperimentConfig:
    """Validate a config dictionary; raises :class:`ConfigurationError` with field paths."""
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(_format_error(exc)) from None
    cfg.base_dir = None if base_dir is None else str(base_dir)
    try:
        to_params(cfg)
    except ConfigurationError as exc:
        raise ConfigurationError(f"optimizer.params: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(data, base_dir=path.parent)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json", exclude_none=True, exclude={"base_dir"}),
                      indent=2, sort_keys=True)


def set_path(cfg: ExperimentConfig, path: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with the dotted ``path`` set to ``value``, revalidated."""
    data = cfg.model_dump(mode="json", exclude={"base_dir"})
    node = data
    keys = path.split(".")
    for key in keys[:-1]:
        if not isinstance(node, dict) or node.get(key) is None:
            raise ConfigurationError(f"parameter path {path!r} does not resolve at {key!r}")
        node = node[key]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigurationError(f"parameter path {path!r} does not resolve")
    node[keys[-1]] = copy.deepcopy(value)
    return parse_config(data, base_dir=cfg.base_dir)


def config_schema() -> dict:
    return ExperimentConfig.model_json_schema()


def resolve_array(value, base_dir=None):
    """Inline list or a path (relative to the config) of a CSV file."""
    if isinstance(value, str):
        path = Path(value)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        try:
            return np.loadtxt(path, delimiter=",", ndmin=1)
        except OSError as exc:
            raise ConfigurationError(f"cannot read matrix file {path}: {exc}") from None
    return np.asarray(value, dtype=np.float64)


def to_params(cfg: ExperimentConfig) -> Optional[OptimizerParams]:
    """Translate the params block into an :class:`OptimizerParams`."""
    spec = cfg.optimizer.params
    if spec is None:
        return None
    d = spec.model_dump()
    sch, res, bat, dis = (d.pop(k) for k in ("scheduler", "resampling", "batching", "discrepancy"))
    return OptimizerParams(
        **d,
        scheduler=SchedulerConfig(**sch) if sch else None,
        resampling=ResamplingConfig(**res) if res else None,
        batching=BatchingConfig(**bat) if bat else None,
        # delta may be filled in per run from the problem's noise level
        discrepancy=DiscrepancyConfig(**{**dis, "delta": dis["delta"] or 1.0}) if dis else None,
        record_stride=cfg.record_stride,
    )
