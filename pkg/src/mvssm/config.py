"""JSON experiment configuration.

All cross-field constraints (grid alignment with the fine noise step,
``M h = T``, experiment-specific required fields) are checked at load time so
that a bad config fails before any simulation work.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .engine import SnapshotPolicy
from .model import ModelSpec, make_builtin
from .noise import InitialSampler
from .schemes import SchemeConfig

__all__ = [
    "ExperimentConfig",
    "ModelConfig",
    "InitialConfig",
    "BenchConfig",
    "SchemeEntry",
    "load_config",
    "preset_names",
]

_REL = 1e-9


def _aligned(h: float, unit: float) -> bool:
    k = round(h / unit)
    return k >= 1 and abs(k * unit - h) <= _REL * max(h, unit)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Strict):
    name: str
    params: dict[str, float] = Field(default_factory=dict)

    def build(self) -> ModelSpec:
        return make_builtin(self.name, self.params)


class InitialConfig(_Strict):
    kind: Literal["point", "normal"] = "point"
    mean: list[float]
    var: list[float] | None = None
    offset: int = Field(default=0, ge=0)

    def sampler(self) -> InitialSampler:
        var = tuple(self.var) if self.var is not None else None
        return InitialSampler(tuple(self.mean), var, self.kind, self.offset)


class HDelta(_Strict):
    rule: Literal["inv_sq", "drift_ratio"]


class SchemeEntry(_Strict):
    scheme: Literal["ssm", "frozen_ssm", "tamed", "adaptive", "euler"]
    h: float | None = Field(default=None, gt=0)
    alpha: float | None = Field(default=None, gt=0, le=1)
    h_delta: HDelta | None = None

    @model_validator(mode="after")
    def _needs(self):
        if self.scheme == "tamed" and self.alpha is None:
            raise ValueError("tamed scheme needs alpha")
        if self.scheme == "adaptive" and self.h_delta is None:
            raise ValueError("adaptive scheme needs h_delta")
        return self

    def build(self, h: float) -> SchemeConfig:
        rule = self.h_delta.rule if self.h_delta else None
        return SchemeConfig(self.scheme, h, self.alpha, rule)


class SnapshotConfig(_Strict):
    every: int | None = Field(default=None, ge=1)
    times: list[float] = Field(default_factory=list)

    def policy(self) -> SnapshotPolicy:
        return SnapshotPolicy(self.every, tuple(self.times))


class BenchConfig(_Strict):
    N: list[int] = Field(default_factory=lambda: [1000])
    threads: list[int] = Field(default_factory=lambda: [1])
    repeats: int = Field(default=1, ge=1)


class ExperimentConfig(_Strict):
    """One experiment.  ``h_fine`` defaults: the reference step for convergence
    studies, ``min(h)/64`` when an adaptive scheme is present, else ``min(h)``."""

    experiment: Literal["run", "convergence", "stability", "bench"]
    description: str = ""
    model: ModelConfig
    initial: InitialConfig
    initial_z: InitialConfig | None = None
    schemes: list[SchemeEntry] = Field(default_factory=lambda: [SchemeEntry(scheme="ssm")])
    reference: SchemeEntry | None = None
    N: int = Field(ge=1)
    T: float = Field(gt=0)
    h: float | None = Field(default=None, gt=0)
    h_grid: list[float] | None = None
    h_ref: float | None = Field(default=None, gt=0)
    h_fine: float | None = Field(default=None, gt=0)
    component: int | None = Field(default=None, ge=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    threads: int = Field(default=1, ge=1)
    chunk_size: int = Field(default=4096, ge=1)
    snapshot: SnapshotConfig = Field(default_factory=SnapshotConfig)
    bench: BenchConfig | None = None
    output: str | None = None

    @model_validator(mode="after")
    def _cross_field(self):
        kinds = {s.scheme for s in self.schemes}
        if not self.schemes:
            raise ValueError("at least one scheme is required")
        if self.experiment == "convergence":
            if not self.h_grid or len(self.h_grid) < 3:
                raise ValueError("convergence needs an h_grid with at least three steps")
            if any(h <= 0 for h in self.h_grid):
                raise ValueError("h_grid entries must be positive")
        else:
            missing = [s.scheme for s in self.schemes if s.h is None and self.h is None]
            if missing:
                raise ValueError(f"no step size for schemes {missing}; set h or per-scheme h")
        if self.experiment == "stability":
            if self.initial_z is None:
                raise ValueError("stability needs initial_z")
            if len(self.schemes) != 1:
                raise ValueError("stability takes exactly one scheme")
            if not kinds <= {"ssm", "frozen_ssm"}:
                raise ValueError("stability analysis applies to the split-step schemes only")
        if self.h_fine is None:
            self.h_fine = self._default_h_fine()
        for h in self.all_steps():
            if not _aligned(self.T, h):
                raise ValueError(f"T={self.T!r} is not an integer multiple of h={h!r}")
            if not _aligned(h, self.h_fine):
                raise ValueError(f"h={h!r} is not a multiple of h_fine={self.h_fine!r}")
        dim = len(self.initial.mean)
        if self.initial_z is not None and len(self.initial_z.mean) != dim:
            raise ValueError("initial and initial_z have different dimensions")
        return self

    def steps_for_run(self) -> list[float]:
        return [s.h if s.h is not None else self.h for s in self.schemes]

    def reference_h(self) -> float:
        return self.h_ref if self.h_ref is not None else min(self.h_grid) / 8

    def all_steps(self) -> list[float]:
        if self.experiment == "convergence":
            return [*self.h_grid, self.reference_h()]
        return self.steps_for_run()

    def _default_h_fine(self) -> float:
        if self.experiment == "convergence":
            return self.reference_h()
        hmin = min(self.steps_for_run())
        return hmin / 64 if any(s.scheme == "adaptive" for s in self.schemes) else hmin

    def reference_entry(self) -> SchemeEntry:
        return self.reference or SchemeEntry(scheme="ssm")

    def dump_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def preset_names() -> list[str]:
    folder = resources.files("mvssm") / "configs"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def _read_text(ref: str) -> str:
    path = Path(ref)
    if path.exists():
        return path.read_text(encoding="utf-8")
    if ref in preset_names():
        return (resources.files("mvssm") / "configs" / f"{ref}.json").read_text(encoding="utf-8")
    raise FileNotFoundError(f"no config file or preset named {ref!r}")


def load_config(ref: str, **overrides) -> ExperimentConfig:
    """Load a config from a path or a bundled preset name, applying non-None overrides."""
    raw = json.loads(_read_text(ref))
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.model_validate(raw)
