"""Experiment configuration files (YAML) with strict keys and line diagnostics."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

import pydantic
import yaml
from pydantic import BaseModel, ConfigDict, Field

from .errors import HypolabError, ValidationError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ParamsSection(_Strict):
    alpha: float = Field(1.0, gt=0)
    beta: float = Field(1.0, gt=0)
    d: int = Field(1, ge=1)


class TruncationSection(_Strict):
    n_x: int = Field(24, ge=2)
    n_w: int = Field(24, ge=2)


class LedgerSection(_Strict):
    upsilon: float = Field(1.0, gt=0)
    c_hyp: Optional[float] = Field(None, gt=0)
    poincare: Optional[float] = Field(None, gt=0)
    alpha_grid: str = "0.001:1000:121:log"


class EvolutionSection(_Strict):
    stepper: Literal["krylov-expm", "crank-nicolson"] = "krylov-expm"
    horizon: Optional[float] = Field(None, gt=0)
    n_times: int = Field(2001, ge=2)
    dt: float = Field(1e-3, gt=0)
    initial_condition: str = "random:0"


class SdeSection(_Strict):
    scheme: Literal["baoab", "euler-maruyama"] = "baoab"
    dt: float = Field(0.01, gt=0)
    n_paths: int = Field(10_000, ge=1)
    horizon: float = Field(10.0, gt=0)
    seed: int = Field(0, ge=0, lt=2**64)
    observable: str = "x"
    initial: Union[Literal["equilibrium"], list[float]] = "equilibrium"
    n_records: int = Field(101, ge=2)
    overdamped: bool = False


class SweepSection(_Strict):
    alphas: list[float] = [0.1, 1.0, 10.0]
    jobs: int = Field(1, ge=1)


class OutputSection(_Strict):
    directory: Optional[str] = None


class ExperimentConfig(_Strict):
    potential: str = "harmonic"
    params: ParamsSection = ParamsSection()
    truncation: TruncationSection = TruncationSection()
    ledger: LedgerSection = LedgerSection()
    evolution: EvolutionSection = EvolutionSection()
    sde: SdeSection = SdeSection()
    sweep: SweepSection = SweepSection()
    output: OutputSection = OutputSection()

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def parse_alpha_grid(text: str) -> list[float]:
    """``lo:hi:n[:lin|log]`` to a list of ``n`` damping values (linear by default)."""
    import numpy as np

    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise ValidationError(f"alpha grid {text!r} must look like lo:hi:n[:lin|log]")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ValidationError(f"alpha grid {text!r} has non-numeric fields") from None
    spacing = parts[3] if len(parts) == 4 else "lin"
    if not (0 < lo <= hi) or n < 1 or spacing not in ("lin", "log"):
        raise ValidationError(f"alpha grid {text!r} needs 0 < lo <= hi, n >= 1 and spacing lin or log")
    if n == 1:
        return [lo]
    grid = np.geomspace(lo, hi, n) if spacing == "log" else np.linspace(lo, hi, n)
    return [float(a) for a in grid]


# diagnostics -----------------------------------------------------------------

def _node_at(node, loc) -> Optional[yaml.Node]:
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    break
            if nxt is None:
                return node
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            return node
    return node


def _line(root, loc) -> Optional[int]:
    if root is None:
        return None
    node = _node_at(root, loc)
    return node.start_mark.line + 1 if node is not None else None


def _fmt(source: str, line: Optional[int], loc, msg: str) -> str:
    where = f"{source}:{line}" if line else source
    dotted = ".".join(str(p) for p in loc) or "<root>"
    return f"{where}: {dotted}: {msg}"


def _cross_check(cfg: ExperimentConfig) -> list[tuple[tuple, str]]:
    """Constraints that span fields, expressed through the library's own validators."""
    from .model import ModelParams, potential_from_id
    from .sde import observable_from_id

    problems = []

    def attempt(loc, fn):
        try:
            return fn()
        except HypolabError as exc:
            problems.append((loc, str(exc)))
            return None

    params = attempt(("params",), lambda: ModelParams(cfg.params.alpha, cfg.params.beta, cfg.params.d))
    attempt(("potential",), lambda: potential_from_id(cfg.potential, cfg.params.d))
    attempt(("ledger", "alpha_grid"), lambda: parse_alpha_grid(cfg.ledger.alpha_grid))
    attempt(("sde", "observable"), lambda: observable_from_id(cfg.sde.observable))
    if params is not None and cfg.params.d > 3:
        problems.append((("params", "d"), "the discretized pipeline supports d <= 3"))
    if cfg.sde.scheme == "euler-maruyama" and cfg.sde.dt * cfg.params.alpha >= 0.5:
        problems.append((("sde", "dt"), f"euler-maruyama needs dt*alpha < 0.5 (got {cfg.sde.dt * cfg.params.alpha:.3g})"))
    if isinstance(cfg.sde.initial, list) and len(cfg.sde.initial) not in (cfg.params.d, 2 * cfg.params.d):
        problems.append((("sde", "initial"), f"point start needs d or 2d coordinates, got {len(cfg.sde.initial)}"))
    if any(a <= 0 for a in cfg.sweep.alphas):
        problems.append((("sweep", "alphas"), "alphas must be positive"))
    ic = cfg.evolution.initial_condition
    if not ic.startswith("random:"):
        attempt(("evolution", "initial_condition"), lambda: observable_from_id(ic))
    else:
        try:
            int(ic.split(":", 1)[1])
        except ValueError:
            problems.append((("evolution", "initial_condition"), f"random seed in {ic!r} must be an integer"))
    return problems


def config_from_mapping(data: Any, source: str = "<config>", root: Optional[yaml.Node] = None) -> ExperimentConfig:
    """Validate a parsed mapping; errors carry ``source:line`` diagnostics."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValidationError(f"{source}: top level must be a mapping")
    try:
        cfg = ExperimentConfig.model_validate(data)
    except pydantic.ValidationError as exc:
        msgs = [_fmt(source, _line(root, e["loc"]), e["loc"], e["msg"]) for e in exc.errors()]
        raise ValidationError("\n".join(msgs)) from None
    problems = _cross_check(cfg)
    if problems:
        raise ValidationError("\n".join(_fmt(source, _line(root, loc), loc, msg) for loc, msg in problems))
    return cfg


def load_config(path: Union[str, Path, None]) -> ExperimentConfig:
    """Read a YAML experiment file; ``None`` gives the default harmonic experiment."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: invalid YAML: {exc}") from None
    return config_from_mapping(data, str(path), root)


def apply_overrides(cfg: ExperimentConfig, assignments: list[str]) -> ExperimentConfig:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars."""
    data = cfg.model_dump(mode="json")
    for item in assignments:
        if "=" not in item:
            raise ValidationError(f"override {item!r} must look like key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ValidationError(f"override {key!r}: unknown section {p!r}")
            node = node[p]
        node[parts[-1]] = yaml.safe_load(raw)
    return config_from_mapping(data, "<overrides>")


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
