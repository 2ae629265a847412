"""JSON run configuration: schema checks, defaults and a lossless round trip.

Document layout (row-major nested arrays for matrices)::

    {
      "model": {
        "dynamics": {"drift_offset": [...], "drift_matrix": [[...]]},
        "timer_reset": {"mean_gain", "mean_offset", "cov_quadratic", "cov_linear", "cov_constant"},
        "timing": {"type": "phase_type", "branches": [{"p": .., "m": .., "k": ..}]}
                | {"type": "exponential", "mean": ..}
                | {"type": "erlang", "m": .., "mean": ..}
                | {"type": "deterministic", "mean": ..}
                | {"type": "gamma" | "lognormal", "mean": .., "cv2": ..},
        "memoryless_resets": [{"rate": .., <reset fields>, "burst": {"kind", "mean", "second_moment"}}],
        "initial_state": [...]
      },
      "run": {"t_end", "grid_points", "paths", "seed", "sampler", "threads", "format", "out", "method"}
    }

Every ``timer_reset`` field is optional (identity reset, no noise); so are
``memoryless_resets`` (none), ``initial_state`` (zeros) and the whole ``run``
section (see :class:`RunParams`).  A memoryless family with a ``burst`` law
takes ``mean_offset`` and ``cov_constant`` from that law by default.  Exponential and Erlang timing load as
phase-type mixtures.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import TTSHSError
from .model import (
    BurstSize,
    LinearDynamics,
    MemorylessResetFamily,
    TimerResetFamily,
    TTSHSModel,
    validate_model,
)
from .phase_type import Branch, PhaseTypeMixture, RenewalLaw, TimingLaw
from .simulator import SAMPLER_KINDS


@dataclass(frozen=True)
class RunParams:
    t_end: float = 10.0
    grid_points: int = 101
    paths: int = 10000
    seed: int = 0
    sampler: str = "gaussian"
    threads: int = 1
    format: str = "csv"
    out: str | None = None
    method: str = "expm"


@dataclass(frozen=True, eq=False)
class RunConfig:
    model: TTSHSModel
    run: RunParams = field(default_factory=RunParams)

    def __eq__(self, other):
        if not isinstance(other, RunConfig):
            return NotImplemented
        return config_to_dict(self) == config_to_dict(other)


_RESET_KEYS = ("mean_gain", "mean_offset", "cov_quadratic", "cov_linear", "cov_constant")
_MODEL_KEYS = {"dynamics", "timer_reset", "timing", "memoryless_resets", "initial_state"}


def _schema(msg: str):
    return TTSHSError("SCHEMA_ERROR", msg)


def _check_keys(obj, allowed, where: str, required=()):
    if not isinstance(obj, dict):
        raise _schema(f"{where} must be an object")
    for key in obj:
        if key not in allowed:
            raise _schema(f"unknown key {key!r} in {where}")
    for key in required:
        if key not in obj:
            raise _schema(f"missing key {key!r} in {where}")


def _number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _schema(f"{where} must be a number")
    return float(v)


def _vector(v, n: int | None, where: str) -> np.ndarray:
    if not isinstance(v, list) or not v:
        raise _schema(f"{where} must be a non-empty array")
    out = np.array([_number(e, f"{where}[{i}]") for i, e in enumerate(v)])
    if n is not None and out.shape != (n,):
        raise _schema(f"{where} must have length {n}, got {out.shape[0]}")
    return out


def _matrix(v, n: int, where: str) -> np.ndarray:
    if not isinstance(v, list) or len(v) != n or any(not isinstance(r, list) or len(r) != n for r in v):
        shape = (len(v), len(v[0]) if v and isinstance(v[0], list) else 0) if isinstance(v, list) else None
        raise _schema(f"{where} must be a {n}x{n} matrix, got shape {shape}")
    return np.array([[_number(e, f"{where}[{i}][{j}]") for j, e in enumerate(r)] for i, r in enumerate(v)])


def _reset_fields(obj: dict, n: int, where: str) -> dict:
    out = {
        "mean_gain": np.eye(n),
        "mean_offset": np.zeros(n),
        "cov_quadratic": np.zeros((n, n)),
        "cov_linear": np.zeros((n, n)),
        "cov_constant": np.zeros((n, n)),
    }
    for key in _RESET_KEYS:
        if key in obj:
            if key == "mean_offset":
                out[key] = _vector(obj[key], n, f"{where}.{key}")
            else:
                out[key] = _matrix(obj[key], n, f"{where}.{key}")
    return out


def _int(v, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise _schema(f"{where} must be an integer")
    return v


def parse_timing(obj, where: str = "model.timing") -> TimingLaw:
    if not isinstance(obj, dict) or "type" not in obj:
        raise _schema(f"{where} must be an object with a 'type'")
    kind = obj["type"]
    if kind == "phase_type":
        _check_keys(obj, {"type", "branches"}, where, ("branches",))
        if not isinstance(obj["branches"], list) or not obj["branches"]:
            raise _schema(f"{where}.branches must be a non-empty array")
        branches = []
        for i, b in enumerate(obj["branches"]):
            w = f"{where}.branches[{i}]"
            _check_keys(b, {"p", "m", "k"}, w, ("p", "m", "k"))
            branches.append(Branch(_number(b["p"], w + ".p"), _int(b["m"], w + ".m"), _number(b["k"], w + ".k")))
        return PhaseTypeMixture(tuple(branches))
    if kind == "exponential":
        _check_keys(obj, {"type", "mean"}, where, ("mean",))
        return PhaseTypeMixture.exponential(1.0 / _number(obj["mean"], where + ".mean"))
    if kind == "erlang":
        _check_keys(obj, {"type", "m", "mean"}, where, ("m", "mean"))
        m = _int(obj["m"], where + ".m")
        return PhaseTypeMixture.erlang(m, m / _number(obj["mean"], where + ".mean"))
    if kind == "deterministic":
        _check_keys(obj, {"type", "mean"}, where, ("mean",))
        return RenewalLaw("deterministic", _number(obj["mean"], where + ".mean"))
    if kind in ("gamma", "lognormal"):
        _check_keys(obj, {"type", "mean", "cv2"}, where, ("mean", "cv2"))
        return RenewalLaw(kind, _number(obj["mean"], where + ".mean"), _number(obj["cv2"], where + ".cv2"))
    raise _schema(f"unknown timing type {kind!r} in {where}")


def timing_to_dict(timing: TimingLaw) -> dict:
    if isinstance(timing, PhaseTypeMixture):
        return {"type": "phase_type", "branches": [{"p": b.p, "m": b.m, "k": b.k} for b in timing.branches]}
    if timing.kind == "deterministic":
        return {"type": "deterministic", "mean": timing.mean}
    if timing.kind == "exponential":
        return {"type": "gamma", "mean": timing.mean, "cv2": 1.0}
    return {"type": timing.kind, "mean": timing.mean, "cv2": timing.cv2}


def parse_model(obj) -> TTSHSModel:
    _check_keys(obj, _MODEL_KEYS, "model", ("dynamics", "timing"))
    dyn = obj["dynamics"]
    _check_keys(dyn, {"drift_offset", "drift_matrix"}, "model.dynamics", ("drift_offset", "drift_matrix"))
    offset = _vector(dyn["drift_offset"], None, "model.dynamics.drift_offset")
    n = offset.shape[0]
    dynamics = LinearDynamics(offset, _matrix(dyn["drift_matrix"], n, "model.dynamics.drift_matrix"))
    timing = parse_timing(obj["timing"])
    tr = obj.get("timer_reset", {})
    _check_keys(tr, set(_RESET_KEYS), "model.timer_reset")
    timer = TimerResetFamily(**_reset_fields(tr, n, "model.timer_reset"), timing=timing)
    fams = []
    mem = obj.get("memoryless_resets", [])
    if not isinstance(mem, list):
        raise _schema("model.memoryless_resets must be an array")
    for i, f in enumerate(mem):
        where = f"model.memoryless_resets[{i}]"
        _check_keys(f, set(_RESET_KEYS) | {"rate", "burst"}, where, ("rate",))
        burst = None
        fields_ = _reset_fields(f, n, where)
        if "burst" in f:
            b = f["burst"]
            _check_keys(b, {"kind", "mean", "second_moment"}, where + ".burst", ("kind", "mean"))
            sm = b.get("second_moment")
            burst = BurstSize(b["kind"], _number(b["mean"], where + ".burst.mean"), None if sm is None else _number(sm, where + ".burst.second_moment"))
            # moments implied by the burst law unless given explicitly
            if "mean_offset" not in f:
                fields_["mean_offset"] = np.full(n, burst.mean)
            if "cov_constant" not in f:
                fields_["cov_constant"] = np.full((n, n), burst.variance)
        fams.append(MemorylessResetFamily(**fields_, rate=_number(f["rate"], where + ".rate"), burst=burst))
    x0 = _vector(obj["initial_state"], n, "model.initial_state") if "initial_state" in obj else None
    return TTSHSModel(dynamics, timer, tuple(fams), x0)


def parse_run(obj) -> RunParams:
    names = {f.name: f for f in fields(RunParams)}
    _check_keys(obj, set(names), "run")
    kw = {}
    for key, v in obj.items():
        if key in ("grid_points", "paths", "seed", "threads"):
            kw[key] = _int(v, f"run.{key}")
        elif key == "t_end":
            kw[key] = _number(v, "run.t_end")
        elif key == "out":
            if v is not None and not isinstance(v, str):
                raise _schema("run.out must be a string or null")
            kw[key] = v
        else:
            if not isinstance(v, str):
                raise _schema(f"run.{key} must be a string")
            kw[key] = v
    run = RunParams(**kw)
    if run.sampler not in SAMPLER_KINDS:
        raise _schema(f"run.sampler must be one of {SAMPLER_KINDS}")
    if run.format not in ("csv", "json"):
        raise _schema("run.format must be 'csv' or 'json'")
    if run.method not in ("expm", "rk45"):
        raise _schema("run.method must be 'expm' or 'rk45'")
    return run


def config_from_dict(doc) -> RunConfig:
    _check_keys(doc, {"model", "run"}, "document", ("model",))
    try:
        model = parse_model(doc["model"])
    except TTSHSError as exc:
        if exc.code == "SCHEMA_ERROR":
            raise
        raise _schema(exc.message or exc.code) from None
    run = parse_run(doc.get("run", {}))
    report = validate_model(model)
    if not report.ok:
        raise TTSHSError("VALIDATION_ERROR", "; ".join(f"{v.code}: {v.message}" for v in report.errors))
    return RunConfig(model, run)


def load_config(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TTSHSError("PARSE_ERROR", f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return config_from_dict(doc)


def _reset_to_dict(fam) -> dict:
    return {k: getattr(fam, k).tolist() for k in _RESET_KEYS}


def model_to_dict(model: TTSHSModel) -> dict:
    mem = []
    for fam in model.memoryless_resets:
        d = {"rate": fam.rate, **_reset_to_dict(fam)}
        if fam.burst is not None:
            d["burst"] = {"kind": fam.burst.kind, "mean": fam.burst.mean, "second_moment": fam.burst.second_moment}
        mem.append(d)
    return {
        "dynamics": {
            "drift_offset": model.dynamics.drift_offset.tolist(),
            "drift_matrix": model.dynamics.drift_matrix.tolist(),
        },
        "timer_reset": _reset_to_dict(model.timer_reset),
        "timing": timing_to_dict(model.timing),
        "memoryless_resets": mem,
        "initial_state": model.initial_state.tolist(),
    }


def config_to_dict(cfg: RunConfig) -> dict:
    return {"model": model_to_dict(cfg.model), "run": asdict(cfg.run)}


def dump_config(cfg: RunConfig, path=None) -> str:
    text = json.dumps(config_to_dict(cfg), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


def with_run_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    kw = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, run=replace(cfg.run, **kw)) if kw else cfg
