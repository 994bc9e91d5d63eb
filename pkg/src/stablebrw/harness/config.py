"""Run configuration: flags, key-value config files and validation."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

from ..spine_law import check_alpha, make_pareto_spine

KINDS = ("calibrate", "cstar", "tube", "manytoone", "survival", "critical", "ode", "bn", "pipeline")
MODELS = ("binary_gaussian", "poisson_boundary")


def _floats(text) -> tuple:
    if isinstance(text, (int, float)):
        return (float(text),)
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text) -> tuple:
    return tuple(int(round(x)) for x in _floats(text))


@dataclass
class RunConfig:
    """Everything a run needs. List-valued fields accept comma-separated text."""

    kind: str
    alpha: float = 2.0
    c: float = 0.016
    y0: float = 0.1
    sigma: float | None = None
    a: tuple = ()
    b: float | None = None
    lambda_: float = math.log(4.0)
    n: tuple = ()
    trials: int = 1000
    seed: int = 0
    out: str = "out"
    max_pop: int = 100_000
    cap_R: int | None = None
    cut_T: float | None = None
    model: str = "binary_gaussian"
    dt: float = 1e-3
    n_bins: int = 200
    k_max: int = 3
    workers: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.a = _floats(self.a) if self.a != () else ()
        self.n = _ints(self.n) if self.n != () else ()

    @classmethod
    def from_mapping(cls, kind: str, values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        kw, extra = {}, {}
        for key, val in values.items():
            if val is None:
                continue
            name = key.replace("-", "_")
            if name == "lambda":
                name = "lambda_"
            if name == "cap_r":
                name = "cap_R"
            if name == "cut_t":
                name = "cut_T"
            if name in known and name not in ("kind", "extra"):
                kw[name] = val
            else:
                extra[name] = val
        cfg = cls(kind=kind, **kw)
        cfg.extra.update(extra)
        return cfg._coerce()

    def _coerce(self) -> "RunConfig":
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None or f.name in ("a", "n", "extra", "kind"):
                continue
            if f.name in ("trials", "seed", "max_pop", "cap_R", "n_bins", "k_max", "workers"):
                setattr(self, f.name, int(float(v)))
            elif f.name in ("alpha", "c", "y0", "sigma", "b", "lambda_", "cut_T", "dt"):
                setattr(self, f.name, float(v))
        return self

    @property
    def sigma2(self) -> float:
        """Spine variance at alpha = 2; defaults to the binary-Gaussian value 2 log 2."""
        return 2.0 * math.log(2.0) if self.sigma is None else self.sigma ** 2

    def validate(self) -> "RunConfig":
        """Check every parameter block before any computation starts."""
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        check_alpha(self.alpha)
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if self.max_pop < 1:
            raise ValueError("max-pop must be positive")
        if self.cap_R is not None and self.cap_R < 1:
            raise ValueError("cap-R must be positive")
        if any(x < 1 for x in self.n):
            raise ValueError("horizons must be positive")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.alpha < 2.0 or self.model == "poisson_boundary":
            make_pareto_spine(self.alpha, self.c, self.y0)
            if self.model == "poisson_boundary" and self.cut_T is not None \
                    and self.c * self.cut_T ** -self.alpha > 1e-3:
                raise ValueError("cut-T too small: boundary defect c*T^-alpha exceeds 1e-3")
        if self.model == "binary_gaussian" and self.kind in ("survival", "bn", "manytoone") \
                and self.alpha != 2.0:
            raise ValueError("the binary_gaussian model has alpha = 2")
        return self

    def as_dict(self) -> dict:
        d = asdict(self)
        d["a"], d["n"] = list(self.a), list(self.n)
        return d

    def hash(self) -> str:
        d = self.as_dict()
        d.pop("out")
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config_file(path) -> dict:
    """Read ``key = value`` (or ``key: value``) lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            for sep in ("=", ":"):
                if sep in line:
                    key, val = line.split(sep, 1)
                    break
            else:
                parts = line.split(None, 1)
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                key, val = parts
            out[key.strip().lstrip("-")] = val.strip()
    return out
