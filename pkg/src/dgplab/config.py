"""Line-oriented run configuration: `section.key = value` with strict keys.

Unknown keys are rejected and every numeric value is range-checked at parse
time; parse errors carry the line number.  Seeds are mandatory (no
wall-clock entropy anywhere).
"""

from __future__ import annotations

from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


def _pos_int(x):
    v = int(x)
    if v <= 0:
        raise ValueError("must be a positive integer")
    return v


def _nonneg_int(x):
    v = int(x)
    if v < 0:
        raise ValueError("must be a nonnegative integer")
    return v


def _pos_float(x):
    v = float(x)
    if v <= 0:
        raise ValueError("must be positive")
    return v


def _prob(x):
    v = float(x)
    if not 0.0 < v < 1.0:
        raise ValueError("must lie strictly between 0 and 1")
    return v


def _bool(x):
    s = str(x).strip().lower()
    if s in ("true", "1", "yes", "on"):
        return True
    if s in ("false", "0", "no", "off"):
        return False
    raise ValueError("must be a boolean (true/false)")


def _family(x):
    s = str(x).strip().lower()
    if s not in ("ibm", "rl", "matern"):
        raise ValueError("must be one of ibm, rl, matern")
    return s


def _float_list(x):
    vals = tuple(float(tok) for tok in str(x).split(","))
    if not vals:
        raise ValueError("must be a comma-separated list of numbers")
    return vals


def _pos_int_list(x):
    vals = tuple(int(tok) for tok in str(x).split(","))
    if not vals or any(v <= 0 for v in vals):
        raise ValueError("must be a comma-separated list of positive integers")
    return vals


def _pos_float_list(x):
    vals = _float_list(x)
    if any(v <= 0 for v in vals):
        raise ValueError("entries must be positive")
    return vals


def _string(x):
    return str(x).strip()


#: section.key -> (parser, default); defaults of None mean "required when used"
KEY_TABLE = {
    "run.seed": (_nonneg_int, None),
    "run.out": (_string, "out"),
    "run.threads": (_pos_int, 1),
    "prior.family": (_family, "ibm"),
    "prior.layer_params": (_float_list, (0.0, 1.0)),
    "prior.deriv_bound": (_pos_float, 2.0),
    "prior.d": (_pos_int, 1),
    "prior.grid_m": (_pos_int, 201),
    "sample.count": (_pos_int, 1),
    "sample.max_attempts": (_pos_int, 100_000),
    "smallball.m": (_pos_int, 512),
    "smallball.eps": (_pos_float_list, (0.15, 0.2, 0.3, 0.45, 0.6)),
    "smallball.n_per_level": (_pos_int, 2000),
    "smallball.levels": (_pos_int, 60),
    "smallball.batches": (_pos_int, 8),
    "smallball.bridge_correction": (_bool, False),
    "concentration.eps": (_pos_float_list, (0.2, 0.3, 0.5)),
    "concentration.n_mc": (_pos_int, 20_000),
    "concentration.n_per_level": (_pos_int, 800),
    "concentration.batches": (_pos_int, 4),
    "concentration.max_levels": (_pos_int, 70),
    "concentration.ordering": (_bool, False),
    "fit.task": (_string, "density"),
    "fit.n": (_pos_int, 200),
    "fit.beta": (_pos_float, 1.5),
    "fit.truth_m": (_pos_int, 401),
    "fit.iters": (_pos_int, 2000),
    "fit.burnin": (_nonneg_int, 500),
    "fit.thin": (_pos_int, 10),
    "fit.quantile": (_prob, 0.9),
    "study.beta": (_pos_float, 1.5),
    "study.n_schedule": (_pos_int_list, (100, 200, 400, 800, 1600, 3200)),
    "study.replicates": (_pos_int, 5),
    "study.iters": (_pos_int, 3000),
    "study.burnin": (_nonneg_int, 1000),
    "study.thin": (_pos_int, 10),
    "study.quantile": (_prob, 0.9),
    "study.truth_m": (_pos_int, 401),
    "check.pairs": (_pos_int, 500),
    "check.constraint_trials": (_pos_int, 100_000),
    "check.correlation_n": (_pos_int, 100_000),
    "check.ordering_eps": (_pos_float_list, (0.4,)),
    "check.n_mc": (_pos_int, 10_000),
    "check.n_per_level": (_pos_int, 600),
    "check.batches": (_pos_int, 4),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        if key not in KEY_TABLE:
            raise ConfigError(f"unknown configuration key {key!r}")
        if key in self.values:
            return self.values[key]
        default = KEY_TABLE[key][1]
        if default is None:
            raise ConfigError(f"configuration key {key!r} is required")
        return default

    def override(self, key: str, value) -> None:
        self.values[key] = value


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in KEY_TABLE:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        parser = KEY_TABLE[key][0]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: invalid value for {key!r}: {exc}") from None
    return RunConfig(values)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), source=str(path))
