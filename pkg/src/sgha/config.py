"""Run configuration: presets, flat ``key = value`` files and precedence.

Precedence is flag > config file > preset default. Keys use dots for
nesting, e.g. ``loss.lambda_mid = 2.5``; ``#`` starts a comment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .attack import AttackConfig, parse_fraction
from .errors import ConfigError, ParameterError
from .objectives import LossWeights
from .surrogate import SurrogateConfig

PRESETS = {
    "vitb-paper": {
        "surrogate": SurrogateConfig(),
        "epsilon": 8 / 255, "alpha": 1 / 255, "steps": 100, "k": 5, "tau": 5.0,
        "layers": (7, 9, 11),
        "loss": LossWeights(lambda_anc=1.0, lambda_feat=1.5, lambda_cls=1.0, lambda_spa=0.7, lambda_mid=2.5),
    },
    # small and fast; used by the CLI tests
    "tiny": {
        "surrogate": SurrogateConfig(image_size=32, patch_size=8, depth_img=8, depth_txt=8, width=16,
                                     heads=2, proj_dim=8, seed=7),
        "epsilon": 8 / 255, "alpha": 1 / 255, "steps": 10, "k": 3, "tau": 5.0,
        "layers": (5, 6, 7),
        "loss": LossWeights(),
    },
}
DEFAULT_PRESET = "vitb-paper"


@dataclass(frozen=True)
class RunConfig:
    preset: str = DEFAULT_PRESET
    epsilon: float = 8 / 255
    alpha: float = 1 / 255
    steps: int = 100
    k: int = 5
    tau: float = 5.0
    layers: tuple = (7, 9, 11)
    seed: int = 0
    record_trace: bool = True
    loss: LossWeights = field(default_factory=LossWeights)
    weights: str | None = None
    clean: str | None = None
    pool: str | None = None
    targets: str | None = None
    output: str | None = None
    adv: str | None = None
    eval_seeds: tuple = (11,)
    defenses: tuple = ("none", "bit4")

    def attack_config(self) -> AttackConfig:
        return AttackConfig(epsilon=self.epsilon, alpha=self.alpha, steps=self.steps, k=self.k, tau=self.tau,
                            layers=self.layers, loss_weights=self.loss, seed=self.seed,
                            record_trace=self.record_trace)

    @property
    def surrogate(self) -> SurrogateConfig:
        return PRESETS[self.preset]["surrogate"]

    def echo(self) -> str:
        """Effective configuration in the same ``key = value`` format the loader reads."""
        lines = []
        for key, value in flat_items(self):
            lines.append(f"{key} = {format_value(value)}")
        return "\n".join(lines) + "\n"


def flat_items(cfg: RunConfig):
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "loss":
            for lf in fields(LossWeights):
                yield f"loss.{lf.name}", getattr(v, lf.name)
        elif f.name == "eval_seeds":
            yield "eval.seeds", v
        elif f.name == "defenses":
            yield "eval.defenses", v
        else:
            yield f.name, v


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(t) for t in v)
    return str(v)


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_tuple(s):
    if isinstance(s, tuple):
        return tuple(int(t) for t in s)
    return tuple(int(t) for t in str(s).replace(" ", "").split(",") if t)


def _str_tuple(s):
    if isinstance(s, tuple):
        return s
    return tuple(t.strip() for t in str(s).split(",") if t.strip())


def _opt_str(s):
    return None if s in (None, "") else str(s)


def _num(s):
    return s if isinstance(s, (int, float)) and not isinstance(s, bool) else parse_fraction(s)


def _int(s):
    if isinstance(s, int) and not isinstance(s, bool):
        return s
    f = parse_fraction(s)
    if f != int(f):
        raise ValueError(f"not an integer: {s!r}")
    return int(f)


PARSERS = {
    "preset": str, "epsilon": _num, "alpha": _num, "steps": _int, "k": _int, "tau": _num,
    "layers": _int_tuple, "seed": _int, "record_trace": lambda s: s if isinstance(s, bool) else _parse_bool(s),
    "weights": _opt_str, "clean": _opt_str, "pool": _opt_str, "targets": _opt_str, "output": _opt_str,
    "adv": _opt_str, "eval.seeds": _int_tuple, "eval.defenses": _str_tuple,
    **{f"loss.{f.name}": _num for f in fields(LossWeights)},
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into a dict of raw strings; rejects unknown or repeated keys."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in PARSERS:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{n}: key {key!r} given twice")
        out[key] = value.strip()
    return out


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config_text(p.read_text(encoding="utf-8"), str(p))


def preset_defaults(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    p = PRESETS[name]
    return RunConfig(preset=name, epsilon=p["epsilon"], alpha=p["alpha"], steps=p["steps"], k=p["k"],
                     tau=p["tau"], layers=p["layers"], loss=p["loss"])


def resolve(file_values: dict | None = None, flag_values: dict | None = None) -> RunConfig:
    """Merge preset defaults, config-file values and flags (later wins)."""
    merged = {**(file_values or {}), **{k: v for k, v in (flag_values or {}).items() if v is not None}}
    for key in merged:
        if key not in PARSERS:
            raise ConfigError(f"unknown key {key!r}")
    cfg = preset_defaults(str(merged.get("preset", DEFAULT_PRESET)))
    updates, loss = {}, {}
    for key, raw in merged.items():
        if key == "preset":
            continue
        try:
            val = PARSERS[key](raw)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc
        if key.startswith("loss."):
            loss[key[5:]] = val
        elif key == "eval.seeds":
            updates["eval_seeds"] = val
        elif key == "eval.defenses":
            updates["defenses"] = val
        else:
            updates[key] = val
    try:
        if loss:
            updates["loss"] = replace(cfg.loss, **loss)
        cfg = replace(cfg, **updates)
        cfg.attack_config()
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg
