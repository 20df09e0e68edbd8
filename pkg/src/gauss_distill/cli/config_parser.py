"""
Flat ``key = value`` configuration files and command-line overrides.

Keys are dot-separated (``train.lr``, ``head.depth``). Blank lines and text
after ``#`` are ignored. Every value is parsed and validated up front, so a
bad key fails before any work starts.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import (
    Any,
    Callable,
    Dict,
    FrozenSet,
    List,
    Optional,
    Sequence,
    Tuple,
    Union,
)

from ..core.errors import (
    DataFormatError,
    InvalidValueError,
    MissingKeyError,
    UnknownKeyError,
    UsageError,
)
from ..core.kernels import LOSS_KINDS, LossKind
from ..core.probe import ProbeConfig
from ..core.synthbench import PRESETS, FixtureSpec
from ..core.trainer import TrainConfig

PathLike = Union[str, Path]


def _parse_int(text: str) -> int:
    return int(text)


def _parse_float(text: str) -> float:
    return float(text)


def _parse_int_list(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_str_list(text: str) -> Tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _positive(value: Any) -> Optional[str]:
    return None if value > 0 else "must be positive"


def _non_negative(value: Any) -> Optional[str]:
    return None if value >= 0 else "must be non-negative"


def _fraction(value: Any) -> Optional[str]:
    return None if 0.0 < value < 1.0 else "must lie in (0, 1)"


def _positive_list(value: Any) -> Optional[str]:
    if not value:
        return "must list at least one value"
    return None if min(value) > 0 else "entries must be positive"


def _loss_name(value: Any) -> Optional[str]:
    return None if value in LOSS_KINDS else f"expected one of {LOSS_KINDS}"


def _loss_list(value: Any) -> Optional[str]:
    if not value:
        return "must list at least one loss"
    bad = [v for v in value if v not in LOSS_KINDS]
    return f"unknown losses {bad}" if bad else None


@dataclass(frozen=True)
class KeySpec:
    parse: Callable[[str], Any]
    default: Any = None
    check: Optional[Callable[[Any], Optional[str]]] = None


KEYS: Dict[str, KeySpec] = {
    "train.epochs": KeySpec(_parse_int, None, _positive),
    "train.batch_size": KeySpec(_parse_int, 128, _positive),
    "train.lr": KeySpec(_parse_float, 1e-3, _non_negative),
    "train.val_fraction": KeySpec(_parse_float, 0.1, _fraction),
    "train.checkpoint_every": KeySpec(_parse_int, 0, _non_negative),
    "student.hidden": KeySpec(_parse_int_list, (256, 128), _positive_list),
    "student.dim": KeySpec(_parse_int, 64, _positive),
    "head.depth": KeySpec(_parse_int, 3, _positive),
    "head.hidden": KeySpec(_parse_int, 256, _positive),
    "head.var_floor": KeySpec(_parse_float, 1e-6, _positive),
    "loss.kind": KeySpec(str.strip, "nll", _loss_name),
    "loss.cosine_eps": KeySpec(_parse_float, 1e-8, _positive),
    "probe.hidden": KeySpec(_parse_int, 128, _positive),
    "probe.depth": KeySpec(_parse_int, 2, _positive),
    "probe.lr": KeySpec(_parse_float, 1e-3, _positive),
    "probe.seeds": KeySpec(_parse_int, 5, _positive),
    "probe.batch_size": KeySpec(_parse_int, 64, _positive),
    "probe.max_epochs": KeySpec(_parse_int, 100, _positive),
    "probe.min_epochs": KeySpec(_parse_int, 10, _positive),
    "synth.n": KeySpec(_parse_int, None, _positive),
    "synth.latent_dim": KeySpec(_parse_int, None, _positive),
    "synth.input_dim": KeySpec(_parse_int, None, _positive),
    "synth.teacher_dim": KeySpec(_parse_int, None, _positive),
    "synth.noise": KeySpec(_parse_float, None, _non_negative),
    "synth.losses": KeySpec(_parse_str_list, None, _loss_list),
    "synth.head_depths": KeySpec(_parse_int_list, None, _positive_list),
    "synth.epochs": KeySpec(_parse_int, None, _positive),
    "datastore.label_column": KeySpec(str.strip, None),
    "timing.steps": KeySpec(_parse_int, 100, _positive),
    "timing.teacher_counts": KeySpec(_parse_int_list, None, _positive_list),
}

# Fixture fields a config may override, keyed by config name.
_FIXTURE_FIELDS = {
    "synth.n": "n",
    "synth.latent_dim": "latent_dim",
    "synth.input_dim": "input_dim",
    "synth.teacher_dim": "teacher_dim",
    "synth.noise": "noise",
    "synth.losses": "losses",
    "synth.head_depths": "head_depths",
    "synth.epochs": "epochs",
    "train.batch_size": "batch_size",
    "train.lr": "lr",
    "student.hidden": "student_hidden",
    "student.dim": "student_dim",
    "head.hidden": "head_hidden",
    "probe.hidden": "probe_hidden",
    "probe.depth": "probe_depth",
    "probe.lr": "probe_lr",
    "probe.batch_size": "probe_batch_size",
    "probe.max_epochs": "probe_max_epochs",
    "probe.min_epochs": "probe_min_epochs",
}


@dataclass
class CliConfig:
    """Parsed configuration: every recognized key with its value.

    ``explicit`` names the keys set by the file or an override rather than
    taken from the defaults.
    """

    values: Dict[str, Any]
    explicit: FrozenSet[str] = field(default_factory=frozenset)

    def get(self, key: str) -> Any:
        if key not in KEYS:
            raise UnknownKeyError(key)
        return self.values.get(key)

    def require(self, key: str) -> Any:
        value = self.get(key)
        if value is None:
            raise MissingKeyError(key)
        return value

    def train_config(
        self, seed: int, default_epochs: Optional[int] = None
    ) -> TrainConfig:
        """Trainer settings; ``train.epochs`` must be set unless defaulted."""
        epochs = self.get("train.epochs") or default_epochs
        if epochs is None:
            raise MissingKeyError("train.epochs")
        return TrainConfig(
            seed=seed,
            epochs=epochs,
            batch_size=self.get("train.batch_size"),
            lr=self.get("train.lr"),
            loss=LossKind(self.get("loss.kind"), self.get("loss.cosine_eps")),
            student_hidden=self.get("student.hidden"),
            student_dim=self.get("student.dim"),
            head_depth=self.get("head.depth"),
            head_hidden=self.get("head.hidden"),
            var_floor=self.get("head.var_floor"),
            val_fraction=self.get("train.val_fraction"),
            checkpoint_every=self.get("train.checkpoint_every"),
        )

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(
            hidden=self.get("probe.hidden"),
            depth=self.get("probe.depth"),
            lr=self.get("probe.lr"),
            seeds=tuple(range(self.get("probe.seeds"))),
            batch_size=self.get("probe.batch_size"),
            max_epochs=self.get("probe.max_epochs"),
            min_epochs=self.get("probe.min_epochs"),
        )

    def fixture_spec(self, preset: str, seed: int) -> FixtureSpec:
        """The named preset with explicitly configured keys applied on top."""
        if preset not in PRESETS:
            raise UsageError(f"Unknown preset {preset!r}; expected {sorted(PRESETS)}")
        fixture = PRESETS[preset](seed)
        changes = {
            name: self.values[key]
            for key, name in _FIXTURE_FIELDS.items()
            if key in self.explicit
        }
        if "probe.seeds" in self.explicit:
            changes["probe_seeds"] = tuple(range(self.values["probe.seeds"]))
        return replace(fixture, **changes)


def parse_assignment(text: str, origin: str = "override") -> Tuple[str, str]:
    """Split ``key = value`` into stripped parts."""
    if "=" not in text:
        raise UsageError(f"{origin}: expected 'key = value', got {text!r}")
    key, raw = text.split("=", 1)
    return key.strip(), raw.strip()


def _convert(key: str, raw: str) -> Any:
    if key not in KEYS:
        raise UnknownKeyError(key)
    spec = KEYS[key]
    try:
        value = spec.parse(raw)
    except ValueError as exc:
        raise InvalidValueError(key, raw, str(exc)) from exc
    if spec.check is not None:
        reason = spec.check(value)
        if reason:
            raise InvalidValueError(key, raw, reason)
    return value


def read_config_file(path: PathLike) -> List[Tuple[str, str]]:
    """Assignments of a config file in file order."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"Cannot read config file {path}: {exc}") from exc
    assignments = []
    for number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if content:
            assignments.append(parse_assignment(content, f"{path}:{number}"))
    return assignments


def parse_config(path: Optional[PathLike], overrides: Sequence[str] = ()) -> CliConfig:
    """Merge defaults, the config file (if any) and overrides, in that order.

    Args:
        path: Config file, or None for defaults only
        overrides: ``key=value`` strings; later ones win

    Raises:
        UnknownKeyError: If a key is not recognized
        InvalidValueError: If a value cannot be parsed or is out of range
    """
    values = {key: spec.default for key, spec in KEYS.items()}
    assignments = read_config_file(path) if path is not None else []
    assignments += [parse_assignment(item) for item in overrides]
    explicit = set()
    for key, raw in assignments:
        values[key] = _convert(key, raw)
        explicit.add(key)
    return CliConfig(values=values, explicit=frozenset(explicit))
