"""Synthetic event-driven market simulator, temporal splitting, and JSONL
dataset ingestion.

The base series is a mean-reverting AR(1) path. Each event is released at a
path index with enough spacing that look-back windows and forecast targets
of neighboring events never overlap. For an informative event (probability
signal_fraction) a direction token is planted in the script and the
post-event innovations receive a constant drift whose steady-state level is
signal_strength with the token's sign; uninformative events carry pure
filler scripts and no drift. Everything is a pure function of the seed:
the path innovations, per-event metadata, and scripts come from independent
derived streams, so toggling event parameters never perturbs the path draw.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .encoders import CATEGORY_ORDER, EventCategory, EventScript, FutureSegment, MarketWindow
from .errors import ConfigError, DataError

UP_TOKEN = 1
DOWN_TOKEN = 2
FIRST_FILLER_TOKEN = 3

_PATH_STREAM = 0
_EVENT_STREAM = 1


@dataclass
class ScenarioConfig:
    num_events: int = 200
    lookback: int = 35
    horizon: int = None  # defaults to lookback
    d_x: int = 1
    d_y: int = 1
    vocab_size: int = 64
    script_len_min: int = 8
    script_len_max: int = 16
    signal_fraction: float = 0.5
    signal_strength: float = 0.3
    noise_level: float = 0.1
    ar_coeff: float = 0.9
    signal_copies: int = 3
    event_gap_jitter: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.horizon is None:
            self.horizon = self.lookback
        if self.num_events < 1:
            raise ConfigError("num_events must be >= 1")
        if self.lookback < 1 or self.horizon < 1:
            raise ConfigError("lookback and horizon must be >= 1")
        if self.d_x < 1 or self.d_y < 1 or self.d_y > self.d_x:
            raise ConfigError("need 1 <= d_y <= d_x")
        if self.vocab_size <= FIRST_FILLER_TOKEN:
            raise ConfigError(
                f"vocab_size must exceed {FIRST_FILLER_TOKEN} (signal tokens + filler)"
            )
        if not 1 <= self.script_len_min <= self.script_len_max:
            raise ConfigError("need 1 <= script_len_min <= script_len_max")
        if not 0.0 <= self.signal_fraction <= 1.0:
            raise ConfigError("signal_fraction must lie in [0, 1]")
        if self.signal_strength < 0:
            raise ConfigError("signal_strength must be >= 0")
        if self.noise_level <= 0:
            raise ConfigError("noise_level must be > 0")
        if not 0.0 <= self.ar_coeff < 1.0:
            raise ConfigError("ar_coeff must lie in [0, 1)")


@dataclass
class AlignedInstance:
    uid: int
    script: EventScript
    window: MarketWindow
    target: FutureSegment
    text_informative: bool = None  # simulator ground truth; None when unknown
    direction: int = 0


@dataclass
class Dataset:
    instances: list
    base_path: np.ndarray = None  # (T, d_x), present for generated data
    config: ScenarioConfig = None


@dataclass
class SplitSpec:
    fractions: tuple = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise ConfigError("split needs three nonnegative fractions")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")


def _event_rng(seed, index):
    return np.random.default_rng(
        np.random.PCG64(np.random.SeedSequence((seed, _EVENT_STREAM, index)))
    )


def generate(config):
    """Simulate a scenario; bit-identical for the same config."""
    L, H = config.lookback, config.horizon
    releases = []
    flags = []
    directions = []
    scripts_meta = []
    t = L - 1
    for i in range(config.num_events):
        rng = _event_rng(config.seed, i)
        jitter = int(rng.integers(0, config.event_gap_jitter + 1))
        t = t + jitter if i == 0 else t + L + H + 1 + jitter
        informative = bool(rng.random() < config.signal_fraction)
        direction = int(rng.choice((1, -1))) if informative else 0
        length = int(rng.integers(config.script_len_min, config.script_len_max + 1))
        tokens = rng.integers(FIRST_FILLER_TOKEN, config.vocab_size, size=length)
        if informative:
            n_plant = min(config.signal_copies, length)
            spots = rng.choice(length, size=n_plant, replace=False)
            tokens[spots] = UP_TOKEN if direction > 0 else DOWN_TOKEN
        category = CATEGORY_ORDER[int(rng.integers(0, len(CATEGORY_ORDER)))]
        releases.append(t)
        flags.append(informative)
        directions.append(direction)
        scripts_meta.append((tokens.tolist(), category))

    total = releases[-1] + H + 1
    drift = np.zeros((total, config.d_x))
    step_drift = config.signal_strength * (1.0 - config.ar_coeff)
    for t_i, informative, direction in zip(releases, flags, directions):
        if informative and config.signal_strength > 0:
            drift[t_i + 1 : t_i + H + 1, : config.d_y] += direction * step_drift

    path_rng = np.random.default_rng(
        np.random.PCG64(np.random.SeedSequence((config.seed, _PATH_STREAM)))
    )
    innovations = path_rng.standard_normal((total, config.d_x))
    path = kernels.ar1_path(innovations, drift, config.ar_coeff, config.noise_level)

    instances = []
    for i, (t_i, informative, direction) in enumerate(zip(releases, flags, directions)):
        tokens, category = scripts_meta[i]
        instances.append(
            AlignedInstance(
                uid=i,
                script=EventScript(tokens, release_time=t_i, category=category),
                window=MarketWindow(path[t_i - L + 1 : t_i + 1].copy()),
                target=FutureSegment(path[t_i + 1 : t_i + H + 1, : config.d_y].copy()),
                text_informative=informative,
                direction=direction,
            )
        )
    return Dataset(instances=instances, base_path=path, config=config)


def split(instances, spec=None):
    """Contiguous-in-time train/val/test split; remainder goes to train."""
    spec = spec or SplitSpec()
    n = len(instances)
    if n < 3:
        raise ConfigError(f"cannot split {n} instances three ways")
    ordered = sorted(instances, key=lambda inst: (inst.script.release_time, inst.uid))
    n_val = int(n * spec.fractions[1])
    n_test = int(n * spec.fractions[2])
    n_train = n - n_val - n_test
    return (
        ordered[:n_train],
        ordered[n_train : n_train + n_val],
        ordered[n_train + n_val :],
    )


# ---------------------------------------------------------------------------
# serialization


def write_jsonl(instances, path, with_flags=False):
    with open(path, "w") as fh:
        for inst in instances:
            row = {
                "id": inst.uid,
                "category": inst.script.category.value,
                "release_time": inst.script.release_time,
                "tokens": list(inst.script.token_ids),
                "x": inst.window.values.tolist(),
                "y": inst.target.values.tolist(),
            }
            if with_flags:
                row["text_informative"] = bool(inst.text_informative)
                row["direction"] = inst.direction
            fh.write(json.dumps(row) + "\n")


_REQUIRED_KEYS = ("id", "category", "release_time", "tokens", "x", "y")


def ingest(path):
    """Parse and validate a JSONL dataset, sorted by release time."""
    instances = []
    shapes = None
    categories = {c.value: c for c in EventCategory}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            for key in _REQUIRED_KEYS:
                if key not in row:
                    raise DataError(f"line {lineno}: missing field '{key}'")
            if row["category"] not in categories:
                raise DataError(
                    f"line {lineno}: field 'category' has unknown value {row['category']!r}"
                )
            x = np.asarray(row["x"], dtype=np.float64)
            y = np.asarray(row["y"], dtype=np.float64)
            if x.ndim != 2:
                raise DataError(f"line {lineno}: field 'x' must be a 2-d array")
            if y.ndim != 2:
                raise DataError(f"line {lineno}: field 'y' must be a 2-d array")
            if shapes is None:
                shapes = (x.shape, y.shape)
            else:
                if x.shape != shapes[0]:
                    raise DataError(
                        f"line {lineno}: field 'x' shape {x.shape} does not match "
                        f"dataset shape {shapes[0]}"
                    )
                if y.shape != shapes[1]:
                    raise DataError(
                        f"line {lineno}: field 'y' shape {y.shape} does not match "
                        f"dataset shape {shapes[1]}"
                    )
            if not all(isinstance(tok, int) for tok in row["tokens"]):
                raise DataError(f"line {lineno}: field 'tokens' must hold integers")
            instances.append(
                AlignedInstance(
                    uid=int(row["id"]),
                    script=EventScript(
                        list(row["tokens"]),
                        release_time=int(row["release_time"]),
                        category=categories[row["category"]],
                    ),
                    window=MarketWindow(x),
                    target=FutureSegment(y),
                    text_informative=row.get("text_informative"),
                    direction=int(row.get("direction", 0)),
                )
            )
    if not instances:
        warnings.warn(f"dataset file {path} is empty", stacklevel=2)
    instances.sort(key=lambda inst: (inst.script.release_time, inst.uid))
    return instances


# ---------------------------------------------------------------------------
# analytical reference predictors (used to validate scenario difficulty,
# never by the trained model)


def read_signal(token_ids):
    """Direction encoded by planted tokens: +1 up, -1 down, 0 none."""
    ids = set(token_ids)
    if UP_TOKEN in ids:
        return 1
    if DOWN_TOKEN in ids:
        return -1
    return 0


def oracle_blind(window_values, config):
    """Best predictor that ignores text: pure AR(1) decay of the last value."""
    x_last = window_values[-1, : config.d_y]
    steps = np.arange(1, config.horizon + 1)
    decay = config.ar_coeff ** steps
    return decay[:, None] * x_last[None, :]


def oracle_informed(instance, config):
    """Text-reading predictor: AR decay plus the drift implied by the
    planted direction token."""
    pred = oracle_blind(instance.window.values, config)
    direction = read_signal(instance.script.token_ids)
    if direction != 0:
        steps = np.arange(1, config.horizon + 1)
        bump = config.signal_strength * (1.0 - config.ar_coeff ** steps)
        pred = pred + direction * bump[:, None]
    return pred
