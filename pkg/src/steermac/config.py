"""
Sectioned ``key = value`` experiment files.

Example::

    [scenario]
    mode = misaligned
    P = 24
    seed = 7
    extra_slots = 2

    [assignment]
    M = 32

    [noise]
    sigma2 = 1e-6

    [transmitter.0]
    id = 3
    packet = 200 60 140 20 5 ...
    arrival_slot = 2
    symbol_offset = 5

Without ``[transmitter.*]`` sections a random scenario with ``K``
transmitters is drawn from the seed. A ``[sweep]`` section configures the
Monte Carlo harness.
"""

import configparser
import re
from dataclasses import dataclass, field, replace
from typing import Optional

from .airsim import MODES, Scenario, TransmitterSpec, make_equally_spaced_assignment, random_scenario
from .decoder import DEFAULT_ALPHA
from .errors import SteermacError
from .harness import DEFAULT_EXTRA_SLOTS, DEFAULT_SIGMA2_GRID, SweepConfig


class ConfigError(SteermacError, ValueError):
    """Invalid experiment file; ``line`` and ``column`` are 1-based."""

    def __init__(self, message, line=1, column=1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    M: int
    P: int
    sigma2: float = 0.0
    factor2: Optional[bool] = None
    seed: int = 0
    extra_slots: int = 2
    alpha: float = DEFAULT_ALPHA
    K: Optional[int] = None
    transmitters: tuple = ()
    sweep: Optional[dict] = field(default=None, compare=True)

    @property
    def factor2_enabled(self):
        if self.factor2 is not None:
            return self.factor2
        return self.mode in ("misaligned", "static_gain", "fading")

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def scenario(self):
        """Scenario described by the file (explicit or seeded random)."""
        if self.transmitters:
            return Scenario(
                make_equally_spaced_assignment(self.M),
                self.transmitters,
                self.P,
                sigma2=self.sigma2,
                factor2_enabled=self.factor2_enabled,
                seed=self.seed,
                fading=self.mode == "fading",
            )
        return random_scenario(
            self.mode, M=self.M, K=self.K or 0, P=self.P, sigma2=self.sigma2, seed=self.seed, factor2=self.factor2
        )

    def sweep_config(self):
        sw = dict(self.sweep or {})
        return SweepConfig(
            M=self.M,
            K=sw.get("K", self.K or 8),
            P=self.P,
            sigma2_grid=sw.get("sigma2_grid", DEFAULT_SIGMA2_GRID),
            extra_slots_grid=sw.get("extra_slots_grid", DEFAULT_EXTRA_SLOTS),
            trials=sw.get("trials", 1000),
            mode=self.mode,
            seed=self.seed,
            oracle_rank=sw.get("oracle_rank", True),
            forced_ser=sw.get("forced_ser", True),
            alpha=self.alpha,
            workers=sw.get("workers", 1),
        )


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_SECTION = re.compile(r"^\s*\[([^\]]*)\]")
_OPTION = re.compile(r"^\s*([^=:\s][^=:]*?)\s*[=:]\s*")


class _Locator:
    """Maps ``(section, key)`` to the 1-based position of its value."""

    def __init__(self, text):
        self.sections = {}
        self.values = {}
        self.keys = {}
        current = None
        for lineno, line in enumerate(text.splitlines(), 1):
            m = _SECTION.match(line)
            if m:
                current = m.group(1).strip()
                self.sections[current] = (lineno, line.index("[") + 1)
                continue
            m = _OPTION.match(line)
            if m and current is not None and not line.lstrip().startswith(("#", ";")):
                key = m.group(1).strip().lower()
                self.values[(current, key)] = (lineno, m.end() + 1)
                self.keys[(current, key)] = (lineno, len(line) - len(line.lstrip()) + 1)

    def value(self, section, key):
        return self.values.get((section, key.lower()), self.section(section))

    def key(self, section, key):
        return self.keys.get((section, key.lower()), self.section(section))

    def section(self, section):
        return self.sections.get(section, (1, 1))


_BOOL = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


def _number(token):
    return complex(token) if "j" in token.lower() else float(token)


def _list(raw, conv):
    return tuple(conv(tok) for tok in re.split(r"[\s,]+", raw.strip()) if tok)


class _Reader:
    def __init__(self, parser, locator):
        self.cp = parser
        self.loc = locator

    def get(self, section, key, conv, default=None, required=False):
        if not self.cp.has_section(section) or not self.cp.has_option(section, key):
            if required:
                line, col = self.loc.section(section)
                where = f"[{section}]" if self.cp.has_section(section) else f"section [{section}]"
                raise ConfigError(f"missing required key {key!r} in {where}", line, col)
            return default
        raw = self.cp.get(section, key)
        try:
            return conv(raw)
        except (ValueError, TypeError, SteermacError) as exc:
            line, col = self.loc.value(section, key)
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})", line, col) from None


def _bool(raw):
    try:
        return _BOOL[raw.strip().lower()]
    except KeyError:
        raise ValueError("expected true/false") from None


def _int(raw):
    v = float(raw)
    if not v.is_integer():
        raise ValueError("expected an integer")
    return int(v)


def _mode(raw):
    raw = raw.strip()
    if raw not in MODES:
        raise ValueError(f"mode must be one of {', '.join(MODES)}")
    return raw


_SCENARIO_KEYS = {"mode", "p", "factor2", "seed", "extra_slots", "alpha", "k"}
_TX_KEYS = {"id", "packet", "arrival_slot", "symbol_offset", "static_gain", "fading"}
_SWEEP_KEYS = {"k", "trials", "sigma2_grid", "extra_slots_grid", "oracle_rank", "forced_ser", "workers"}
_ALLOWED = {"scenario": _SCENARIO_KEYS, "assignment": {"m"}, "noise": {"sigma2"}, "sweep": _SWEEP_KEYS}


def parse_config(text):
    """Parse an experiment file, raising :class:`ConfigError` with its position."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str.lower
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("expected a [section] header", exc.lineno, 1) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else 1
        raise ConfigError("malformed line", lineno, 1) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno or 1, 1) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", exc.lineno or 1, 1) from None
    loc = _Locator(text)
    rd = _Reader(cp, loc)

    tx_sections = sorted((s for s in cp.sections() if s.startswith("transmitter.")), key=lambda s: _tx_index(s, loc))
    for section in cp.sections():
        allowed = _TX_KEYS if section in tx_sections else _ALLOWED.get(section)
        if allowed is None:
            line, col = loc.section(section)
            raise ConfigError(f"unknown section [{section}]", line, col)
        for key in cp.options(section):
            if key not in allowed:
                line, col = loc.key(section, key)
                raise ConfigError(f"unknown key {key!r} in [{section}]", line, col)

    mode = rd.get("scenario", "mode", _mode, required=True)
    P = rd.get("scenario", "P", _int, required=True)
    M = rd.get("assignment", "M", _int, required=True)
    cfg = dict(
        mode=mode,
        M=M,
        P=P,
        sigma2=rd.get("noise", "sigma2", float, 0.0),
        factor2=rd.get("scenario", "factor2", _bool),
        seed=rd.get("scenario", "seed", _int, 0),
        extra_slots=rd.get("scenario", "extra_slots", _int, 2),
        alpha=rd.get("scenario", "alpha", float, DEFAULT_ALPHA),
        K=rd.get("scenario", "K", _int),
    )
    transmitters = []
    for section in tx_sections:
        try:
            transmitters.append(
                TransmitterSpec(
                    id=rd.get(section, "id", _int, required=True),
                    packet=rd.get(section, "packet", lambda r: _list(r, _number), required=True),
                    arrival_slot=rd.get(section, "arrival_slot", _int, 1),
                    symbol_offset=rd.get(section, "symbol_offset", _int, 0),
                    static_gain=rd.get(section, "static_gain", complex, 1.0),
                    fading=rd.get(section, "fading", lambda r: _list(r, complex)),
                )
            )
        except SteermacError as exc:
            if isinstance(exc, ConfigError):
                raise
            line, col = loc.section(section)
            raise ConfigError(str(exc), line, col) from None
    cfg["transmitters"] = tuple(transmitters)
    if not transmitters and cfg["K"] is None and not cp.has_section("sweep"):
        line, col = loc.section("scenario")
        raise ConfigError("give [transmitter.*] sections or K for a random scenario", line, col)
    if cp.has_section("sweep"):
        sw = {}
        for key, conv in (
            ("K", _int),
            ("trials", _int),
            ("sigma2_grid", lambda r: _list(r, float)),
            ("extra_slots_grid", lambda r: _list(r, _int)),
            ("oracle_rank", _bool),
            ("forced_ser", _bool),
            ("workers", _int),
        ):
            v = rd.get("sweep", key, conv)
            if v is not None:
                sw[key] = v
        cfg["sweep"] = sw
    config = ExperimentConfig(**cfg)
    _validate(config, loc)
    return config


def _tx_index(section, loc):
    tail = section.split(".", 1)[1]
    if not tail.isdigit():
        line, col = loc.section(section)
        raise ConfigError(f"transmitter section needs a numeric index, got [{section}]", line, col)
    return int(tail)


def _validate(config, loc):
    """Check the file describes a well-formed scenario before anything runs."""
    try:
        if config.transmitters:
            config.scenario()
        elif config.sweep is not None:
            config.sweep_config()
        else:
            config.scenario()
    except SteermacError as exc:
        line, col = loc.section("scenario")
        raise ConfigError(str(exc), line, col) from None


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, complex):
        return repr(x)
    if isinstance(x, bool):
        return "true" if x else "false"
    return repr(x)


def format_config(config: ExperimentConfig):
    """Serialize so that ``parse_config(format_config(c)) == c``."""
    out = ["[scenario]", f"mode = {config.mode}", f"P = {config.P}", f"seed = {config.seed}",
           f"extra_slots = {config.extra_slots}", f"alpha = {config.alpha!r}"]
    if config.factor2 is not None:
        out.append(f"factor2 = {_fmt(config.factor2)}")
    if config.K is not None:
        out.append(f"K = {config.K}")
    out += ["", "[assignment]", f"M = {config.M}", "", "[noise]", f"sigma2 = {config.sigma2!r}"]
    for i, t in enumerate(config.transmitters):
        out += [
            "",
            f"[transmitter.{i}]",
            f"id = {t.id}",
            "packet = " + " ".join(_fmt(x) for x in t.packet),
            f"arrival_slot = {t.arrival_slot}",
            f"symbol_offset = {t.symbol_offset}",
            f"static_gain = {t.static_gain!r}",
        ]
        if t.fading is not None:
            out.append("fading = " + " ".join(repr(x) for x in t.fading))
    if config.sweep is not None:
        out += ["", "[sweep]"]
        for key, value in config.sweep.items():
            if isinstance(value, tuple):
                value = ", ".join(_fmt(v) for v in value)
            else:
                value = _fmt(value)
            out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"


def scenario_config(scenario, mode, extra_slots=2, alpha=DEFAULT_ALPHA):
    """Ground-truth file for a concrete scenario."""
    return ExperimentConfig(
        mode=mode,
        M=scenario.assignment.size,
        P=scenario.P,
        sigma2=scenario.sigma2,
        factor2=scenario.factor2_enabled,
        seed=scenario.seed,
        extra_slots=extra_slots,
        alpha=alpha,
        transmitters=scenario.transmitters,
    )
