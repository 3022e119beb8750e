"""Line-oriented ``section.key = value`` files.

Lines starting with ``#`` are comments. A value may carry a provenance note
after ``|``. Numeric values may be written as exact ratios (``173 / 13``).
"""

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclass(frozen=True)
class Entry:
    key: str
    raw: str
    note: str
    line: int


class KvDoc:
    """Parsed key/value document with typed, path-reporting accessors."""

    def __init__(self, entries, source="<string>"):
        self.entries = {}
        self.source = source
        for e in entries:
            if e.key in self.entries:
                raise ConfigError(f"duplicate key (line {e.line})", e.key)
            self.entries[e.key] = e
        self._used = set()

    @classmethod
    def parse(cls, text, source="<string>"):
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"expected 'key = value' at line {lineno}", source)
            key, _, rest = stripped.partition("=")
            value, _, note = rest.partition("|")
            key = key.strip()
            if not key or " " in key:
                raise ConfigError(f"malformed key at line {lineno}", source)
            entries.append(Entry(key, value.strip(), note.strip(), lineno))
        return cls(entries, source)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read file: {exc.strerror}", str(path)) from None
        return cls.parse(text, str(path))

    def __contains__(self, key):
        return key in self.entries

    def keys(self, prefix=""):
        return [k for k in self.entries if k.startswith(prefix)]

    def note(self, key):
        return self.entries[key].note

    def _raw(self, key, default):
        if key not in self.entries:
            if default is _MISSING:
                raise ConfigError("required key missing", key)
            return None
        self._used.add(key)
        return self.entries[key].raw

    def str(self, key, default=None, choices=None):
        raw = self._raw(key, _MISSING if default is None else default)
        if raw is None:
            return default
        if choices is not None and raw not in choices:
            raise ConfigError(f"{raw!r} not one of {sorted(choices)}", key)
        return raw

    def num(self, key, default=None, positive=False, nonnegative=False):
        raw = self._raw(key, _MISSING if default is None else default)
        if raw is None:
            value = Fraction(default)
        else:
            value = parse_number(raw, key)
        if positive and value <= 0:
            raise ConfigError("must be > 0", key)
        if nonnegative and value < 0:
            raise ConfigError("must be >= 0", key)
        return value

    def int(self, key, default=None, nonnegative=True):
        value = self.num(key, default, nonnegative=nonnegative)
        if value.denominator != 1:
            raise ConfigError("must be an integer", key)
        return int(value)

    def bool(self, key, default=None):
        raw = self._raw(key, _MISSING if default is None else default)
        if raw is None:
            return bool(default)
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{raw!r} is not a boolean", key)

    def list(self, key, default=None):
        raw = self._raw(key, _MISSING if default is None else default)
        if raw is None:
            return list(default)
        return [p.strip() for p in raw.split(",") if p.strip()]

    def nums(self, key, default=None, positive=False):
        out = []
        for i, part in enumerate(self.list(key, default)):
            v = parse_number(part, f"{key}[{i}]")
            if positive and v <= 0:
                raise ConfigError("must be > 0", f"{key}[{i}]")
            out.append(v)
        return out

    def unused(self):
        return sorted(set(self.entries) - self._used)


_MISSING = object()


def parse_number(raw, path=None):
    text = raw.strip()
    try:
        if "/" in text:
            num, _, den = text.partition("/")
            value = Fraction(num.strip()) / Fraction(den.strip())
        else:
            value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{raw!r} is not a number", path) from None
    return value
