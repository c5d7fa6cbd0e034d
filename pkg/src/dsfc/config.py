"""Flat key=value configuration parsing and serialization.

One key per line, ``key = value``, ``#`` comments. The same key=value
vocabulary, semicolon-joined, names an envelope inside stream headers so a
decoder needs nothing but the stream.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Dict, Optional

from .distortion import DistortionSpec, RationalDistortionLevel
from .errors import ConfigInvalid
from .sources import EnvelopeSpec, builtin_envelope


def parse_number(text: str):
    """int, exact rational 'a/b', or float, in that order of preference."""
    s = text.strip()
    try:
        return int(s)
    except ValueError:
        pass
    if "/" in s:
        try:
            return Fraction(s)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigInvalid(f"bad rational {text!r}") from exc
    try:
        return float(s)
    except ValueError as exc:
        raise ConfigInvalid(f"bad number {text!r}") from exc


def parse_kv(text: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigInvalid(f"line {lineno}: empty key")
        if key in out:
            raise ConfigInvalid(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def serialize_kv(mapping: Dict[str, str]) -> str:
    return "".join(f"{k} = {mapping[k]}\n" for k in sorted(mapping))


# ---------------------------------------------------------------------------
# envelopes


def envelope_to_string(env: EnvelopeSpec) -> str:
    return ";".join(f"{k}={v}" for k, v in env.serialize_items())


def _envelope_from_items(items: Dict[str, str]) -> EnvelopeSpec:
    kind = items.get("kind")
    name = items.get("name", "")
    try:
        if kind == "polynomial":
            return EnvelopeSpec("polynomial", p=float(items["p"]), name=name)
        if kind == "exponential":
            scale = parse_number(items["K"])
            if "ratio" in items:
                return EnvelopeSpec(
                    "exponential", scale=scale, ratio=Fraction(items["ratio"]), name=name
                )
            return EnvelopeSpec(
                "exponential", scale=scale, alpha=float(items["alpha"]), name=name
            )
        if kind == "tabulated":
            table = tuple(Fraction(v) for v in items["table"].split())
            return EnvelopeSpec("tabulated", table=table, name=name)
    except ConfigInvalid:
        raise
    except (KeyError, ValueError, ZeroDivisionError) as exc:
        raise ConfigInvalid(f"bad envelope parameters: {exc}") from exc
    raise ConfigInvalid(f"unknown envelope kind {kind!r}")


def envelope_from_string(text: str) -> EnvelopeSpec:
    """Inverse of envelope_to_string; also accepts a bare built-in name."""
    if ";" not in text and "=" not in text:
        try:
            return builtin_envelope(text.strip())
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from exc
    items: Dict[str, str] = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigInvalid(f"bad envelope field {part!r}")
        k, v = part.split("=", 1)
        items[k.strip()] = v.strip()
    return _envelope_from_items(items)


def envelope_from_kv(kv: Dict[str, str], prefix: str = "envelope.") -> EnvelopeSpec:
    """Envelope from dotted keys, or from a single ``envelope`` shorthand."""
    direct = kv.get(prefix.rstrip("."))
    items = {
        key[len(prefix):]: value for key, value in kv.items() if key.startswith(prefix)
    }
    if direct is not None:
        if items:
            raise ConfigInvalid(
                "give either a single 'envelope' value or 'envelope.*' keys, not both"
            )
        return envelope_from_string(direct)
    if not items:
        raise ConfigInvalid("no envelope configured")
    return _envelope_from_items(items)


# ---------------------------------------------------------------------------
# distortion


def distortion_from_kv(kv: Dict[str, str]) -> DistortionSpec:
    kind = kv.get("distortion.kind", "absolute")
    if kind == "absolute":
        return DistortionSpec("absolute")
    if kind == "bounded":
        try:
            scale = parse_number(kv["distortion.K"])
            clip = int(kv["distortion.M"])
        except KeyError as exc:
            raise ConfigInvalid(f"bounded distortion needs {exc.args[0]}") from exc
        except ValueError as exc:
            raise ConfigInvalid(f"bad distortion parameter: {exc}") from exc
        try:
            return DistortionSpec("bounded", scale=scale, clip=clip)
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from exc
    raise ConfigInvalid(f"unknown distortion kind {kind!r}")


def distortion_to_kv(spec: DistortionSpec) -> Dict[str, str]:
    out = {"distortion.kind": spec.kind}
    if spec.kind == "bounded":
        out["distortion.K"] = str(spec.scale)
        out["distortion.M"] = str(spec.clip)
    return out


def level_from_kv(kv: Dict[str, str], key: str = "d") -> RationalDistortionLevel:
    if key not in kv:
        raise ConfigInvalid(f"missing distortion level {key!r}")
    try:
        return RationalDistortionLevel.parse(kv[key])
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigInvalid(f"bad distortion level {kv[key]!r}: {exc}") from exc


def int_from_kv(kv: Dict[str, str], key: str, default: Optional[int] = None) -> int:
    if key not in kv:
        if default is None:
            raise ConfigInvalid(f"missing required key {key!r}")
        return default
    try:
        return int(kv[key])
    except ValueError as exc:
        raise ConfigInvalid(f"key {key!r} must be an integer") from exc


def int_grid_from_kv(kv: Dict[str, str], key: str, default: str) -> tuple:
    raw = kv.get(key, default)
    try:
        values = tuple(int(v) for v in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigInvalid(f"key {key!r} must be a list of integers") from exc
    if not values or any(v < 1 for v in values):
        raise ConfigInvalid(f"key {key!r} must list positive integers")
    return values
