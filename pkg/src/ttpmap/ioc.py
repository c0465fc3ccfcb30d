"""Indicator-of-compromise detection and placeholder substitution.

Model tokenizers shred literal indicators (IPs, hashes, URLs, ...) into
uninformative pieces, so both corpus text and queries replace each
indicator with a generic placeholder phrase before any ranking happens.
Defanged forms (hxxp://, 1.2.3[.]4) normalize the same as fanged ones.
"""

from __future__ import annotations

import ipaddress
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

_DEFANG_DOT_RE = re.compile(r"\[\.\]|\(\.\)|\{\.\}")
_TRAILING_PUNCT = ".,;:!?'\")]}"

IOC_CLASS_NAMES = (
    "file_path",
    "domain",
    "url",
    "email",
    "ip_address",
    "asn",
    "cve",
    "attack_technique_ref",
    "hash",
    "registry_key",
    "bitcoin_address",
)


@dataclass(frozen=True)
class Replacement:
    span: tuple[int, int]  # byte offsets into the UTF-8 encoded input
    ioc_class: str
    literal: str


@dataclass(frozen=True)
class NormalizedText:
    text: str
    replacements: tuple[Replacement, ...]


@dataclass(frozen=True)
class _Rule:
    ioc_class: str
    placeholder: str
    precedence: int
    pattern: re.Pattern[str]
    validator: str | None
    trim_trailing_punct: bool


@lru_cache(maxsize=1)
def _tld_set() -> frozenset[str]:
    text = resources.files("ttpmap.data").joinpath("tlds.txt").read_text(encoding="utf-8")
    return frozenset(
        line.strip().lower()
        for line in text.splitlines()
        if line.strip() and not line.startswith("#")
    )


def refang(literal: str) -> str:
    """Strip the supported defang wrappers from a matched literal."""
    out = _DEFANG_DOT_RE.sub(".", literal)
    out = out.replace("[:]//", "://")
    out = re.sub(r"\[@\]|\(@\)|\[at\]|\(at\)", "@", out)
    out = re.sub(r"^h[xt]{2}p", "http", out, flags=re.IGNORECASE)
    return out


class IocRuleset:
    """Compiled recognition rules; immutable and safe to share."""

    def __init__(self, spec: dict):
        self.version = spec["version"]
        precedence = list(spec["precedence"])
        self.placeholders: dict[str, str] = {}
        self._rules: list[_Rule] = []
        for name, cls in spec["classes"].items():
            if name not in precedence:
                raise ValueError(f"class {name!r} missing from precedence list")
            self.placeholders[name] = cls["placeholder"]
            for pat in cls["patterns"]:
                flags = re.IGNORECASE if pat.get("ignore_case") else 0
                self._rules.append(
                    _Rule(
                        ioc_class=name,
                        placeholder=cls["placeholder"],
                        precedence=precedence.index(name),
                        pattern=re.compile(pat["regex"], flags),
                        validator=pat.get("validator"),
                        trim_trailing_punct=bool(pat.get("trim_trailing_punct")),
                    )
                )
        missing = set(IOC_CLASS_NAMES) - set(self.placeholders)
        if missing:
            raise ValueError(f"ruleset missing required classes: {sorted(missing)}")

    @classmethod
    def from_file(cls, path: str | Path) -> IocRuleset:
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def default(cls) -> IocRuleset:
        return _default_ruleset()

    def _validate(self, rule: _Rule, literal: str) -> bool:
        if rule.validator is None:
            return True
        if rule.validator == "ip":
            try:
                ipaddress.ip_address(refang(literal))
                return True
            except ValueError:
                return False
        if rule.validator == "domain_tld":
            labels = _DEFANG_DOT_RE.sub(".", literal).split(".")
            return len(labels) >= 2 and labels[-1].lower() in _tld_set()
        raise ValueError(f"unknown validator {rule.validator!r}")

    def _candidates(self, text: str) -> list[tuple[int, int, _Rule, str]]:
        found = []
        for rule in self._rules:
            for m in rule.pattern.finditer(text):
                start, end = m.start(), m.end()
                literal = m.group()
                if rule.trim_trailing_punct:
                    while literal and literal[-1] in _TRAILING_PUNCT:
                        literal = literal[:-1]
                        end -= 1
                if not literal:
                    continue
                if not self._validate(rule, literal):
                    continue
                found.append((start, end, rule, literal))
        return found

    def normalize(self, text: str) -> NormalizedText:
        """Replace every maximal indicator match with its placeholder.

        Overlaps resolve to the longer match; equal lengths fall back to the
        fixed class precedence. Text without indicators passes through
        unchanged.
        """
        candidates = self._candidates(text)
        if not candidates:
            return NormalizedText(text=text, replacements=())
        # Longest match wins; precedence breaks ties; leftmost for stability.
        candidates.sort(key=lambda c: (-(c[1] - c[0]), c[2].precedence, c[0]))
        chosen: list[tuple[int, int, _Rule, str]] = []
        for cand in candidates:
            if all(cand[1] <= c[0] or cand[0] >= c[1] for c in chosen):
                chosen.append(cand)
        chosen.sort(key=lambda c: c[0])

        out_parts: list[str] = []
        replacements: list[Replacement] = []
        pos = 0
        byte_pos = 0
        for start, end, rule, literal in chosen:
            prefix = text[pos:start]
            out_parts.append(prefix)
            byte_start = byte_pos + len(prefix.encode("utf-8"))
            byte_end = byte_start + len(text[start:end].encode("utf-8"))
            out_parts.append(rule.placeholder)
            replacements.append(
                Replacement(span=(byte_start, byte_end), ioc_class=rule.ioc_class, literal=literal)
            )
            pos = end
            byte_pos = byte_end
        out_parts.append(text[pos:])
        return NormalizedText(text="".join(out_parts), replacements=tuple(replacements))

    def classify(self, token: str) -> str | None:
        """Class that normalize() would assign to this token in isolation."""
        result = self.normalize(token)
        if result.replacements:
            return result.replacements[0].ioc_class
        return None


@lru_cache(maxsize=1)
def _default_ruleset() -> IocRuleset:
    spec = json.loads(
        resources.files("ttpmap.data").joinpath("ioc_rules.json").read_text(encoding="utf-8")
    )
    return IocRuleset(spec)


def normalize(text: str) -> NormalizedText:
    return IocRuleset.default().normalize(text)


def classify(token: str) -> str | None:
    return IocRuleset.default().classify(token)


def apply_replacements(text: str, replacements: tuple[Replacement, ...], placeholders: dict[str, str] | None = None) -> str:
    """Rebuild the normalized output from the input and replacement records."""
    if placeholders is None:
        placeholders = IocRuleset.default().placeholders
    raw = text.encode("utf-8")
    parts: list[bytes] = []
    pos = 0
    for rep in replacements:
        start, end = rep.span
        parts.append(raw[pos:start])
        parts.append(placeholders[rep.ioc_class].encode("utf-8"))
        pos = end
    parts.append(raw[pos:])
    return b"".join(parts).decode("utf-8")
