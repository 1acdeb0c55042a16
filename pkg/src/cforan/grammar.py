"""Deterministic intent grammar: operator sentences in, objective spec out.

This is the reference backend for the supervisor. A remote text-model
backend can replace it at runtime, but it must produce the same structured
payload; anything it gets wrong falls back here.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np


class IntentParseError(ValueError):
    """Raised with an explanation of the sentence that failed to parse."""


@dataclass
class Intent:
    text: str
    timestamp: int = 0                  # loop index at submission

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("intent text must be non-empty")


@dataclass
class ObjectiveSpec:
    """The supervisor's structured reading of one operator intent."""

    utility_kind: str = "sum_rate"      # sum_rate | sum_log_rate
    energy_saving: bool = False
    r_min_mbps: dict[int, float] = field(default_factory=dict)   # 1-based user label
    monitored: list[tuple[int, float]] = field(default_factory=list)

    def r_min_vector(self, num_users: int) -> np.ndarray:
        r = np.zeros(num_users)
        for label, mbps in self.r_min_mbps.items():
            if not (1 <= label <= num_users):
                raise IntentParseError(
                    f"user {label} does not exist (network has {num_users} users)")
            r[label - 1] = mbps
        return r

    def as_dict(self) -> dict:
        return {
            "utility_kind": self.utility_kind,
            "energy_saving": self.energy_saving,
            "r_min_mbps": {str(k): v for k, v in self.r_min_mbps.items()},
            "monitored": [[k, v] for k, v in self.monitored],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ObjectiveSpec":
        return cls(
            utility_kind=data["utility_kind"],
            energy_saving=bool(data["energy_saving"]),
            r_min_mbps={int(k): float(v) for k, v in data.get("r_min_mbps", {}).items()},
            monitored=[(int(k), float(v)) for k, v in data.get("monitored", [])],
        )


_ES_RE = re.compile(r"^(?:please\s+)?(?:enter|switch\s+to|activate|enable)\s+"
                    r"(?:the\s+)?energy[-\s]saving\s+mode$", re.I)
_LOG_RE = re.compile(r"^(?:please\s+)?maximi[sz]e\s+the\s+sum\s+of\s+"
                     r"(?:the\s+)?log[-\s]?rates$", re.I)
_SUM_RE = re.compile(r"^(?:please\s+)?maximi[sz]e\s+the\s+sum\s+of\s+"
                     r"(?:the\s+)?(?:data\s+)?rates?$", re.I)
_NOMIN_RE = re.compile(r"^(?:there\s+are\s+)?no\s+minimum\s+(?:data\s+)?rate\s+"
                       r"requirements?$", re.I)
_GUAR_RE = re.compile(
    r"^(?:please\s+)?guarantee\s+(\d+(?:\.\d+)?)\s*mbps\s+for\s+"
    r"(users?\s+\d+(?:(?:\s*,\s*|\s+and\s+)(?:users?\s+)?\d+)*)$", re.I)
_USER_RE = re.compile(r"\d+")


def parse_intent(text: str) -> ObjectiveSpec:
    """Parse an operator intent; unparseable sentences raise IntentParseError."""
    spec = ObjectiveSpec()
    sentences = [s.strip() for s in re.split(r"[.!]\s*", text) if s.strip()]
    if not sentences:
        raise IntentParseError("intent contains no sentences")
    for sentence in sentences:
        if _ES_RE.match(sentence):
            spec.energy_saving = True
            spec.utility_kind = "sum_rate"
        elif _LOG_RE.match(sentence):
            spec.utility_kind = "sum_log_rate"
        elif _SUM_RE.match(sentence):
            spec.utility_kind = "sum_rate"
        elif _NOMIN_RE.match(sentence):
            spec.r_min_mbps = {}
            spec.monitored = []
        else:
            match = _GUAR_RE.match(sentence)
            if match is None:
                raise IntentParseError(
                    f"cannot parse sentence: {sentence!r} (expected one of: "
                    "energy-saving mode, maximize sum of [log-]rates, "
                    "no minimum rate requirements, guarantee <x> Mbps for user <k>)")
            mbps = float(match.group(1))
            labels = [int(m) for m in _USER_RE.findall(match.group(2))]
            if not labels:
                raise IntentParseError(f"no user named in: {sentence!r}")
            for label in labels:
                spec.r_min_mbps[label] = mbps
                spec.monitored.append((label, mbps))
    return spec


def render_intent(spec: ObjectiveSpec, rng: np.random.Generator) -> str:
    """Random paraphrase of an objective; parse_intent round-trips it."""
    parts = []
    if spec.energy_saving:
        verb = rng.choice(["Enter", "Please enter", "Switch to", "Enable"])
        parts.append(f"{verb} the energy-saving mode.")
    elif spec.utility_kind == "sum_log_rate":
        verb = rng.choice(["Maximize", "Please maximize"])
        parts.append(f"{verb} the sum of log-rates.")
    else:
        verb = rng.choice(["Maximize", "Please maximize"])
        noun = rng.choice(["rates", "data rates"])
        parts.append(f"{verb} the sum of {noun}.")
    if spec.r_min_mbps:
        by_rate: dict[float, list[int]] = {}
        for label, mbps in sorted(spec.r_min_mbps.items()):
            by_rate.setdefault(mbps, []).append(label)
        for mbps, labels in by_rate.items():
            mbps_txt = f"{mbps:g}"
            if len(labels) == 1:
                users = f"user {labels[0]}"
            else:
                users = "user " + " and user ".join(str(u) for u in labels)
            parts.append(f"Guarantee {mbps_txt} Mbps for {users}.")
    else:
        parts.append("No minimum rate requirements.")
    return " ".join(parts)


def random_objective(rng: np.random.Generator, num_users: int = 8) -> ObjectiveSpec:
    """Draw a random valid objective for round-trip tests."""
    spec = ObjectiveSpec()
    mode = rng.integers(0, 3)
    if mode == 0:
        spec.energy_saving = True
        spec.utility_kind = "sum_rate"
    elif mode == 1:
        spec.utility_kind = "sum_log_rate"
    else:
        spec.utility_kind = "sum_rate"
    n_constraints = int(rng.integers(0, 3))
    labels = rng.choice(np.arange(1, num_users + 1), size=n_constraints,
                        replace=False)
    for label in sorted(int(u) for u in labels):
        mbps = float(rng.choice([5, 10, 20, 50, 100]))
        spec.r_min_mbps[label] = mbps
        spec.monitored.append((label, mbps))
    return spec
