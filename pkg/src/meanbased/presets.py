"""Shipped scenario configurations, one per landmark result."""

from __future__ import annotations

import copy

SEC3 = {"kind": "sec3"}
IDEAL = {"kind": "IdealizedMeanBased"}
IDEAL_CONS = {"kind": "IdealizedMeanBased", "conservative": True}
MWU_CONS = {"kind": "MWU", "conservative": True}


def _expect(T):
    return {"T": T, "trials": 1, "mode": "expectation", "seed": 0}


def _sampled(T, trials=20):
    return {"T": T, "trials": trials, "mode": "sampled", "seed": 0}


PRESETS: dict[str, dict] = {
    "sec3-arbitrary": {
        "description": "Free item for half the game, then price 1, against an idealized mean-based buyer.",
        "distribution": SEC3,
        "mechanism": {"kind": "example_arbitrary"},
        "learner": IDEAL,
        "engine": _expect(60_000),
        "output": {"series": True, "plots": True},
    },
    "sec3-critical": {
        "description": "Critical two-arm schedule against a conservative idealized buyer.",
        "distribution": SEC3,
        "mechanism": {"kind": "example_critical"},
        "learner": IDEAL_CONS,
        "engine": _expect(60_000),
        "output": {"series": True, "plots": True},
    },
    "thmB-welfare-extraction": {
        "description": "Free-then-full-price arms extracting nearly all welfare.",
        "distribution": SEC3,
        "mechanism": {"kind": "welfare_extraction", "eps": 0.1},
        "learner": IDEAL,
        "engine": _expect(100_000),
        "output": {"series": True, "plots": True},
        "experiments": [
            {"scenario": "welfare-extraction-idealized"},
            {"scenario": "welfare-extraction-mwu", "learner": {"kind": "MWU"}, "engine": _sampled(100_000)},
        ],
    },
    "thmC-mbrev": {
        "description": "Decreasing-reserve mechanism against conservative buyers.",
        "distribution": SEC3,
        "mechanism": {"kind": "mbrev", "eps": 0.01},
        "learner": IDEAL_CONS,
        "engine": _expect(100_000),
        "output": {"series": True, "plots": True},
        "experiments": [
            {"scenario": "mbrev-idealized"},
            {"scenario": "mbrev-mwu", "learner": MWU_CONS, "engine": _sampled(100_000)},
        ],
    },
    "algo1-defense": {
        "description": "Cross-value learner against three exploitative schedules.",
        "distribution": SEC3,
        "mechanism": {"kind": "welfare_extraction", "eps": 0.1},
        "learner": {"kind": "CrossValue", "inner": "MWU"},
        "engine": _sampled(100_000),
        "experiments": [
            {"scenario": "defense-welfare-extraction"},
            # example_arbitrary needs T divisible by 6
            {"scenario": "defense-example-arbitrary", "mechanism": {"kind": "example_arbitrary"},
             "engine": _sampled(99_996)},
            {"scenario": "defense-mbrev", "mechanism": {"kind": "mbrev", "eps": 0.01}},
        ],
    },
    "appE-nonmonotone": {
        "description": "Non-monotone schedule extracting most welfare from conservative buyers.",
        "distribution": SEC3,
        "mechanism": {"kind": "nonmonotone", "eps": 0.2, "gamma": 1e-4},
        "learner": IDEAL_CONS,
        "engine": _expect(1_000_000),
        "output": {"series": True, "plots": True},
    },
    "erc-gap-sweep": {
        "description": "Decreasing-reserve mechanism on equal-revenue distributions of growing range.",
        "distribution": {"kind": "erc", "H": 10.0, "m": 20},
        "mechanism": {"kind": "mbrev", "eps": "auto"},
        "learner": IDEAL_CONS,
        "engine": _expect(100_000),
        "experiments": [
            {"scenario": f"erc-H{H:g}", "distribution": {"kind": "erc", "H": float(H), "m": 20}}
            for H in (10, 100, 1000)
        ],
    },
}


def preset_names() -> list[str]:
    return list(PRESETS)


def get_preset(name: str) -> dict:
    """A deep copy of the preset config document (without its description)."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")
    doc = copy.deepcopy(PRESETS[name])
    doc.pop("description", None)
    doc["name"] = name
    return doc


def describe(name: str) -> str:
    return PRESETS[name]["description"]
