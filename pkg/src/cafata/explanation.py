"""Template-based natural-language explanations.

Three scenarios are rendered: strong recommendation (the two best-rated
features), weak recommendation (best-rated feature plus the worst of the
rest), and not recommended (the two worst-rated features). The scenario is
chosen from the predicted rating and the sign of the top features; the
contextual clause names the condition of the most important factor in the
situation and is dropped when the situation is empty. Ties in any argmax or
argmin break toward the lexicographically smallest id so rendering is
deterministic.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Mapping

from .model import PredictionBreakdown


class Scenario(enum.Enum):
    SR = "SR"
    WR = "WR"
    NR = "NR"


@dataclass
class Explanation:
    scenario: Scenario
    at1: str
    at2: str | None
    cd: str | None
    rendered: str

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "at1": self.at1,
            "at2": self.at2,
            "cd": self.cd,
            "rendered": self.rendered,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True) + "\n"


def _ranked_desc(ratings: Mapping[str, float]) -> list[str]:
    return sorted(ratings, key=lambda f: (-ratings[f], f))


def _ranked_asc(ratings: Mapping[str, float]) -> list[str]:
    return sorted(ratings, key=lambda f: (ratings[f], f))


def classify_scenario(
    breakdown: PredictionBreakdown,
    tau_pos: float = 0.2,
    tau_neg: float = 0.0,
) -> Scenario:
    """NR below ``tau_neg``; SR at or above ``tau_pos`` when the strongest
    two features are both positive; WR otherwise."""
    if not (tau_neg <= 0.0 <= tau_pos):
        raise ValueError("thresholds must satisfy tau_neg <= 0 <= tau_pos")
    rating = breakdown.rating_hat
    if rating < tau_neg:
        return Scenario.NR
    if rating >= tau_pos and breakdown.feature_rating:
        top = _ranked_desc(breakdown.feature_rating)[:2]
        if all(breakdown.feature_rating[f] > 0 for f in top):
            return Scenario.SR
    return Scenario.WR


def _most_important_condition(breakdown: PredictionBreakdown) -> str | None:
    if not breakdown.situation:
        return None
    if breakdown.factor_importance:
        importance = breakdown.factor_importance
    else:
        # context-free variants trace no importances; fall back to uniform
        importance = {cf: 1.0 for cf in breakdown.situation}
    best = min(breakdown.situation, key=lambda cf: (-importance.get(cf, 0.0), cf))
    return breakdown.situation[best]


def generate_explanation(
    breakdown: PredictionBreakdown,
    scenario: Scenario | None = None,
    display_names: Mapping[str, str] | None = None,
    tau_pos: float = 0.2,
    tau_neg: float = 0.0,
) -> Explanation:
    """Fill the scenario's template from the breakdown.

    Slot rules: SR takes the two largest feature ratings, WR the largest then
    the smallest of the remainder, NR the two smallest. Display names default
    to the raw ids.
    """
    ratings = breakdown.feature_rating
    if not ratings:
        raise ValueError("cannot explain a breakdown without feature ratings")
    if scenario is None:
        scenario = classify_scenario(breakdown, tau_pos, tau_neg)
    names = display_names or {}

    desc = _ranked_desc(ratings)
    asc = _ranked_asc(ratings)
    if scenario is Scenario.SR:
        at1 = desc[0]
        at2 = desc[1] if len(desc) > 1 else None
    elif scenario is Scenario.WR:
        at1 = desc[0]
        rest = [f for f in asc if f != at1]
        at2 = rest[0] if rest else None
    else:
        at1 = asc[0]
        rest = [f for f in asc if f != at1]
        at2 = rest[0] if rest else None

    cd = _most_important_condition(breakdown)

    def label(entity_id: str) -> str:
        return names.get(entity_id, entity_id)

    if scenario is Scenario.NR:
        if at2 is None:
            body = f"we do not recommend you this item because you dislike {label(at1)}."
        else:
            body = (
                f"we do not recommend you this item because you dislike "
                f"{label(at1)} and {label(at2)}."
            )
    elif scenario is Scenario.WR and at2 is not None:
        body = (
            f"we recommend you this item because you like {label(at1)} "
            f"although you dislike {label(at2)}."
        )
    else:
        if at2 is None:
            body = f"we recommend you this item because you like {label(at1)}."
        else:
            body = (
                f"we recommend you this item because you like "
                f"{label(at1)} and {label(at2)}."
            )

    if cd is not None:
        rendered = f"When {label(cd)}, {body}"
    else:
        rendered = body[0].upper() + body[1:]

    return Explanation(scenario=scenario, at1=at1, at2=at2, cd=cd, rendered=rendered)
