"""Argumentative view of a prediction.

Each feature of the predicted item becomes an argument whose strength is its
predicted rating; the claim argument ("this item can be recommended") has the
item rating as strength. Relations are partitioned by the sign of the feature
strength: positive supports, negative attacks, zero neutralizes. The module
also ships executable checkers for the two structural properties the strength
function satisfies: a sole supporter/attacker/neutral argument forces the
claim's sign (balance), and muting an argument moves the claim strictly
against the argument's polarity (monotonicity), plus the exact linear
response of the rating to a shift in any single feature strength.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .exceptions import UnknownIdError
from .model import (
    EmbeddingSpace,
    ItemCatalog,
    PredictionBreakdown,
    Variant,
    predict,
)

TAF_FORMAT_VERSION = 1


class Polarity(enum.Enum):
    SUPPORT = "support"
    ATTACK = "attack"
    NEUTRAL = "neutral"


def polarity_of(strength: float, eps_neutral: float = 0.0) -> Polarity:
    if strength > eps_neutral:
        return Polarity.SUPPORT
    if strength < -eps_neutral:
        return Polarity.ATTACK
    return Polarity.NEUTRAL


@dataclass
class TripolarFramework:
    """Star-shaped framework: every feature argument points at the claim."""

    item: str
    rec_argument: str
    sigma_rec: float
    feature_arguments: list[tuple[str, float, Polarity]]
    r_minus: frozenset[tuple[str, str]]
    r_plus: frozenset[tuple[str, str]]
    r_zero: frozenset[tuple[str, str]]
    eps_neutral: float = 0.0

    def strength(self, argument: str) -> float:
        if argument == self.rec_argument:
            return self.sigma_rec
        for feat, sigma, _ in self.feature_arguments:
            if feat == argument:
                return sigma
        raise UnknownIdError("argument", argument)


def build_taf(breakdown: PredictionBreakdown, eps_neutral: float = 0.0) -> TripolarFramework:
    """Partition the breakdown's features into attack/support/neutral relations.

    ``eps_neutral`` widens the neutral band for presentation purposes only;
    the faithful semantics (and all property checks) use 0.
    """
    if eps_neutral < 0:
        raise ValueError("eps_neutral must be >= 0")
    if breakdown.variant is Variant.MF:
        raise ValueError("no argumentative structure: MF breakdown has no feature ratings")
    rec = f"rec^{breakdown.item}"
    args: list[tuple[str, float, Polarity]] = []
    minus, plus, zero = set(), set(), set()
    for feat in sorted(breakdown.feature_rating):
        sigma = breakdown.feature_rating[feat]
        pol = polarity_of(sigma, eps_neutral)
        args.append((feat, sigma, pol))
        if pol is Polarity.SUPPORT:
            plus.add((feat, rec))
        elif pol is Polarity.ATTACK:
            minus.add((feat, rec))
        else:
            zero.add((feat, rec))
    return TripolarFramework(
        item=breakdown.item,
        rec_argument=rec,
        sigma_rec=breakdown.rating_hat,
        feature_arguments=args,
        r_minus=frozenset(minus),
        r_plus=frozenset(plus),
        r_zero=frozenset(zero),
        eps_neutral=eps_neutral,
    )


def reaggregate(breakdown: PredictionBreakdown, overrides: Mapping[str, float]) -> float:
    """Recompute the item rating with some feature strengths replaced.

    Type importances and per-type feature counts stay fixed, and the
    traversal order matches the original forward pass, so an override equal
    to the original value reproduces ``rating_hat`` exactly.
    """
    for feat in overrides:
        if feat not in breakdown.feature_rating:
            raise UnknownIdError("feature", feat)
    rating = 0.0
    for type_id, feats in breakdown.type_features.items():
        total = 0.0
        for feat in feats:
            total += overrides.get(feat, breakdown.feature_rating[feat])
        rating += breakdown.type_importance[type_id] * (total / len(feats))
    return rating


def mute_and_predict(breakdown: PredictionBreakdown, feature: str) -> float:
    """Rating after forcing one feature's strength to 0, structure unchanged."""
    return reaggregate(breakdown, {feature: 0.0})


@dataclass
class CheckReport:
    trials: int
    passes: int
    counterexamples: list[dict] = field(default_factory=list)
    case_counts: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.passes == self.trials and not self.counterexamples


def _random_situation(rng, factors: list[str], conditions: list[str]) -> dict[str, str]:
    if not factors or not conditions:
        return {}
    n = int(rng.integers(0, len(factors) + 1))
    chosen = rng.choice(len(factors), size=n, replace=False)
    return {factors[j]: conditions[int(rng.integers(len(conditions)))] for j in chosen}


def check_weak_balance(
    space: EmbeddingSpace,
    catalog: ItemCatalog,
    trials: int,
    seed: int = 0,
    variant: Variant = Variant.CA_FATA,
) -> CheckReport:
    """Randomized witness of the sole-affecter property.

    Each trial builds a one-feature pseudo item (so the framework has exactly
    one affecter), predicts under a random user and situation, and asserts
    that the claim strength carries the affecter's sign. Every third trial
    probes the neutral case through a zero-strength feature.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    users = sorted(space.user_table)
    if not users:
        raise ValueError("space has no users")
    features = sorted(space.feature_table)
    types = sorted(space.type_table) or ["<probe-type>"]
    factors = sorted(space.factor_table)
    conditions = sorted(space.condition_table)

    report = CheckReport(trials=trials, passes=0)
    counts = {"support": 0, "attack": 0, "neutral": 0}
    for trial in range(trials):
        user = users[int(rng.integers(len(users)))]
        situation = _random_situation(rng, factors, conditions)
        if trial % 3 == 2 or not features:
            feat = f"<neutral-probe-{trial}>"
        else:
            feat = features[int(rng.integers(len(features)))]
        type_id = types[int(rng.integers(len(types)))]
        pseudo = ItemCatalog({f"<probe-item-{trial}>": {type_id: [feat]}})
        b = predict(user, f"<probe-item-{trial}>", situation, variant, space, pseudo, strict=False)
        taf = build_taf(b)
        p = b.feature_rating[feat]
        if p > 0:
            ok = taf.sigma_rec > 0 and taf.r_plus and not taf.r_minus and not taf.r_zero
            counts["support"] += 1
        elif p < 0:
            ok = taf.sigma_rec < 0 and taf.r_minus and not taf.r_plus and not taf.r_zero
            counts["attack"] += 1
        else:
            ok = taf.sigma_rec == 0.0 and taf.r_zero and not taf.r_plus and not taf.r_minus
            counts["neutral"] += 1
        if ok:
            report.passes += 1
        else:
            report.counterexamples.append(
                {"trial": trial, "user": user, "situation": situation,
                 "feature": feat, "strength": p, "sigma_rec": taf.sigma_rec}
            )
    report.case_counts = counts
    return report


def check_weak_monotonicity(
    space: EmbeddingSpace,
    catalog: ItemCatalog,
    trials: int,
    seed: int = 0,
    variant: Variant = Variant.CA_FATA,
    tol_linear: float = 1e-12,
) -> CheckReport:
    """Randomized witness of the muting directions and the linear response.

    For every feature of a random multi-feature pseudo item: muting an
    attacker must strictly raise the rating, muting a supporter strictly
    lower it, muting a neutral leave it bit-identical. Additionally one
    random feature is shifted by a positive delta and the rating must move by
    exactly importance * delta / feature-count (within ``tol_linear``).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    users = sorted(space.user_table)
    if not users:
        raise ValueError("space has no users")
    features = sorted(space.feature_table)
    if not features:
        raise ValueError("space has no features")
    types = sorted(space.type_table) or ["<probe-type>"]
    factors = sorted(space.factor_table)
    conditions = sorted(space.condition_table)

    report = CheckReport(trials=trials, passes=0)
    counts = {"support": 0, "attack": 0, "neutral": 0, "linear": 0}
    for trial in range(trials):
        user = users[int(rng.integers(len(users)))]
        situation = _random_situation(rng, factors, conditions)
        n_types = int(rng.integers(1, min(3, len(types)) + 1))
        chosen_types = [types[j] for j in rng.choice(len(types), size=n_types, replace=False)]
        pool = list(features)
        item_id = f"<probe-item-{trial}>"
        pseudo = ItemCatalog()
        for type_id in chosen_types:
            count = int(rng.integers(1, 5))
            for _ in range(count):
                if not pool:
                    break
                feat = pool.pop(int(rng.integers(len(pool))))
                pseudo.add(item_id, type_id, feat)
        if trial % 3 == 0:
            pseudo.add(item_id, chosen_types[0], f"<neutral-probe-{trial}>")
        b = predict(user, item_id, situation, variant, space, pseudo, strict=False)

        ok = True
        detail = None
        for feat, p in b.feature_rating.items():
            muted = mute_and_predict(b, feat)
            if p < 0:
                good = muted > b.rating_hat
                counts["attack"] += 1
            elif p > 0:
                good = muted < b.rating_hat
                counts["support"] += 1
            else:
                good = muted == b.rating_hat
                counts["neutral"] += 1
            if not good:
                ok = False
                detail = {"feature": feat, "strength": p, "muted": muted}
                break

        if ok:
            all_feats = sorted(b.feature_rating)
            feat = all_feats[int(rng.integers(len(all_feats)))]
            delta = float(rng.uniform(0.01, 1.0))
            type_id = b.type_of(feat)
            expected = b.type_importance[type_id] * delta / len(b.type_features[type_id])
            shifted = reaggregate(b, {feat: b.feature_rating[feat] + delta})
            counts["linear"] += 1
            if abs((shifted - b.rating_hat) - expected) > tol_linear:
                ok = False
                detail = {
                    "feature": feat,
                    "delta": delta,
                    "observed": shifted - b.rating_hat,
                    "expected": expected,
                }
        if ok:
            report.passes += 1
        else:
            report.counterexamples.append(
                {"trial": trial, "user": user, "situation": situation,
                 "rating_hat": b.rating_hat, **(detail or {})}
            )
    report.case_counts = counts
    return report


def format_strength(value: float) -> str:
    """Edge-label convention: explicit sign, six decimals with trailing
    zeros stripped, bare 0 for a neutral strength."""
    if value == 0:
        return "0"
    text = f"{value:+.6f}".rstrip("0")
    return text.rstrip(".")


_POLARITY_COLORS = {
    Polarity.SUPPORT: "green",
    Polarity.ATTACK: "red",
    Polarity.NEUTRAL: "gray",
}


def export_dot(taf: TripolarFramework) -> str:
    """Render the framework as a DOT digraph, byte-stable for equal input."""
    lines = ["digraph taf {", "  rankdir=LR;"]
    lines.append(
        f'  "{taf.rec_argument}" [shape=box style=filled fillcolor=lightgray '
        f'label="{taf.rec_argument}\\nsigma={format_strength(taf.sigma_rec)}"];'
    )
    for feat, sigma, pol in sorted(taf.feature_arguments):
        color = _POLARITY_COLORS[pol]
        lines.append(f'  "{feat}" [fontcolor={color}];')
        lines.append(
            f'  "{feat}" -> "{taf.rec_argument}" '
            f'[label="{format_strength(sigma)}" color={color}];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def taf_to_json(taf: TripolarFramework) -> str:
    """Versioned JSON serialization of the framework."""
    doc = {
        "format_version": TAF_FORMAT_VERSION,
        "item": taf.item,
        "rec_argument": taf.rec_argument,
        "sigma_rec": taf.sigma_rec,
        "eps_neutral": taf.eps_neutral,
        "arguments": [
            {"id": feat, "strength": sigma, "polarity": pol.value}
            for feat, sigma, pol in sorted(taf.feature_arguments)
        ],
        "relations": {
            "attack": sorted(list(pair) for pair in taf.r_minus),
            "support": sorted(list(pair) for pair in taf.r_plus),
            "neutral": sorted(list(pair) for pair in taf.r_zero),
        },
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"
