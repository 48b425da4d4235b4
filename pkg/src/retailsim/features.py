"""Behaviour toggles for simulated customers.

One flag per candidate behaviour, in a fixed numbered order. Only a few are
wired into the engine; switching on any other flag is allowed but has no
effect, and the engine warns about it.
"""

from __future__ import annotations

import dataclasses
import warnings
from typing import Mapping

# (row, flag name, short description)
FEATURE_TABLE: tuple[tuple[int, str, str], ...] = (
    (1, "variable_speed", "walking speed differs between customers"),
    (2, "speed_penalty_per_item", "customer slows as the basket fills"),
    (3, "heavy_item_penalty", "heavy items slow the customer more, cumulatively"),
    (4, "put_items_back", "items picked up and later returned"),
    (5, "distracted_by_items", "customer stops for eye-catching items"),
    (6, "carries_baggage", "customer carries bags"),
    (7, "zone_dependent_speed", "speed depends on store zone"),
    (8, "revisit_skipped_item", "skips an item and comes back for it"),
    (9, "wander_and_browse", "aimless wandering with browsing"),
    (10, "avoid_aisles", "some aisles are avoided"),
    (11, "uses_trolley", "trolley instead of basket"),
    (12, "multiple_baskets", "several baskets when trolleys run out"),
    (13, "returns_trolley", "trolley returned after shopping"),
    (14, "leaves_trolley_at_car", "trolley abandoned in the car park"),
    (15, "returns_from_queue", "leaves the queue to shop again"),
    (16, "returns_from_checkout", "leaves the till to shop again"),
    (17, "revisits_inaccessible_bay", "retries a blocked bay later"),
    (18, "returns_next_day_out_of_stock", "comes back another day for missing stock"),
    (19, "cold_items_last", "chilled goods picked last"),
    (20, "compares_multiple_copies", "handles several copies before choosing"),
    (21, "child_touches_products", "accompanying child handles products"),
    (22, "child_sits_and_is_carried", "accompanying child stops and is carried"),
    (23, "shoplifts", "leaves without paying"),
    (24, "pays_cash", "pays with cash"),
    (25, "pays_card", "pays with card"),
    (26, "pays_contactless", "pays contactless"),
    (27, "violate_social_distancing", "ignores the distancing rule"),
    (28, "deliberate_infection", "seeks contact with others on purpose"),
    (29, "parent_shouts", "loud talking to children"),
    (30, "needs_parking_ticket", "needs a car-park ticket"),
    (31, "abandons_leaving_basket", "abandons shopping, basket left behind"),
    (32, "abandons_returning_items", "abandons shopping, items returned"),
    (33, "wears_gloves_or_mask", "wears gloves or a mask"),
    (34, "changes_gloves_or_mask", "puts on or takes off gloves or mask"),
    (35, "consumes_opened_pack", "opens and consumes a pack while shopping"),
    (36, "samples_and_returns_pack", "opens a pack, samples it, puts it back"),
    (37, "shops_in_group", "meets others and shops together"),
)

FLAG_NAMES = tuple(name for _, name, _ in FEATURE_TABLE)
IMPLEMENTED = frozenset(
    {"variable_speed", "speed_penalty_per_item", "avoid_aisles", "violate_social_distancing"}
)

_Base = dataclasses.make_dataclass(
    "_FeatureFlagsBase",
    [(name, bool, dataclasses.field(default=False)) for name in FLAG_NAMES],
    frozen=True,
)


class FeatureFlags(_Base):
    """All behaviour flags, default off."""

    @classmethod
    def from_dict(cls, data: Mapping[str, bool] | None) -> FeatureFlags:
        data = dict(data or {})
        unknown = sorted(set(data) - set(FLAG_NAMES))
        if unknown:
            raise ValueError(f"unknown feature flag(s): {', '.join(unknown)}")
        for k, v in data.items():
            if not isinstance(v, bool):
                raise ValueError(f"feature flag {k!r} must be true/false")
        return cls(**data)

    def to_dict(self) -> dict[str, bool]:
        return {name: getattr(self, name) for name in FLAG_NAMES}

    def enabled(self) -> list[str]:
        return [n for n in FLAG_NAMES if getattr(self, n)]

    def inert(self) -> list[str]:
        """Flags switched on that the engine does not model."""
        return [n for n in self.enabled() if n not in IMPLEMENTED]

    def warn_inert(self) -> list[str]:
        inert = self.inert()
        if inert:
            warnings.warn(
                "feature flags have no effect (not modelled): " + ", ".join(inert),
                stacklevel=3,
            )
        return inert
