"""Concrete environments and a name-based factory."""

from __future__ import annotations

from collections.abc import Mapping
from typing import Any

from apc.env.core import MarkovGame
from apc.games.coin import CoinGame
from apc.games.foraging import Foraging
from apc.games.grid import GridGame
from apc.games.pgg import (
    IPGG,
    IPGG_LEVELS,
    MIPGG,
    MIPGG_LEVELS,
    ContributionLevel,
    IpggParams,
    PublicGoodsGame,
    ipgg_rewards,
    mipgg_rewards,
)
from apc.games.snowdrift import Snowdrift
from apc.games.staghunt import ModifiedStagHunt, StagHunt


def _pgg(cls):
    def build(n: int = 5, e: float = 1.0, r: float = 3.0, horizon: int = 50) -> MarkovGame:
        return cls(IpggParams(n, e, r), horizon)

    return build


GAMES = {
    "ipgg": _pgg(IPGG),
    "mipgg": _pgg(MIPGG),
    "coin": CoinGame,
    "ssg": Snowdrift,
    "ssh": StagHunt,
    "mssh": ModifiedStagHunt,
    "foraging": Foraging,
}


def make_game(name: str, params: Mapping[str, Any] | None = None) -> MarkovGame:
    try:
        factory = GAMES[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(GAMES)}") from None
    game = factory(**dict(params or {}))
    game.build_params = dict(params or {})
    return game


__all__ = [
    "GAMES",
    "IPGG",
    "IPGG_LEVELS",
    "MIPGG",
    "MIPGG_LEVELS",
    "CoinGame",
    "ContributionLevel",
    "Foraging",
    "GridGame",
    "IpggParams",
    "ModifiedStagHunt",
    "PublicGoodsGame",
    "Snowdrift",
    "StagHunt",
    "ipgg_rewards",
    "make_game",
    "mipgg_rewards",
]
