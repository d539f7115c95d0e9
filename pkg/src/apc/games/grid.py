"""Shared gridworld machinery: movement, egocentric views, visibility."""

from __future__ import annotations

import numpy as np

from apc.env.core import GameSpec, MarkovGame

UP, DOWN, LEFT, RIGHT, STAY = range(5)
MOVE_LABELS = ("up", "down", "left", "right", "stay")
_DELTAS = np.array([[-1, 0], [1, 0], [0, -1], [0, 1], [0, 0]], dtype=np.int64)


class GridGame(MarkovGame):
    """Simultaneous-move gridworld with an egocentric square view of ``radius``.

    Subclasses list their resource layers in ``resource_channels`` and fill
    ``self.layers[name]`` (bool arrays of the map shape). With
    ``agent_channels="identity"`` every agent index gets its own channel in
    place of the merged "others" channel, so observers can tell agents apart.
    """

    resource_channels: tuple[str, ...] = ()
    extra_actions: tuple[str, ...] = ()
    toroidal = False

    def __init__(
        self,
        num_agents: int,
        height: int,
        width: int,
        horizon: int,
        radius: int = 3,
        agent_channels: str = "merged",
    ):
        if agent_channels not in ("merged", "identity"):
            raise ValueError(f"agent_channels must be 'merged' or 'identity', got {agent_channels!r}")
        self.height, self.width, self.radius = height, width, radius
        self.agent_channels = agent_channels
        agents = ("others",) if agent_channels == "merged" else tuple(f"agent{k}" for k in range(num_agents))
        self._res0 = 1 + len(agents)
        self.channels = ("self", *agents, *self.resource_channels) + (() if self.toroidal else ("wall",))
        side = 2 * radius + 1
        n_actions = len(MOVE_LABELS) + len(self.extra_actions)
        super().__init__(GameSpec(num_agents, (n_actions,) * num_agents, (len(self.channels), side, side), horizon))
        self.action_labels = MOVE_LABELS + self.extra_actions
        self.pos = np.zeros((num_agents, 2), dtype=np.int64)
        self.active = np.ones(num_agents, dtype=bool)
        self.layers: dict[str, np.ndarray] = {}

    # -- placement ------------------------------------------------------
    def _occupied(self) -> np.ndarray:
        occ = np.zeros((self.height, self.width), dtype=bool)
        act = self.pos[self.active]
        occ[act[:, 0], act[:, 1]] = True
        return occ

    def _free_cells(self, *, avoid_agents: bool = True, avoid_layers: bool = True) -> np.ndarray:
        blocked = self._occupied() if avoid_agents else np.zeros((self.height, self.width), dtype=bool)
        if avoid_layers:
            for layer in self.layers.values():
                blocked |= layer
        return np.argwhere(~blocked)

    def _random_free_cell(self, **kw) -> tuple[int, int] | None:
        cells = self._free_cells(**kw)
        if len(cells) == 0:
            return None
        r, c = cells[self.rng.integers(len(cells))]
        return int(r), int(c)

    def _place_agents(self) -> None:
        cells = self.rng.choice(self.height * self.width, size=self.n, replace=False)
        self.pos = np.stack([cells // self.width, cells % self.width], axis=1).astype(np.int64)
        self.active = np.ones(self.n, dtype=bool)

    def _scatter(self, name: str, count: int) -> None:
        layer = np.zeros((self.height, self.width), dtype=bool)
        self.layers[name] = layer
        for _ in range(count):
            cell = self._random_free_cell()
            if cell is None:
                break
            layer[cell] = True

    # -- movement -------------------------------------------------------
    def _target(self, p: np.ndarray, action: int) -> np.ndarray:
        q = p + _DELTAS[action] if action < len(_DELTAS) else p.copy()
        if self.toroidal:
            return q % (self.height, self.width)
        if not (0 <= q[0] < self.height and 0 <= q[1] < self.width):
            return p.copy()
        return q

    def _move(self, actions: np.ndarray) -> None:
        # index priority: a move into a cell held by anyone (moved or not yet) fails
        occ = self._occupied()
        for i in range(self.n):
            if not self.active[i] or actions[i] >= STAY:
                continue
            q = self._target(self.pos[i], int(actions[i]))
            if occ[q[0], q[1]]:
                continue
            occ[self.pos[i][0], self.pos[i][1]] = False
            occ[q[0], q[1]] = True
            self.pos[i] = q

    # -- geometry -------------------------------------------------------
    def distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d = np.abs(np.asarray(a) - np.asarray(b))
        if self.toroidal:
            d = np.minimum(d, np.array([self.height, self.width]) - d)
        return d.max(axis=-1)

    def _observability(self) -> np.ndarray:
        d = self.distance(self.pos[:, None, :], self.pos[None, :, :])
        vis = (d <= self.radius) & self.active[:, None] & self.active[None, :]
        np.fill_diagonal(vis, True)
        return vis

    def adjacent_cells(self, layer: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Cells of ``layer`` within Chebyshev distance 1 of ``p``, row-major order."""
        cells = np.argwhere(layer)
        if len(cells) == 0:
            return cells
        return cells[self.distance(cells, p[None, :]) <= 1]

    # -- observation ----------------------------------------------------
    def _observe(self) -> np.ndarray:
        R = self.radius
        H, W = self.height, self.width
        full = np.zeros((len(self.channels), H, W), dtype=np.float32)
        if self.agent_channels == "merged":
            act = self.pos[self.active]
            full[1, act[:, 0], act[:, 1]] = 1.0
        else:
            for k in np.flatnonzero(self.active):
                full[1 + k, self.pos[k, 0], self.pos[k, 1]] = 1.0
        for k, name in enumerate(self.resource_channels):
            full[self._res0 + k] = self.layers[name]
        if self.toroidal:
            padded = np.pad(full, ((0, 0), (R, R), (R, R)), mode="wrap")
        else:
            padded = np.pad(full, ((0, 0), (R, R), (R, R)))
            padded[-1] = 1.0
            padded[-1, R : R + H, R : R + W] = 0.0
        side = 2 * R + 1
        obs = np.zeros((self.n, len(self.channels), side, side), dtype=np.float32)
        for i in range(self.n):
            if not self.active[i]:
                continue
            r, c = self.pos[i]
            view = padded[:, r : r + side, c : c + side].copy()
            if self.agent_channels == "merged":
                view[1, R, R] = 0.0
            view[0, R, R] = 1.0
            obs[i] = view
        return obs.reshape(self.n, -1)

    # -- scripted controllers -------------------------------------------
    def step_toward(self, agent: int, cell: np.ndarray) -> int:
        d = np.asarray(cell) - self.pos[agent]
        if self.toroidal:
            size = np.array([self.height, self.width])
            d = (d + size // 2) % size - size // 2
        if d[0] == 0 and d[1] == 0:
            return STAY
        if abs(d[0]) >= abs(d[1]):
            return DOWN if d[0] > 0 else UP
        return RIGHT if d[1] > 0 else LEFT

    def nearest(self, agent: int, layer: np.ndarray) -> np.ndarray | None:
        cells = np.argwhere(layer)
        if len(cells) == 0:
            return None
        d = self.distance(cells, self.pos[agent][None, :])
        return cells[int(np.argmin(d))]

    def scripted_action(self, agent: int, kind: str, rng: np.random.Generator) -> int:
        raise NotImplementedError(f"{self.name} has no scripted '{kind}' controller")

    def render(self) -> str:
        grid = [["." for _ in range(self.width)] for _ in range(self.height)]
        for k, name in enumerate(self.resource_channels):
            sym = name[0].upper()
            for r, c in np.argwhere(self.layers[name]):
                grid[r][c] = sym
        for i in range(self.n):
            if self.active[i]:
                r, c = self.pos[i]
                grid[r][c] = str(i % 10)
        head = f"{self.name} t={self.t}"
        return "\n".join([head] + ["".join(row) for row in grid])
