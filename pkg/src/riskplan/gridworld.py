"""Rover grid worlds: seeded obstacle layouts turned into MDPs and POMDPs.

Cells are indexed ``s = x + M * y`` with 0-based ``x in [0, M)`` (column
position along a row) and ``y in [0, N)``. Moves use the 8-neighbourhood;
off-grid targets are clipped to staying in place.
"""
from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .exceptions import ConfigError, NoFeasibleLayout
from .model import Mdp, Pomdp

__all__ = [
    "ACTIONS",
    "ACTION_NAMES",
    "GridSpec",
    "GridWorld",
    "cell_index",
    "cell_coords",
    "generate_layout",
    "build_mdp",
    "build_pomdp",
    "perturb_obstacles",
    "make_rng",
]

ACTION_NAMES = ("E", "W", "N", "S", "NE", "NW", "SE", "SW")
ACTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1))
_KING = ACTIONS
_ROOK = ((1, 0), (-1, 0), (0, 1), (0, -1))


def make_rng(*key):
    """Counter-based generator keyed by a tuple of nonnegative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True)
class GridSpec:
    rows: int = 10            # M, extent of x
    cols: int = 10            # N, extent of y
    obstacle_density: float = 0.25
    start: tuple = (1, 0)
    goal: tuple = None        # defaults to (M - 1, N - 1)
    intent_prob: float = 0.7
    slip_prob: float = 0.3
    obstacle_cost: float = 10.0
    step_cost: float = 2.0
    goal_cost: float = 0.0
    discount: float = 0.95
    detect_prob: float = 0.6
    n_uncertain: int = 3
    perturb_prob: float = 0.3
    budget: float = 50.0
    seed: int = 0
    max_layout_tries: int = 100

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(int(v) for v in self.start))
        goal = (self.rows - 1, self.cols - 1) if self.goal is None else self.goal
        object.__setattr__(self, "goal", tuple(int(v) for v in goal))
        errs = []
        if self.rows < 1 or self.cols < 1:
            errs.append("rows and cols must be positive")
        if not 0.0 <= self.obstacle_density < 1.0:
            errs.append("obstacle_density must lie in [0, 1)")
        if abs(self.intent_prob + self.slip_prob - 1.0) > 1e-12 or not 0 <= self.intent_prob <= 1:
            errs.append("intent_prob + slip_prob must equal 1")
        if not 0.0 <= self.detect_prob <= 1.0 or not 0.0 <= self.perturb_prob <= 1.0:
            errs.append("detect_prob and perturb_prob must lie in [0, 1]")
        if not 0.0 < self.discount < 1.0:
            errs.append("discount must lie in (0, 1)")
        if min(self.obstacle_cost, self.step_cost, self.goal_cost) < 0:
            errs.append("costs must be nonnegative")
        if not self.budget > 0:
            errs.append("budget must be positive")
        if self.n_uncertain < 0:
            errs.append("n_uncertain must be nonnegative")
        for name, (x, y) in (("start", self.start), ("goal", self.goal)):
            if not (0 <= x < self.rows and 0 <= y < self.cols):
                errs.append(f"{name} {(x, y)} lies outside the grid")
        if self.start == self.goal and self.rows * self.cols > 1:
            errs.append("start and goal must differ")
        if errs:
            raise ConfigError("; ".join(errs))

    @property
    def num_cells(self):
        return self.rows * self.cols

    @property
    def num_obstacles(self):
        return int(round(self.obstacle_density * self.num_cells))

    def to_dict(self):
        d = asdict(self)
        d["start"], d["goal"] = list(self.start), list(self.goal)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown grid keys: {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def cell_index(spec, x, y):
    return int(x) + spec.rows * int(y)


def cell_coords(spec, s):
    return int(s) % spec.rows, int(s) // spec.rows


def _neighbours(spec, s, moves):
    x, y = cell_coords(spec, s)
    out = []
    for dx, dy in moves:
        nx, ny = x + dx, y + dy
        if 0 <= nx < spec.rows and 0 <= ny < spec.cols:
            out.append(cell_index(spec, nx, ny))
    return out


@dataclass(frozen=True, eq=False)
class GridWorld:
    """A GridSpec plus a concrete obstacle layout."""

    spec: GridSpec
    obstacles: np.ndarray                       # bool mask over cells
    uncertain: tuple = field(default_factory=tuple)  # cells of perturbable obstacles

    def __post_init__(self):
        mask = np.array(self.obstacles, dtype=bool).ravel()
        if mask.size != self.spec.num_cells:
            raise ConfigError("obstacle mask size does not match the grid")
        mask.setflags(write=False)
        object.__setattr__(self, "obstacles", mask)
        object.__setattr__(self, "uncertain", tuple(int(u) for u in self.uncertain))

    @property
    def start_index(self):
        return cell_index(self.spec, *self.spec.start)

    @property
    def goal_index(self):
        return cell_index(self.spec, *self.spec.goal)

    def mdp(self):
        return _build_mdp(self)

    def pomdp(self):
        return Pomdp(_build_mdp(self), _observation_model(self))

    def layout_csv(self):
        """Plot-ready layout: x, y, obstacle, uncertain, start, goal flags."""
        unc = set(self.uncertain)
        lines = ["x,y,obstacle,uncertain,start,goal"]
        for s in range(self.spec.num_cells):
            x, y = cell_coords(self.spec, s)
            lines.append(f"{x},{y},{int(self.obstacles[s])},{int(s in unc)},"
                         f"{int(s == self.start_index)},{int(s == self.goal_index)}")
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "obstacles": np.flatnonzero(self.obstacles).tolist(),
            "uncertain": list(self.uncertain),
        }

    @classmethod
    def from_dict(cls, d):
        spec = GridSpec.from_dict(d["spec"])
        mask = np.zeros(spec.num_cells, dtype=bool)
        mask[np.asarray(d["obstacles"], dtype=int)] = True
        return cls(spec, mask, tuple(d.get("uncertain", ())))

    def summary(self):
        rows = []
        for y in reversed(range(self.spec.cols)):
            line = []
            for x in range(self.spec.rows):
                s = cell_index(self.spec, x, y)
                ch = "#" if self.obstacles[s] else "."
                if s in self.uncertain:
                    ch = "?"
                if s == self.start_index:
                    ch = "S"
                if s == self.goal_index:
                    ch = "G"
                line.append(ch)
            rows.append("".join(line))
        return "\n".join(rows)


def _reachable(spec, free, src, dst):
    seen = np.zeros(spec.num_cells, dtype=bool)
    seen[src] = True
    queue = deque([src])
    while queue:
        s = queue.popleft()
        if s == dst:
            return True
        for t in _neighbours(spec, s, _KING):
            if free[t] and not seen[t]:
                seen[t] = True
                queue.append(t)
    return False


def _isolated(spec, mask):
    """Obstacle cells with no obstacle among their 8 neighbours."""
    return [s for s in np.flatnonzero(mask)
            if not any(mask[t] for t in _neighbours(spec, s, _KING))]


def generate_layout(spec):
    """Sample obstacle layouts from ``spec.seed`` until one is usable.

    A layout is usable when the free cells connect start to goal and there
    are at least ``n_uncertain`` isolated obstacles to perturb.
    """
    rng = make_rng(spec.seed)
    n = spec.num_cells
    start = cell_index(spec, *spec.start)
    goal = cell_index(spec, *spec.goal)
    candidates = np.array([s for s in range(n) if s not in (start, goal)])
    k = spec.num_obstacles
    if k > candidates.size:
        raise NoFeasibleLayout("more obstacles requested than free cells")
    for _ in range(spec.max_layout_tries):
        mask = np.zeros(n, dtype=bool)
        mask[rng.choice(candidates, size=k, replace=False)] = True
        if not _reachable(spec, ~mask, start, goal):
            continue
        iso = _isolated(spec, mask)
        if len(iso) < spec.n_uncertain:
            continue
        chosen = rng.choice(np.array(iso, dtype=int), size=spec.n_uncertain, replace=False) \
            if spec.n_uncertain else np.zeros(0, dtype=int)
        return GridWorld(spec, mask, tuple(sorted(int(c) for c in chosen)))
    raise NoFeasibleLayout(f"no usable layout in {spec.max_layout_tries} draws for seed {spec.seed}")


def _transition(spec):
    n = spec.num_cells
    T = np.zeros((n, len(ACTIONS), n))
    for s in range(n):
        x, y = cell_coords(spec, s)
        nbrs = _neighbours(spec, s, _KING)
        for a, (dx, dy) in enumerate(ACTIONS):
            tx, ty = x + dx, y + dy
            if 0 <= tx < spec.rows and 0 <= ty < spec.cols:
                target = cell_index(spec, tx, ty)
                others = [t for t in nbrs if t != target]
            else:
                target, others = s, nbrs
            if others:
                T[s, a, target] += spec.intent_prob
                T[s, a, others] += spec.slip_prob / len(others)
            else:
                T[s, a, target] = 1.0
    goal = cell_index(spec, *spec.goal)
    T[goal] = 0.0
    T[goal, :, goal] = 1.0
    return T


def _build_mdp(world):
    spec = world.spec
    n = spec.num_cells
    goal = world.goal_index
    cell_cost = np.where(world.obstacles, spec.obstacle_cost, spec.step_cost)
    cell_cost[goal] = spec.goal_cost
    fuel = np.full(n, spec.step_cost)
    fuel[goal] = 0.0
    A = len(ACTIONS)
    kappa = np.zeros(n)
    kappa[world.start_index] = 1.0
    return Mdp(
        transition=_transition(spec),
        initial_dist=kappa,
        stage_cost=np.repeat(cell_cost[:, None], A, axis=1),
        constraint_costs=np.repeat(fuel[:, None], A, axis=1)[None],
        budgets=[spec.budget],
        discount=spec.discount,
    )


def _observation_model(world):
    spec = world.spec
    n = spec.num_cells
    O = np.zeros((n, n))
    spread = {}
    for b in np.flatnonzero(world.obstacles):
        row = np.zeros(n)
        nb = _neighbours(spec, b, _ROOK)
        row[b] = spec.detect_prob if nb else 1.0
        if nb:
            row[nb] += (1.0 - spec.detect_prob) / len(nb)
        spread[int(b)] = row
    for s in range(n):
        near = [t for t in _neighbours(spec, s, _KING) if world.obstacles[t]]
        if near:
            O[s] = np.mean([spread[t] for t in near], axis=0)
        else:
            O[s, s] = 1.0
    return O


def build_mdp(spec):
    """Fully observable rover MDP for the layout drawn from ``spec.seed``."""
    return generate_layout(spec).mdp()


def build_pomdp(spec):
    """Rover POMDP for the layout drawn from ``spec.seed``."""
    return generate_layout(spec).pomdp()


def perturb_obstacles(world, trial_seed, perturb_prob=None):
    """Move each uncertain obstacle to a random neighbour with some probability.

    ``world`` may be a GridSpec (its seeded layout is used) or a GridWorld.
    Each uncertain obstacle independently moves, with probability
    ``perturb_prob`` (default: the GridSpec's), to a uniformly chosen existing
    8-neighbour other than the start and goal. Returns the new GridWorld;
    call ``.mdp()`` or ``.pomdp()`` on it for the rebuilt model.
    """
    if isinstance(world, GridSpec):
        world = generate_layout(world)
    spec = world.spec
    p = spec.perturb_prob if perturb_prob is None else float(perturb_prob)
    key = trial_seed if isinstance(trial_seed, (tuple, list)) else (trial_seed,)
    rng = make_rng(*key)
    mask = np.array(world.obstacles)
    fixed = {world.start_index, world.goal_index}
    moved = []
    for u in world.uncertain:
        # one uniform draw per decision keeps the stream layout fixed
        go, pick = rng.random(), rng.random()
        targets = [t for t in _neighbours(spec, u, _KING) if t not in fixed]
        if go < p and targets:
            t = targets[min(int(pick * len(targets)), len(targets) - 1)]
            mask[u] = False
            moved.append(t)
        else:
            moved.append(u)
    for t in moved:
        mask[t] = True
    return GridWorld(spec, mask, tuple(moved))


def with_overrides(spec, **kw):
    return replace(spec, **kw)
