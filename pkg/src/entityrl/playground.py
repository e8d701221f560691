"""Deterministic 2D room simulator.

A Playground is one instantiated scenario: a walled room, one agent, and a
list of entities (candies, poisons, fireballs, dispensers, portals). All
geometry is circle-based; positions are float64 arrays of shape (2,) with
x right, y up, and the room interior spanning [0, w] x [0, h]. The agent
turns, then moves, then entity contacts are resolved in ascending entity-id
order, which makes whole episodes reproducible from (spec, seed, actions).

Randomness comes from one numpy PCG64 generator per playground, seeded on
build/reset; trajectory-level determinism is the contract.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .config import ConfigError, RunConfig

CANDY = "candy"
POISON = "poison"
FIREBALL = "fireball"
DISPENSER = "dispenser"
PORTAL_RED = "portal_red"
PORTAL_BLUE = "portal_blue"
WALL = "wall"

CANDY_REWARD = 5.0
POISON_REWARD = -5.0
FIREBALL_REWARDS = (-1.0, -2.0, -5.0)

# severity-ordered palette: pink -1, orange -2, red -5
COLORS = {
    CANDY: (0, 100, 250),
    POISON: (255, 110, 180),
    DISPENSER: (235, 50, 210),
    PORTAL_RED: (255, 0, 0),
    PORTAL_BLUE: (0, 0, 255),
    WALL: (128, 128, 128),
    "agent": (0, 150, 150),
    "fireball_-1": (255, 150, 200),
    "fireball_-2": (235, 110, 0),
    "fireball_-5": (220, 30, 30),
}

SCENARIO_KINDS = {
    "candy_poison": (CANDY, POISON),
    "candy_fireballs": (CANDY, FIREBALL),
    "dispenser_fireballs": (CANDY, FIREBALL, DISPENSER, PORTAL_RED, PORTAL_BLUE),
}

_PLACEMENT_RETRIES = 1000
_CONTACT_EPS = 0.5  # solid push-out leaves surfaces exactly touching


class Action(NamedTuple):
    """(move, rotate), each in {-1, 0, +1}; (0, 0) is the no-action."""

    move: int
    rotate: int


ALL_ACTIONS = tuple(Action(m, r) for m in (-1, 0, 1) for r in (-1, 0, 1))


def check_action(action) -> Action:
    move, rotate = action
    if move not in (-1, 0, 1) or rotate not in (-1, 0, 1):
        raise ValueError(f"invalid action {action!r}: components must be -1, 0 or +1")
    return Action(int(move), int(rotate))


@dataclass
class Event:
    kind: str  # "absorb" | "teleport" | "dispense" | "fireball_hit"
    entity_id: int
    reward: float = 0.0


@dataclass
class StepResult:
    reward: float
    done: bool
    events: list[Event] = field(default_factory=list)


@dataclass
class AgentState:
    position: np.ndarray
    heading: float
    body_radius: float


@dataclass
class Entity:
    id: int
    kind: str
    position: np.ndarray
    body_radius: float
    reward_value: float = 0.0
    interaction_radius: float | None = None  # > body only for fireballs
    color: tuple[int, int, int] = (255, 255, 255)
    solid: bool = False
    speed: float = 0.0
    waypoints: list[np.ndarray] | None = None  # patrol cycle (fireballs)
    waypoint_index: int = 0
    random_waypoints: bool = False
    linked_portal: int | None = None
    exit_normal: np.ndarray | None = None
    in_contact: bool = False  # dispenser retrigger latch

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        if self.interaction_radius is None:
            self.interaction_radius = self.body_radius


@dataclass
class ScenarioSpec:
    """Resolved scenario parameters (the config layer maps onto this)."""

    name: str = "candy_poison"
    large: bool = False
    episode_length: int = 1000
    candies: int = 10
    poisons: int = 10
    fireballs: int = 3
    band_fireballs: int = 6
    respawn_on_absorb: bool = True
    move_step: float = 10.0
    turn_step: float = math.radians(15.0)
    agent_radius: float = 10.0
    candy_radius: float = 5.0
    poison_radius: float = 6.0
    fireball_radius: float = 8.0
    fireball_zone: float = 30.0
    dispenser_radius: float = 10.0
    portal_radius: float = 10.0
    portal_clearance: float = 2.0
    fireball_speed: float = 4.0
    band_speed: float = 6.0

    @property
    def room_size(self) -> tuple[float, float]:
        return (1000.0, 1000.0) if self.large else (200.0, 200.0)

    @property
    def kinds(self) -> tuple[str, ...]:
        return SCENARIO_KINDS[self.name]

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "ScenarioSpec":
        sc, sim = cfg.scenario, cfg.sim
        if sc.name not in SCENARIO_KINDS:
            raise ConfigError(f"unknown scenario {sc.name!r}")
        return cls(
            name=sc.name,
            large=sc.large,
            episode_length=sc.episode_length,
            candies=sc.candies,
            poisons=sc.poisons,
            fireballs=sc.fireballs,
            band_fireballs=sc.band_fireballs,
            respawn_on_absorb=(sc.name != "dispenser_fireballs"),
            move_step=sim.move_step,
            turn_step=math.radians(sim.turn_step_deg),
            agent_radius=sim.agent_radius,
            fireball_speed=sim.fireball_speed,
            band_speed=sim.band_speed,
        )


def wrap_angle(theta: float) -> float:
    """Wrap to [-pi, pi)."""
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


def fireball_color(reward_value: float) -> tuple[int, int, int]:
    key = f"fireball_{int(reward_value)}"
    if key not in COLORS:
        raise ValueError(f"fireball reward must be one of {FIREBALL_REWARDS}, got {reward_value}")
    return COLORS[key]


class Playground:
    """Mutable single-owner simulation state for one scenario instance."""

    def __init__(self, spec: ScenarioSpec, seed: int):
        self.spec = spec
        self.room_w, self.room_h = spec.room_size
        self.episode_length = spec.episode_length
        self.agent = AgentState(np.zeros(2), 0.0, spec.agent_radius)
        self.entities: list[Entity] = []
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.step_count = 0
        self.done = False
        self.episode_reward = 0.0
        self.drop_zone: tuple[np.ndarray, float] | None = None
        self._next_id = 0
        self._build()

    # -- construction -------------------------------------------------------

    @property
    def kinds(self) -> tuple[str, ...]:
        return self.spec.kinds

    def reset(self, seed: int) -> "Playground":
        """Rebuild from the same spec with a new seed; zeroes the clock."""
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.entities = []
        self.step_count = 0
        self.done = False
        self.episode_reward = 0.0
        self.drop_zone = None
        self._next_id = 0
        self._build()
        return self

    def _build(self) -> None:
        builder = {
            "candy_poison": self._build_candy_poison,
            "candy_fireballs": self._build_candy_fireballs,
            "dispenser_fireballs": self._build_dispenser_fireballs,
        }.get(self.spec.name)
        if builder is None:
            raise ConfigError(f"unknown scenario {self.spec.name!r}")
        builder()

    def _add(self, entity: Entity) -> Entity:
        entity.id = self._next_id
        self._next_id += 1
        self.entities.append(entity)
        return entity

    def _sample_position(self, radius: float, x_range=None, y_range=None,
                         avoid_agent: bool = False) -> np.ndarray:
        """Uniform position keeping `radius` clear of walls and all bodies."""
        margin = radius + 1.0
        lo_x, hi_x = x_range or (margin, self.room_w - margin)
        lo_y, hi_y = y_range or (margin, self.room_h - margin)
        if lo_x > hi_x or lo_y > hi_y:
            raise ConfigError("placement region is empty; room too small for entity sizes")
        for _ in range(_PLACEMENT_RETRIES):
            pos = np.array([self.rng.uniform(lo_x, hi_x), self.rng.uniform(lo_y, hi_y)])
            if self._position_free(pos, radius, avoid_agent):
                return pos
        raise ConfigError(
            f"could not place entity of radius {radius} after {_PLACEMENT_RETRIES} tries; room too crowded"
        )

    def _position_free(self, pos: np.ndarray, radius: float, avoid_agent: bool) -> bool:
        for e in self.entities:
            if float(np.hypot(*(pos - e.position))) < radius + e.body_radius:
                return False
        if avoid_agent:
            if float(np.hypot(*(pos - self.agent.position))) < radius + self.agent.body_radius:
                return False
        return True

    def _spawn_agent(self, x_range=None, y_range=None) -> None:
        pos = self._sample_position(self.spec.agent_radius, x_range, y_range)
        heading = wrap_angle(self.rng.uniform(-math.pi, math.pi))
        self.agent = AgentState(pos, heading, self.spec.agent_radius)

    def _make_candy(self, position) -> Entity:
        return Entity(0, CANDY, position, self.spec.candy_radius,
                      reward_value=CANDY_REWARD, color=COLORS[CANDY])

    def _random_waypoint(self, radius: float) -> np.ndarray:
        m = radius + 1.0
        return np.array([self.rng.uniform(m, self.room_w - m),
                         self.rng.uniform(m, self.room_h - m)])

    def _build_candy_poison(self) -> None:
        s = self.spec
        for _ in range(s.candies):
            self._add(self._make_candy(self._sample_position(s.candy_radius)))
        for _ in range(s.poisons):
            self._add(Entity(0, POISON, self._sample_position(s.poison_radius),
                             s.poison_radius, reward_value=POISON_REWARD, color=COLORS[POISON]))
        self._spawn_agent()

    def _build_candy_fireballs(self) -> None:
        s = self.spec
        for _ in range(s.candies):
            self._add(self._make_candy(self._sample_position(s.candy_radius)))
        for i in range(s.fireballs):
            reward = FIREBALL_REWARDS[i % len(FIREBALL_REWARDS)]
            fb = Entity(0, FIREBALL, self._sample_position(s.fireball_radius),
                        s.fireball_radius, reward_value=reward,
                        interaction_radius=s.fireball_zone, color=fireball_color(reward),
                        speed=s.fireball_speed, random_waypoints=True)
            fb.waypoints = [self._random_waypoint(s.fireball_radius)]
            self._add(fb)
        self._spawn_agent()

    def _build_dispenser_fireballs(self) -> None:
        s = self.spec
        w, h = self.room_w, self.room_h
        # dispenser somewhere in the lower-left corner region
        self._add(Entity(0, DISPENSER,
                         self._sample_position(s.dispenser_radius,
                                               (0.05 * w, 0.25 * w), (0.05 * h, 0.25 * h)),
                         s.dispenser_radius, color=COLORS[DISPENSER], solid=True))
        # linked portals on opposite walls, exits facing into the room
        red_y = self.rng.uniform(0.2 * h, 0.8 * h)
        blue_y = self.rng.uniform(0.2 * h, 0.8 * h)
        red = self._add(Entity(0, PORTAL_RED, np.array([s.portal_radius, red_y]),
                               s.portal_radius, color=COLORS[PORTAL_RED],
                               exit_normal=np.array([1.0, 0.0])))
        blue = self._add(Entity(0, PORTAL_BLUE, np.array([w - s.portal_radius, blue_y]),
                                s.portal_radius, color=COLORS[PORTAL_BLUE],
                                exit_normal=np.array([-1.0, 0.0])))
        red.linked_portal = blue.id
        blue.linked_portal = red.id
        # vertical band of patrolling fireballs guarding the room center
        y_margin = 0.1 * h
        for _ in range(s.band_fireballs):
            x = self.rng.uniform(0.45 * w, 0.55 * w)
            y = self.rng.uniform(y_margin, h - y_margin)
            fb = Entity(0, FIREBALL, np.array([x, y]), s.fireball_radius,
                        reward_value=-2.0, interaction_radius=s.fireball_zone,
                        color=fireball_color(-2.0), speed=s.band_speed)
            fb.waypoints = [np.array([x, h - y_margin]), np.array([x, y_margin])]
            fb.waypoint_index = int(self.rng.integers(0, 2))
            self._add(fb)
        # candy drop zone on the far side; its location changes every episode
        zone_center = np.array([self.rng.uniform(0.7 * w, 0.9 * w),
                                self.rng.uniform(0.15 * h, 0.85 * h)])
        self.drop_zone = (zone_center, 0.08 * min(w, h))
        self._spawn_agent((0.05 * w + s.agent_radius, 0.4 * w), None)

    @classmethod
    def from_layout(cls, spec: ScenarioSpec, agent_position, agent_heading: float,
                    entities: list[Entity], seed: int = 0,
                    drop_zone: tuple[np.ndarray, float] | None = None) -> "Playground":
        """Build with an explicit layout instead of random placement (tests)."""
        pg = cls.__new__(cls)
        pg.spec = spec
        pg.room_w, pg.room_h = spec.room_size
        pg.episode_length = spec.episode_length
        pg.agent = AgentState(np.asarray(agent_position, dtype=np.float64),
                              wrap_angle(agent_heading), spec.agent_radius)
        pg.entities = []
        pg.rng = np.random.default_rng(seed)
        pg.seed = seed
        pg.step_count = 0
        pg.done = False
        pg.episode_reward = 0.0
        pg.drop_zone = drop_zone
        pg._next_id = 0
        for e in entities:
            pg._add(replace(e, position=np.asarray(e.position, dtype=np.float64)))
        return pg

    # -- stepping -------------------------------------------------------------

    def step(self, action) -> StepResult:
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        move, rotate = check_action(action)
        agent = self.agent

        agent.heading = wrap_angle(agent.heading + rotate * self.spec.turn_step)
        if move != 0:
            step = move * self.spec.move_step
            agent.position = agent.position + np.array(
                [step * math.cos(agent.heading), step * math.sin(agent.heading)])
        self._resolve_agent_collisions()

        self._advance_fireballs()

        events = self._resolve_contacts()
        reward = sum(ev.reward for ev in events)

        self.step_count += 1
        self.done = self.step_count >= self.episode_length
        self.episode_reward += reward
        return StepResult(reward=reward, done=self.done, events=events)

    def _resolve_agent_collisions(self) -> None:
        """Clamp against walls and push out of solid bodies (sliding circle)."""
        agent = self.agent
        r = agent.body_radius
        pos = agent.position
        for _ in range(3):
            pos[0] = min(max(pos[0], r), self.room_w - r)
            pos[1] = min(max(pos[1], r), self.room_h - r)
            for e in self.entities:
                if not e.solid:
                    continue
                d = pos - e.position
                dist = float(np.hypot(*d))
                min_dist = r + e.body_radius
                if dist < min_dist:
                    direction = d / dist if dist > 1e-9 else np.array([1.0, 0.0])
                    pos = e.position + direction * min_dist
        pos[0] = min(max(pos[0], r), self.room_w - r)
        pos[1] = min(max(pos[1], r), self.room_h - r)
        agent.position = pos

    def _advance_fireballs(self) -> None:
        for e in self.entities:
            if e.kind != FIREBALL or not e.waypoints:
                continue
            target = e.waypoints[e.waypoint_index]
            delta = target - e.position
            dist = float(np.hypot(*delta))
            if dist <= e.speed:
                e.position = target.copy()
                if e.random_waypoints:
                    e.waypoints[0] = self._random_waypoint(e.body_radius)
                else:
                    e.waypoint_index = (e.waypoint_index + 1) % len(e.waypoints)
            else:
                e.position = e.position + delta * (e.speed / dist)

    def _resolve_contacts(self) -> list[Event]:
        events: list[Event] = []
        agent = self.agent
        for e in list(self.entities):
            dist = float(np.hypot(*(agent.position - e.position)))
            if e.kind in (CANDY, POISON):
                if dist < agent.body_radius + e.body_radius:
                    events.append(Event("absorb", e.id, e.reward_value))
                    if self.spec.respawn_on_absorb:
                        e.position = self._sample_position(e.body_radius, avoid_agent=True)
                    else:
                        self.entities.remove(e)
            elif e.kind == DISPENSER:
                touching = dist < agent.body_radius + e.body_radius + _CONTACT_EPS
                if touching and not e.in_contact:
                    self._dispense_candy()
                    events.append(Event("dispense", e.id, 0.0))
                e.in_contact = touching
            elif e.kind in (PORTAL_RED, PORTAL_BLUE):
                if dist < agent.body_radius + e.body_radius:
                    exit_pos = self.portal_exit(e.linked_portal)
                    agent.position = exit_pos
                    events.append(Event("teleport", e.id, 0.0))
            elif e.kind == FIREBALL:
                if dist < agent.body_radius + e.interaction_radius:
                    events.append(Event("fireball_hit", e.id, e.reward_value))
        return events

    def portal_exit(self, portal_id: int) -> np.ndarray:
        """Exit point in front of a portal: its surface plus agent clearance."""
        portal = self.entity_by_id(portal_id)
        offset = portal.body_radius + self.agent.body_radius + self.spec.portal_clearance
        return portal.position + portal.exit_normal * offset

    def _dispense_candy(self) -> None:
        if self.drop_zone is None:
            return
        center, radius = self.drop_zone
        pos = None
        for _ in range(100):
            angle = self.rng.uniform(0.0, 2.0 * math.pi)
            rad = radius * math.sqrt(self.rng.uniform(0.0, 1.0))
            candidate = center + rad * np.array([math.cos(angle), math.sin(angle)])
            candidate[0] = min(max(candidate[0], self.spec.candy_radius + 1.0),
                               self.room_w - self.spec.candy_radius - 1.0)
            candidate[1] = min(max(candidate[1], self.spec.candy_radius + 1.0),
                               self.room_h - self.spec.candy_radius - 1.0)
            pos = candidate
            if self._position_free(candidate, self.spec.candy_radius, avoid_agent=True):
                break
        self._add(self._make_candy(pos))

    # -- queries ------------------------------------------------------------------

    def entity_by_id(self, entity_id: int) -> Entity:
        for e in self.entities:
            if e.id == entity_id:
                return e
        raise KeyError(f"no live entity with id {entity_id}")

    def census(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for e in self.entities:
            counts[e.kind] = counts.get(e.kind, 0) + 1
        return counts


def build_scenario(spec: ScenarioSpec, seed: int) -> Playground:
    return Playground(spec, seed)


def write_event_csv(path: str | Path, rows) -> None:
    """rows: iterable of (step, event) or (step, kind, entity_id, reward)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "event_kind", "entity_id", "reward"])
        for row in rows:
            if len(row) == 2 and isinstance(row[1], Event):
                step, ev = row
                writer.writerow([step, ev.kind, ev.entity_id, repr(ev.reward)])
            else:
                step, kind, entity_id, reward = row
                writer.writerow([step, kind, entity_id, repr(float(reward))])
