"""Kitchen layout grammar: parsing, validation, serialization, bundled layouts.

A layout is a rectangular character grid. Legend:

    X  counter          O  onion dispenser   D  dish dispenser
    P  pot              S  serving area      (space)  floor
    1  floor + player 1 start                2  floor + player 2 start

Positions are (x, y) with x the column and y the row; (0, 0) is the top-left
cell. Orientation offsets follow screen coordinates (north is y-1).
"""

from __future__ import annotations

import enum
import hashlib
import os
from dataclasses import dataclass
from functools import cached_property
from importlib import resources

Pos = tuple[int, int]


class Tile(enum.Enum):
    FLOOR = " "
    COUNTER = "X"
    ONION_DISPENSER = "O"
    DISH_DISPENSER = "D"
    POT = "P"
    SERVING = "S"


_CHAR_TO_TILE = {t.value: t for t in Tile}

# Feature kinds that validation checks for reachability, with the noun used
# in violation messages.
_FEATURE_NOUNS = {
    Tile.POT: "pot",
    Tile.ONION_DISPENSER: "onion dispenser",
    Tile.DISH_DISPENSER: "dish dispenser",
    Tile.SERVING: "serving area",
}

ORIENT_OFFSETS: tuple[Pos, ...] = ((0, -1), (0, 1), (-1, 0), (1, 0))


class LayoutError(ValueError):
    """Raised when layout text cannot be parsed."""


class NonRectangularError(LayoutError):
    pass


class UnknownCharacterError(LayoutError):
    def __init__(self, char: str, pos: Pos):
        super().__init__(f"unknown character {char!r} at {pos}")
        self.char = char
        self.pos = pos


class MissingStartError(LayoutError):
    pass


class DuplicateStartError(LayoutError):
    pass


@dataclass(frozen=True)
class Layout:
    name: str
    grid: tuple[tuple[Tile, ...], ...]
    starts: tuple[Pos, Pos]

    @property
    def height(self) -> int:
        return len(self.grid)

    @property
    def width(self) -> int:
        return len(self.grid[0])

    def tile(self, pos: Pos) -> Tile:
        x, y = pos
        return self.grid[y][x]

    def in_bounds(self, pos: Pos) -> bool:
        x, y = pos
        return 0 <= x < self.width and 0 <= y < self.height

    def is_floor(self, pos: Pos) -> bool:
        return self.in_bounds(pos) and self.tile(pos) is Tile.FLOOR

    def cells_of(self, tile: Tile) -> tuple[Pos, ...]:
        return tuple(
            (x, y)
            for y in range(self.height)
            for x in range(self.width)
            if self.grid[y][x] is tile
        )

    @cached_property
    def floor_cells(self) -> tuple[Pos, ...]:
        return self.cells_of(Tile.FLOOR)

    @cached_property
    def pots(self) -> tuple[Pos, ...]:
        return self.cells_of(Tile.POT)

    @cached_property
    def onion_dispensers(self) -> tuple[Pos, ...]:
        return self.cells_of(Tile.ONION_DISPENSER)

    @cached_property
    def dish_dispensers(self) -> tuple[Pos, ...]:
        return self.cells_of(Tile.DISH_DISPENSER)

    @cached_property
    def serving_areas(self) -> tuple[Pos, ...]:
        return self.cells_of(Tile.SERVING)

    @cached_property
    def counters(self) -> tuple[Pos, ...]:
        return self.cells_of(Tile.COUNTER)

    @cached_property
    def usable_counters(self) -> tuple[Pos, ...]:
        """Counters with at least one adjacent floor cell (can hold objects)."""
        return tuple(
            c
            for c in self.counters
            if any(self.is_floor((c[0] + dx, c[1] + dy)) for dx, dy in ORIENT_OFFSETS)
        )

    def floor_neighbors(self, pos: Pos) -> tuple[Pos, ...]:
        x, y = pos
        return tuple(
            (x + dx, y + dy)
            for dx, dy in ORIENT_OFFSETS
            if self.is_floor((x + dx, y + dy))
        )

    def text(self) -> str:
        return serialize_layout(self)

    def digest(self) -> str:
        """Stable content hash, used to key motion-plan caches."""
        return hashlib.sha256(self.text().encode()).hexdigest()[:16]


def parse_layout(text: str, name: str = "layout") -> Layout:
    lines = text.strip("\n").split("\n")
    if not lines or not lines[0]:
        raise LayoutError("empty layout")
    width = len(lines[0])
    for y, line in enumerate(lines):
        if len(line) != width:
            raise NonRectangularError(
                f"row {y} has length {len(line)}, expected {width}"
            )
    grid: list[tuple[Tile, ...]] = []
    starts: dict[int, Pos] = {}
    for y, line in enumerate(lines):
        row: list[Tile] = []
        for x, ch in enumerate(line):
            if ch in ("1", "2"):
                player = int(ch) - 1
                if player in starts:
                    raise DuplicateStartError(f"duplicate start {ch!r} at {(x, y)}")
                starts[player] = (x, y)
                row.append(Tile.FLOOR)
            elif ch in _CHAR_TO_TILE:
                row.append(_CHAR_TO_TILE[ch])
            else:
                raise UnknownCharacterError(ch, (x, y))
        grid.append(tuple(row))
    for player in (0, 1):
        if player not in starts:
            raise MissingStartError(f"missing start position for player {player + 1}")
    return Layout(name=name, grid=tuple(grid), starts=(starts[0], starts[1]))


def serialize_layout(layout: Layout) -> str:
    lines = []
    for y in range(layout.height):
        chars = []
        for x in range(layout.width):
            if (x, y) == layout.starts[0]:
                chars.append("1")
            elif (x, y) == layout.starts[1]:
                chars.append("2")
            else:
                chars.append(layout.grid[y][x].value)
        lines.append("".join(chars))
    return "\n".join(lines) + "\n"


def _component(layout: Layout, start: Pos) -> set[Pos]:
    seen = {start}
    frontier = [start]
    while frontier:
        x, y = frontier.pop()
        for dx, dy in ORIENT_OFFSETS:
            nxt = (x + dx, y + dy)
            if layout.is_floor(nxt) and nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return seen


def validate_layout(layout: Layout) -> list[str]:
    """Return a list of violation messages; empty means the layout is usable.

    Feature reachability is team level: a feature type only produces
    violations when no player can reach any instance of it, in which case one
    message per lacking player is emitted.
    """
    violations: list[str] = []
    for y in range(layout.height):
        for x in range(layout.width):
            on_edge = x in (0, layout.width - 1) or y in (0, layout.height - 1)
            if on_edge and layout.grid[y][x] is Tile.FLOOR:
                violations.append(f"open boundary at {(x, y)}")
    for i, start in enumerate(layout.starts):
        if not layout.is_floor(start):
            violations.append(f"start {i + 1} not on a floor cell at {start}")
    if layout.starts[0] == layout.starts[1]:
        violations.append(f"start positions coincide at {layout.starts[0]}")
    components = [
        _component(layout, s) if layout.is_floor(s) else set() for s in layout.starts
    ]
    for tile, noun in _FEATURE_NOUNS.items():
        cells = layout.cells_of(tile)
        if not cells:
            violations.append(f"{noun} missing from layout")
            continue
        adjacent = {n for c in cells for n in layout.floor_neighbors(c)}
        lacking = [i for i in (0, 1) if not (components[i] & adjacent)]
        if len(lacking) == 2:
            for i in lacking:
                violations.append(f"{noun} unreachable by player {i + 1}")
    return violations


BUNDLED_LAYOUTS = (
    "cramped_room",
    "asymmetric_advantages",
    "coordination_ring",
    "forced_coordination",
    "counter_circuit",
    "micro",
    "micro_hall",
    "micro_room",
)


LAYOUTS_DIR_ENV = "COOPKITCHEN_LAYOUTS"


def load_layout(name_or_path: str) -> Layout:
    """Load a bundled layout by name or any ``.layout`` file by path.

    When the LAYOUTS_DIR_ENV environment variable points at a directory
    containing ``<name>.layout``, that file takes precedence over the
    bundled layout of the same name.
    """
    directory = os.environ.get(LAYOUTS_DIR_ENV)
    if directory and "/" not in name_or_path:
        candidate = os.path.join(directory, f"{name_or_path}.layout")
        if os.path.exists(candidate):
            with open(candidate) as fh:
                return parse_layout(fh.read(), name=name_or_path)
    if name_or_path in BUNDLED_LAYOUTS:
        ref = resources.files("coopkitchen.data.layouts") / f"{name_or_path}.layout"
        return parse_layout(ref.read_text(), name=name_or_path)
    with open(name_or_path) as fh:
        text = fh.read()
    name = name_or_path.rsplit("/", 1)[-1].removesuffix(".layout")
    return parse_layout(text, name=name)
