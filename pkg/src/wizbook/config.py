"""Run configuration and artifact chaining for the command-line tools.

One TOML file drives every subcommand. Sections mirror the pipeline stages
(grid, train, book, synth, bmc, paths) plus one root seed; unknown keys
anywhere are rejected so typos fail loudly instead of silently reverting to
defaults. Every artifact embeds the hashes of exactly the sections that
produced it, so a consumer can check that an artifact still matches the
current config while edits to unrelated sections leave the chain intact.
"""

from __future__ import annotations

import dataclasses
import json
import time

try:
    import tomllib
except ImportError:  # 3.10: same module under its backport name
    import tomli as tomllib

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .plant import GridConfig
from .util import atomic_write_json, canonical_json, json_hash
from .wizard import TrainConfig


class ConfigError(ValueError):
    """Invalid config file or artifact: wrong key, type, schema, or hash."""


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")


def _cell(v: Any, where: str) -> tuple[int, int]:
    if not (isinstance(v, (list, tuple)) and len(v) == 2) or not all(
        isinstance(c, int) for c in v
    ):
        raise ConfigError(f"{where} must be a pair of ints, got {v!r}")
    return (v[0], v[1])


def _section(cls, obj: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    _check_keys(obj, names, where)
    try:
        return cls(**obj)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad [{where}] section: {e}") from e


@dataclass(frozen=True)
class GridSection:
    n: int = 10
    k: int = 3
    walls: tuple = ()
    gas_station: Optional[list] = None
    stations: Optional[list] = None

    def to_grid(self) -> GridConfig:
        walls = frozenset(_cell(w, "grid.walls entry") for w in self.walls)
        gas = None if self.gas_station is None else _cell(self.gas_station, "grid.gas_station")
        st = None
        if self.stations is not None:
            if len(self.stations) != 2:
                raise ConfigError("grid.stations must list exactly two cells")
            st = tuple(_cell(c, "grid.stations entry") for c in self.stations)
        try:
            return GridConfig(self.n, self.k, walls, gas, st)
        except ValueError as e:
            raise ConfigError(f"bad [grid] section: {e}") from e


@dataclass(frozen=True)
class BookSection:
    depth: int = 10
    forest_trees: int = 5
    forest_depth: int = 10
    bootstrap_episodes: int = 1000
    steps: int = 1000
    rounds: int = 8
    aggregate_episodes: int = 400
    validate_episodes: int = 80


@dataclass(frozen=True)
class SynthSection:
    t: int = 30  # gas deadline: refuel at least every t moves
    horizon: int = 30  # advice-game window length H
    max_vertices: int = 200_000
    adversarial: bool = False  # multi-agent taxi: all moves legal, not book moves


@dataclass(frozen=True)
class BmcSection:
    bound_lo: int = 6
    bound_hi: int = 9
    traces_per: int = 250
    timeout: float = 60.0
    mode: str = "incremental"  # or "subprocess"
    solver: tuple = ()  # external solver argv; empty = bundled solver

    def __post_init__(self) -> None:
        if self.mode not in ("incremental", "subprocess"):
            raise ValueError(f"bmc.mode must be incremental or subprocess, got {self.mode!r}")
        if self.bound_lo < 1 or self.bound_hi < self.bound_lo:
            raise ValueError(f"need 1 <= bound_lo <= bound_hi, got {self.bound_lo}..{self.bound_hi}")


@dataclass(frozen=True)
class PathsSection:
    out_dir: str = "out"
    wizard: str = "wizard.json"
    book: str = "book.json"
    forest: str = "forest.json"
    controller: str = "controller.json"
    strategy: str = "strategy.json"
    arena: str = "arena.json"
    traces_dir: str = "traces"
    xai_dir: str = "xai"

    def resolve(self, name: str) -> Path:
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.out_dir) / p


_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}


@dataclass(frozen=True)
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    train: dict = field(default_factory=dict)  # TrainConfig overrides, seed excluded
    book: BookSection = field(default_factory=BookSection)
    synth: SynthSection = field(default_factory=SynthSection)
    bmc: BmcSection = field(default_factory=BmcSection)
    paths: PathsSection = field(default_factory=PathsSection)
    seed: int = 0

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        _check_keys(obj, {"grid", "train", "book", "synth", "bmc", "paths", "seed"}, "root")
        train = dict(obj.get("train", {}))
        if "seed" in train:
            raise ConfigError("[train] must not set seed; use the root-level seed")
        _check_keys(train, _TRAIN_FIELDS, "train")
        seed = obj.get("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError(f"seed must be an int, got {seed!r}")
        return cls(
            grid=_section(GridSection, obj.get("grid", {}), "grid"),
            train=train,
            book=_section(BookSection, obj.get("book", {}), "book"),
            synth=_section(SynthSection, obj.get("synth", {}), "synth"),
            bmc=_section(BmcSection, obj.get("bmc", {}), "bmc"),
            paths=_section(PathsSection, obj.get("paths", {}), "paths"),
            seed=seed,
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                obj = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config is not valid TOML: {e}")
        return cls.from_dict(obj)

    def grid_config(self) -> GridConfig:
        return self.grid.to_grid()

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(seed=self.seed, **self.train)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad [train] section: {e}") from e

    def section_dict(self, name: str) -> dict:
        if name == "seed":
            return {"seed": self.seed}
        if name == "train":
            # hash the resolved hyperparameters, so spelling out a default
            # in the file does not invalidate existing artifacts
            d = self.train_config().to_json()
            d.pop("seed")
            return d
        return dataclasses.asdict(getattr(self, name))

    def section_hash(self, name: str) -> str:
        return json_hash({"section": name, "value": self.section_dict(name)})

    def chain(self, *names: str) -> dict:
        """Hashes of the sections an artifact depends on."""
        return {n: self.section_hash(n) for n in names}


# ---------------------------------------------------------------------------
# Artifacts: self-describing JSON envelopes with section-hash chains


SCHEMA_VERSION = 1


def make_artifact(kind: str, payload: dict, chain: dict) -> dict:
    return {
        "schema": f"wizbook.{kind}/{SCHEMA_VERSION}",
        "chain": chain,
        "payload": payload,
        "timing": {"written_at": time.time()},
    }


def artifact_hash(art: dict) -> str:
    """Content hash over everything except timing, so reruns compare equal."""
    return json_hash({k: art[k] for k in ("schema", "chain", "payload")})


def save_artifact(path: Path, kind: str, payload: dict, chain: dict) -> dict:
    art = make_artifact(kind, payload, chain)
    atomic_write_json(path, art)
    return art


def load_artifact(path: Path, kind: str, expect_chain: dict) -> dict:
    """Read an artifact and verify both its schema and its section hashes.

    expect_chain maps section name to the hash the current config yields; a
    mismatch means the artifact was produced under a different config, and a
    chain entry pointing at another artifact (e.g. the wizard a book was
    distilled from) is checked by the caller instead.
    """
    try:
        with open(path) as fh:
            art = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"artifact not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"artifact {path} is not valid JSON: {e}")
    want = f"wizbook.{kind}/{SCHEMA_VERSION}"
    got = art.get("schema")
    if got != want:
        raise ConfigError(f"artifact {path} has schema {got!r}, expected {want!r}")
    chain = art.get("chain", {})
    for name, h in expect_chain.items():
        if chain.get(name) != h:
            raise ConfigError(
                f"artifact {path} was produced under a different [{name}] "
                f"section (hash {chain.get(name)} != {h}); re-run the producing step"
            )
    return art


def dump_default_toml() -> str:
    """Render the default config as a commented TOML skeleton."""
    rc = RunConfig()
    lines = ["# wizbook run configuration", f"seed = {rc.seed}", ""]
    for name in ("grid", "train", "book", "synth", "bmc", "paths"):
        lines.append(f"[{name}]")
        d = rc.section_dict(name)
        if name == "train":
            d = {f.name: getattr(TrainConfig(), f.name) for f in dataclasses.fields(TrainConfig) if f.name != "seed"}
        for k, v in d.items():
            if v is None:
                lines.append(f"# {k} = ...")
            elif isinstance(v, bool):
                lines.append(f"{k} = {'true' if v else 'false'}")
            elif isinstance(v, (int, float)):
                lines.append(f"{k} = {v}")
            elif isinstance(v, str):
                lines.append(f'{k} = "{v}"')
            else:
                lines.append(f"{k} = {canonical_json(list(v))}")
        lines.append("")
    return "\n".join(lines)
