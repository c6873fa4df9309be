import logging
import math
import os
from dataclasses import asdict, dataclass
from typing import Sequence, Union

import numpy as np
import pandas as pd
import yaml

from intent_rrs.intent_rrs import CatalogError, ScenarioError

from . import settings

logger = logging.getLogger(__name__)


def reliability_to_loss_req(rel: float) -> float:
    """
    Convert a reliability percentage to a packet loss rate requirement.

    Parameters
    ----------
    rel : float
        Reliability in percent, strictly between 0 and 100.

    Returns
    -------
    float
        Maximum tolerated packet loss rate, ``1 - rel / 100``.
    """
    if not 0 < rel < 100:
        raise ValueError(f"reliability must be in (0, 100), got {rel}")
    return 1 - rel / 100


@dataclass(frozen=True)
class SliceSpec:
    """
    One slice type of the catalog: its intents and the traffic, buffer and
    mobility characteristics of its UEs.

    Attributes
    ----------
    name : str
        Slice type name.
    high_priority : bool
        Whether the slice intents are protected first.
    thr_req : Union[None, float]
        Effective throughput intent in Mbps, None if inactive.
    lat_req : Union[None, float]
        Buffer latency intent in ms, None if inactive.
    rel_req : Union[None, float]
        Reliability intent in percent, None if inactive.
    buffer_capacity : int
        UE buffer size in packets.
    max_buffer_latency : int
        Packets older than this many TTIs are dropped.
    packet_size : int
        Packet size in bits.
    speed : float
        UE speed in km/h.
    traffic_mean : float
        Mean requested traffic per UE in Mbps.
    ue_min, ue_max : int
        Bounds on the number of UEs of the slice.
    """

    name: str
    high_priority: bool
    thr_req: Union[None, float]
    lat_req: Union[None, float]
    rel_req: Union[None, float]
    buffer_capacity: int
    max_buffer_latency: int
    packet_size: int
    speed: float
    traffic_mean: float
    ue_min: int
    ue_max: int

    def __post_init__(self):
        if self.thr_req is None and self.lat_req is None and (
            self.rel_req is None
        ):
            raise ValueError(f"{self.name}: slice type has no intent")
        if not 0 < self.ue_min <= self.ue_max:
            raise ValueError(f"{self.name}: invalid UE bounds")
        if self.packet_size <= 0 or self.buffer_capacity <= 0:
            raise ValueError(
                f"{self.name}: packet and buffer size must be > 0"
            )
        if self.lat_req is not None and (
            self.max_buffer_latency <= self.lat_req
        ):
            raise ValueError(
                f"{self.name}: max buffer latency must exceed latency intent"
            )
        if self.rel_req is not None and not 0 < self.rel_req < 100:
            raise ValueError(f"{self.name}: reliability must be in (0, 100)")

    @property
    def loss_req(self) -> Union[None, float]:
        if self.rel_req is None:
            return None
        return reliability_to_loss_req(self.rel_req)

    @property
    def active_intents(self) -> tuple[bool, bool, bool]:
        """Active flags for the throughput, latency and loss intents."""
        return (
            self.thr_req is not None,
            self.lat_req is not None,
            self.rel_req is not None,
        )


def _null(value) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value))


def _parse_bool(value, row: int) -> bool:
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    text = str(value).strip().lower()
    if text in ("true", "yes", "1"):
        return True
    if text in ("false", "no", "0"):
        return False
    raise CatalogError(f"row {row}, field 'high_priority': not a boolean")


def _spec_from_record(record: dict, row: int) -> SliceSpec:
    kwargs = {}
    for field in settings.catalog_columns:
        if field not in record:
            raise CatalogError(f"row {row}: missing field '{field}'")
        value = record[field]
        try:
            if field == "name":
                if _null(value):
                    raise ValueError("empty name")
                kwargs[field] = str(value)
            elif field == "high_priority":
                kwargs[field] = _parse_bool(value, row)
            elif field in ("thr_req", "lat_req", "rel_req"):
                kwargs[field] = None if _null(value) else float(value)
            elif field in ("speed", "traffic_mean"):
                kwargs[field] = float(value)
            else:
                number = float(value)
                if not number.is_integer():
                    raise ValueError("not an integer")
                kwargs[field] = int(number)
        except CatalogError:
            raise
        except (TypeError, ValueError) as e:
            raise CatalogError(f"row {row}, field '{field}': {e}") from e
    try:
        return SliceSpec(**kwargs)
    except ValueError as e:
        raise CatalogError(f"row {row}: {e}") from e


def load_catalog(path: Union[None, str] = None) -> list[SliceSpec]:
    """
    Load the slice-type catalog.

    Parameters
    ----------
    path : Union[None, str]
        CSV file with one row per slice type and the columns listed in
        `settings.catalog_columns`; empty cells mark inactive intents.
        The default is the built-in catalog in `settings.catalog_default`.

    Returns
    -------
    list[SliceSpec]
        Slice types in file order.
    """
    if path is None:
        return [
            _spec_from_record(record, row)
            for row, record in enumerate(settings.catalog_default, start=1)
        ]

    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise CatalogError(f"{path}: {e}") from e

    missing = [c for c in settings.catalog_columns if c not in df.columns]
    if missing:
        raise CatalogError(f"{path}: missing columns {missing}")

    specs = [
        _spec_from_record(record, row)
        for row, record in enumerate(df.to_dict(orient="records"), start=1)
    ]
    logger.info("loaded %d slice types from %s", len(specs), path)
    return specs


def write_catalog(catalog: Sequence[SliceSpec], path: str) -> None:
    """
    Write a catalog as CSV readable by `load_catalog()`.

    Parameters
    ----------
    catalog : Sequence[SliceSpec]
        Slice types to write.
    path : str
        Destination file.
    """
    df = pd.DataFrame(
        [asdict(spec) for spec in catalog], columns=settings.catalog_columns
    )
    df.to_csv(path, index=False)


@dataclass(frozen=True)
class ScenarioSlice:
    """An active slice: its slot index (1-based), type and UE count."""

    index: int
    spec: SliceSpec
    ue_count: int


@dataclass(frozen=True)
class NetworkScenario:
    """
    A network scenario: which slice slots are active, with which slice type
    and how many UEs.

    Attributes
    ----------
    scenario_id : int
        Scenario identifier.
    slices : tuple[ScenarioSlice, ...]
        Active slices sorted by slot index.
    seed : int
        Seed the scenario was drawn from.
    """

    scenario_id: int
    slices: tuple
    seed: int

    @property
    def ue_total(self) -> int:
        return sum(s.ue_count for s in self.slices)

    @property
    def active_indexes(self) -> list[int]:
        return [s.index for s in self.slices]

    @property
    def hp_count(self) -> int:
        return sum(s.spec.high_priority for s in self.slices)

    def slice_at(self, index: int) -> Union[None, ScenarioSlice]:
        for s in self.slices:
            if s.index == index:
                return s
        return None

    def ue_ranges(self) -> dict[int, range]:
        """Global UE index range of each active slice, slices in slot
        order."""
        ranges = {}
        start = 0
        for s in self.slices:
            ranges[s.index] = range(start, start + s.ue_count)
            start += s.ue_count
        return ranges

    def ue_specs(self) -> list[SliceSpec]:
        """Slice type of every UE in global UE order."""
        return [s.spec for s in self.slices for _ in range(s.ue_count)]

    def validate(
        self,
        min_slices: int = settings.min_active_slices,
        max_slices: int = settings.max_active_slices,
        slots: int = settings.max_slices,
        max_ues: int = settings.max_ues,
    ) -> None:
        """Raise `ScenarioError` unless every scenario invariant holds."""
        if not min_slices <= len(self.slices) <= max_slices:
            raise ScenarioError(
                f"scenario {self.scenario_id}: {len(self.slices)} slices"
            )
        indexes = self.active_indexes
        if len(set(indexes)) != len(indexes) or any(
            not 1 <= i <= slots for i in indexes
        ):
            raise ScenarioError(
                f"scenario {self.scenario_id}: bad slot indexes {indexes}"
            )
        names = [s.spec.name for s in self.slices]
        if len(set(names)) != len(names):
            raise ScenarioError(
                f"scenario {self.scenario_id}: repeated slice types"
            )
        for s in self.slices:
            if not s.spec.ue_min <= s.ue_count <= s.spec.ue_max:
                raise ScenarioError(
                    f"scenario {self.scenario_id}: slice {s.index} has "
                    f"{s.ue_count} UEs"
                )
        if self.ue_total > max_ues:
            raise ScenarioError(
                f"scenario {self.scenario_id}: {self.ue_total} UEs"
            )


def generate_scenario(
    rng: np.random.Generator,
    catalog: Sequence[SliceSpec],
    min_slices: int = settings.min_active_slices,
    max_slices: int = settings.max_active_slices,
    scenario_id: int = 0,
    seed: int = 0,
    slots: int = settings.max_slices,
    max_ues: int = settings.max_ues,
) -> NetworkScenario:
    """
    Draw a random network scenario.

    The number of active slices is uniform in ``[min_slices, max_slices]``,
    slot indexes and slice types are drawn uniformly without replacement
    and each slice's UE count is uniform within its type's bounds. If the
    UE total exceeds `max_ues`, only the UE counts are redrawn.

    Parameters
    ----------
    rng : np.random.Generator
        Source of randomness; the scenario is a function of its state.
    catalog : Sequence[SliceSpec]
        Slice types to draw from, at least `max_slices` of them.
    min_slices, max_slices : int
        Bounds on the number of active slices.
    scenario_id : int
        Identifier stored in the scenario.
    seed : int
        Seed stored in the scenario.

    Returns
    -------
    NetworkScenario
    """
    if len(catalog) < max_slices:
        raise ValueError("catalog smaller than the maximum slice count")
    if not 1 <= min_slices <= max_slices <= slots:
        raise ValueError("invalid slice count bounds")

    count = int(rng.integers(min_slices, max_slices + 1))
    indexes = sorted(
        int(i) for i in rng.choice(np.arange(1, slots + 1), count, False)
    )
    types = [catalog[int(i)] for i in rng.choice(len(catalog), count, False)]

    while True:
        ue_counts = [int(rng.integers(t.ue_min, t.ue_max + 1)) for t in types]
        if sum(ue_counts) <= max_ues:
            break
        logger.warning(
            "scenario %d: %d UEs exceed the cap, redrawing UE counts",
            scenario_id,
            sum(ue_counts),
        )

    slices = tuple(
        ScenarioSlice(index=i, spec=t, ue_count=u)
        for i, t, u in zip(indexes, types, ue_counts)
    )
    return NetworkScenario(scenario_id=scenario_id, slices=slices, seed=seed)


def scenario_seed(base_seed: int, scenario_id: int) -> int:
    """Derive the 64-bit seed of scenario `scenario_id`."""
    state = np.random.SeedSequence([base_seed, scenario_id]).generate_state(
        1, dtype=np.uint64
    )
    return int(state[0])


def scenario_from_seed(
    scenario_id: int, seed: int, catalog: Sequence[SliceSpec], **bounds
) -> NetworkScenario:
    """Draw scenario `scenario_id` from its own seed."""
    return generate_scenario(
        np.random.default_rng(seed),
        catalog,
        scenario_id=scenario_id,
        seed=seed,
        **bounds,
    )


def build_scenario(
    scenario_id: int,
    slices: Sequence[tuple[int, str, int]],
    catalog: Sequence[SliceSpec],
    seed: int = 0,
) -> NetworkScenario:
    """
    Build a scenario from explicit ``(index, slice type name, ue_count)``
    triples.
    """
    by_name = {spec.name: spec for spec in catalog}
    built = []
    for index, name, ue_count in sorted(slices):
        if name not in by_name:
            raise ScenarioError(f"unknown slice type '{name}'")
        built.append(
            ScenarioSlice(
                index=int(index), spec=by_name[name], ue_count=int(ue_count)
            )
        )
    return NetworkScenario(
        scenario_id=scenario_id, slices=tuple(built), seed=seed
    )


def write_manifest(scenarios: Sequence[NetworkScenario], path: str) -> None:
    """
    Save scenarios to a YAML manifest.

    Parameters
    ----------
    scenarios : Sequence[NetworkScenario]
        Scenarios to save.
    path : str
        Destination file.
    """
    doc = {
        "scenarios": [
            {
                "scenario_id": s.scenario_id,
                "seed": s.seed,
                "slices": [
                    {
                        "index": sl.index,
                        "type": sl.spec.name,
                        "ue_count": sl.ue_count,
                    }
                    for sl in s.slices
                ],
            }
            for s in scenarios
        ]
    }
    with open(path, "w") as dst:
        yaml.safe_dump(doc, dst, sort_keys=False)
    logger.info("wrote %d scenarios to %s", len(scenarios), path)


def read_manifest(
    path: str, catalog: Sequence[SliceSpec]
) -> list[NetworkScenario]:
    """
    Load scenarios from a YAML manifest written by `write_manifest()`.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as src:
        doc = yaml.safe_load(src)
    try:
        entries = doc["scenarios"]
        scenarios = [
            build_scenario(
                int(e["scenario_id"]),
                [(s["index"], s["type"], s["ue_count"]) for s in e["slices"]],
                catalog,
                seed=int(e["seed"]),
            )
            for e in entries
        ]
    except (KeyError, TypeError) as e:
        raise ScenarioError(f"{path}: malformed manifest ({e})") from e
    for s in scenarios:
        s.validate()
    return scenarios
