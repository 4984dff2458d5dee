"""Scene and geolocation types shared by ingestion, simulation and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

from .errors import ValidationError
from .geometry import Point2, Polygon2, SceneIndex

EXTENT_M = 500.0


@dataclass(frozen=True)
class GeoLocation:
    latitude: float
    longitude: float
    city_tag: str = ""

    def __post_init__(self):
        if not abs(self.latitude) <= 90:
            raise ValidationError(f"latitude out of range: {self.latitude}")
        if not abs(self.longitude) <= 180:
            raise ValidationError(f"longitude out of range: {self.longitude}")


@dataclass(frozen=True)
class Scene:
    """Building footprints in local meters around a central source.

    The frame is centered on the sample location: x east, y north, the
    square extent spans ``[-extent/2, extent/2]`` on both axes.
    """

    buildings: tuple = ()
    extent: float = EXTENT_M
    source: Point2 = Point2(0.0, 0.0)
    origin: Optional[GeoLocation] = None
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        polys = tuple(b if isinstance(b, Polygon2) else Polygon2(tuple(b)) for b in self.buildings)
        object.__setattr__(self, "buildings", polys)
        object.__setattr__(self, "source", Point2(*map(float, self.source)))
        half = self.extent / 2 + 1e-6
        for i, poly in enumerate(polys):
            for v in poly.vertices:
                if abs(v.x) > half or abs(v.y) > half:
                    raise ValidationError(f"building {i} vertex {tuple(v)} outside the scene extent")

    @cached_property
    def index(self) -> SceneIndex:
        return SceneIndex(self.buildings)

    def source_inside_building(self) -> bool:
        return bool(self.index.inside([self.source])[0])

    def check_source(self):
        if self.source_inside_building():
            raise ValidationError(f"source {tuple(self.source)} lies inside a building")
