"""Building footprints: Overpass download with an on-disk cache, parsing of
OSM XML / Overpass JSON / GeoJSON into local-meter scenes, the location
selection heuristic, and building-mask rasters."""

from __future__ import annotations

import json
import logging
import math
import os
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests
import shapely
from shapely.geometry import Polygon, box

from .errors import NetworkError, ParseError, ValidationError
from .geometry import Point2, Polygon2, pixel_centers, point_segment_distance, point_in_polygon
from .scene import EXTENT_M, GeoLocation, Scene

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371000.0
DEFAULT_ENDPOINT = "http://overpass-api.de/api/map"
MIN_AREA_M2 = 1.0


# --- projection -------------------------------------------------------------

def project(lat, lon, origin: GeoLocation):
    """Local equirectangular projection around ``origin`` (meters east/north)."""
    lat0 = math.radians(origin.latitude)
    x = EARTH_RADIUS_M * np.radians(np.asarray(lon, dtype=float) - origin.longitude) * math.cos(lat0)
    y = EARTH_RADIUS_M * np.radians(np.asarray(lat, dtype=float) - origin.latitude)
    return x, y


def unproject(x, y, origin: GeoLocation):
    lat0 = math.radians(origin.latitude)
    lon = origin.longitude + np.degrees(np.asarray(x, dtype=float) / (EARTH_RADIUS_M * math.cos(lat0)))
    lat = origin.latitude + np.degrees(np.asarray(y, dtype=float) / EARTH_RADIUS_M)
    return lat, lon


def bbox_for(loc: GeoLocation, extent: float = EXTENT_M) -> tuple[float, float, float, float]:
    """(west, south, east, north) of the square of side ``extent`` centered on ``loc``."""
    half = extent / 2
    s, w = unproject(-half, -half, loc)
    n, e = unproject(half, half, loc)
    return float(w), float(s), float(e), float(n)


# --- fetching ---------------------------------------------------------------

def default_cache_dir() -> Path:
    return Path(os.environ.get("URBANECHO_CACHE", Path.home() / ".cache" / "urbanecho"))


def cache_key(loc: GeoLocation) -> str:
    return f"{loc.latitude:.6f}_{loc.longitude:.6f}.osm"


def fetch_osm(loc: GeoLocation, endpoint: str = DEFAULT_ENDPOINT, cache_dir=None, *,
              timeout: float = 60.0, retries: int = 3, backoff: float = 1.0,
              offline: bool = False) -> bytes:
    """Raw Overpass map document for the 500 m square around ``loc``.

    Responses are cached under ``cache_dir`` keyed by the location rounded to
    1e-6 degrees; a cache hit never touches the network. Failed requests are
    retried ``retries`` times with exponential backoff.
    """
    cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    path = cache_dir / cache_key(loc)
    if path.exists():
        return path.read_bytes()
    bbox = bbox_for(loc)
    if offline:
        raise NetworkError(f"offline and no cached document for {loc}", endpoint, bbox)
    params = {"bbox": ",".join(f"{v:.7f}" for v in bbox)}
    last = None
    for attempt in range(retries + 1):
        try:
            resp = requests.get(endpoint, params=params, timeout=timeout)
            resp.raise_for_status()
            data = resp.content
            break
        except requests.RequestException as exc:
            last = exc
            log.warning("overpass request failed (attempt %d/%d): %s", attempt + 1, retries + 1, exc)
            if attempt < retries:
                time.sleep(backoff * 2 ** attempt)
    else:
        raise NetworkError(f"request to {endpoint} for bbox {bbox} failed: {last}", endpoint, bbox)
    _sniff(data)  # refuse to cache garbage
    cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return data


# --- parsing ----------------------------------------------------------------

def _sniff(raw) -> str:
    text = raw.decode("utf-8", errors="replace") if isinstance(raw, bytes) else raw
    head = text.lstrip()[:1]
    if head == "<":
        return "xml"
    if head == "{":
        return "json"
    raise ParseError("document is neither XML nor JSON")


def _rings_from_xml(text: str, warnings: list) -> list[list[tuple[float, float]]]:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ParseError(f"malformed OSM XML: {exc}") from exc
    if root.tag != "osm":
        raise ParseError(f"unexpected XML root <{root.tag}>")
    nodes = {n.get("id"): (float(n.get("lon")), float(n.get("lat"))) for n in root.iter("node")}
    rings = []
    for way in root.iter("way"):
        tags = {t.get("k"): t.get("v") for t in way.iter("tag")}
        if "building" not in tags:
            continue
        refs = [nd.get("ref") for nd in way.iter("nd")]
        rings.extend(_ring_from_refs(way.get("id"), refs, nodes, warnings))
    return rings


def _ring_from_refs(way_id, refs, nodes, warnings):
    if len(refs) < 4 or refs[0] != refs[-1]:
        warnings.append(f"way {way_id}: open ring skipped")
        return []
    missing = [r for r in refs if r not in nodes]
    if missing:
        warnings.append(f"way {way_id}: {len(missing)} missing nodes, skipped")
        return []
    return [[nodes[r] for r in refs]]


def _rings_from_json(doc: dict, warnings: list):
    if doc.get("type") == "FeatureCollection":
        rings = []
        for i, feat in enumerate(doc.get("features", [])):
            props = feat.get("properties") or {}
            geom = feat.get("geometry") or {}
            if "building" not in props:
                continue
            if geom.get("type") == "Polygon":
                polys = [geom["coordinates"]]
            elif geom.get("type") == "MultiPolygon":
                polys = geom["coordinates"]
            else:
                warnings.append(f"feature {i}: geometry {geom.get('type')} skipped")
                continue
            for poly in polys:
                ring = [tuple(map(float, c[:2])) for c in poly[0]]
                if len(ring) < 4 or ring[0] != ring[-1]:
                    warnings.append(f"feature {i}: open ring skipped")
                    continue
                rings.append(ring)
        return rings
    if "elements" in doc:
        nodes = {str(e["id"]): (float(e["lon"]), float(e["lat"]))
                 for e in doc["elements"] if e.get("type") == "node"}
        rings = []
        for e in doc["elements"]:
            if e.get("type") != "way" or "building" not in (e.get("tags") or {}):
                continue
            if "geometry" in e:
                ring = [(float(g["lon"]), float(g["lat"])) for g in e["geometry"]]
                if len(ring) < 4 or ring[0] != ring[-1]:
                    warnings.append(f"way {e.get('id')}: open ring skipped")
                    continue
                rings.append(ring)
            else:
                rings.extend(_ring_from_refs(e.get("id"), [str(r) for r in e.get("nodes", [])],
                                             nodes, warnings))
        return rings
    raise ParseError("JSON document is neither GeoJSON nor Overpass JSON")


def _polygons(geom):
    if geom.is_empty:
        return
    if geom.geom_type == "Polygon":
        yield geom
    elif hasattr(geom, "geoms"):
        for g in geom.geoms:
            yield from _polygons(g)


def _clip(ring_xy: np.ndarray, extent: float) -> list[Polygon2]:
    half = extent / 2
    poly = Polygon(ring_xy)
    if not poly.is_valid:
        poly = shapely.make_valid(poly)
    out = []
    for part in _polygons(poly.intersection(box(-half, -half, half, half))):
        if part.area < MIN_AREA_M2:
            continue
        coords = np.clip(np.asarray(part.exterior.coords)[:-1], -half, half)  # holes dropped
        try:
            out.append(Polygon2(tuple(map(tuple, coords))))
        except ValidationError:
            continue
    return out


def parse_buildings(raw, loc: GeoLocation, extent: float = EXTENT_M) -> Scene:
    """Scene from an OSM XML, Overpass JSON or GeoJSON document (WGS84).

    Closed building rings are projected around ``loc``, clipped to the
    extent square and kept when at least 1 m^2 survives. Skipped inputs are
    listed in ``Scene.warnings``.
    """
    text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    warnings: list[str] = []
    if _sniff(text) == "xml":
        rings = _rings_from_xml(text, warnings)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON: {exc}") from exc
        rings = _rings_from_json(doc, warnings)
    buildings = []
    for ring in rings:
        lon, lat = np.asarray(ring).T
        x, y = project(lat, lon, loc)
        buildings.extend(_clip(np.column_stack([x, y]), extent))
    for w in warnings:
        log.warning(w)
    return Scene(buildings=tuple(buildings), extent=extent, origin=loc, warnings=tuple(warnings))


def scene_to_geojson(scene: Scene) -> dict:
    """WGS84 GeoJSON of the scene's buildings (requires ``scene.origin``)."""
    feats = []
    for poly in scene.buildings:
        lat, lon = unproject(poly.array[:, 0], poly.array[:, 1], scene.origin)
        ring = [[float(a), float(b)] for a, b in zip(lon, lat)]
        ring.append(ring[0])
        feats.append({"type": "Feature", "properties": {"building": "yes"},
                      "geometry": {"type": "Polygon", "coordinates": [ring]}})
    o = scene.origin
    return {"type": "FeatureCollection", "features": feats,
            "origin": {"lat": o.latitude, "lon": o.longitude, "city": o.city_tag}}


# --- location heuristic -----------------------------------------------------

@dataclass(frozen=True)
class SelectionRule:
    min_buildings: int = 10
    radius_m: float = 200.0
    clearance_m: float = 50.0


def building_clearance(scene: Scene, center=(0.0, 0.0)) -> float:
    """Distance from ``center`` to the nearest building point (0 if inside one)."""
    best = math.inf
    for poly in scene.buildings:
        if point_in_polygon(center, poly):
            return 0.0
        for a, b in poly.edges():
            best = min(best, point_segment_distance(center, a, b))
    return best


def location_ok(scene: Scene, rule: SelectionRule = SelectionRule()) -> bool:
    c = scene.source
    near = sum(
        1 for poly in scene.buildings
        if np.any(np.hypot(poly.array[:, 0] - c.x, poly.array[:, 1] - c.y) <= rule.radius_m)
    )
    return near >= rule.min_buildings and building_clearance(scene, c) >= rule.clearance_m


def select_locations(candidates, rule: SelectionRule = SelectionRule()) -> list[GeoLocation]:
    """Candidates whose scene has at least ``min_buildings`` buildings with a
    vertex within ``radius_m`` and no building closer than ``clearance_m``.

    ``candidates`` is an iterable of ``(GeoLocation, Scene)`` pairs; input
    order is preserved.
    """
    return [loc for loc, scene in candidates if location_ok(scene, rule)]


# --- building mask ----------------------------------------------------------

@dataclass
class SceneRaster:
    pixels: np.ndarray  # uint8, 0 building, 255 open
    pixel_pitch_m: float

    @property
    def resolution(self) -> int:
        return self.pixels.shape[0]

    @property
    def building_mask(self) -> np.ndarray:
        return self.pixels == 0


def rasterize_scene(scene: Scene, resolution: int) -> SceneRaster:
    """Building mask sampled at pixel centers; row 0 is the north edge."""
    if resolution < 1:
        raise ValidationError(f"resolution must be positive, got {resolution}")
    centers = pixel_centers(resolution, scene.extent).reshape(-1, 2)
    pixels = np.full(len(centers), 255, dtype=np.uint8)
    if scene.buildings:
        pixels[scene.index.inside(centers)] = 0
    return SceneRaster(pixels.reshape(resolution, resolution), scene.extent / resolution)


def load_geojson_scene(path, extent: float = EXTENT_M) -> Scene:
    """Scene from an offline GeoJSON file.

    The sample center is read from a top-level ``origin`` member
    (``{"lat", "lon", "city"}``) when present, else the bounding-box center of
    all coordinates.
    """
    raw = Path(path).read_bytes()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON: {exc}") from exc
    origin = doc.get("origin")
    if origin:
        loc = GeoLocation(float(origin["lat"]), float(origin["lon"]), origin.get("city", ""))
    else:
        coords = [c for f in doc.get("features", [])
                  for c in _all_coords((f.get("geometry") or {}).get("coordinates", []))]
        if not coords:
            raise ParseError(f"{path}: no coordinates and no origin")
        lon, lat = np.asarray(coords).T
        loc = GeoLocation(float((lat.min() + lat.max()) / 2), float((lon.min() + lon.max()) / 2),
                          Path(path).stem)
    return parse_buildings(raw, loc, extent)


def _all_coords(c):
    if c and isinstance(c[0], (int, float)):
        return [tuple(c[:2])]
    return [p for sub in c for p in _all_coords(sub)]
