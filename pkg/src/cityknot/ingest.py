"""Convert external data into layers.

OSM Overpass-JSON extracts become physical layers (extruded building
meshes, park and water polygons, road polylines), GeoJSON becomes polygon
or line layers, CSV becomes thematic point layers, and bounded regions
become uniform analysis grids.  Surface sampling turns a building mesh
into shadow-ready sample points with outward normals.

All conversions are pure and deterministic: the same inputs and config
produce byte-identical layer files.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geocode import Geocoder, OfflineGeocoder
from .geometry import (
    LocalFrame,
    clip_polygon_to_box,
    clip_segment_to_box,
    normalize_rings,
    polygons_intersect,
    rings_bbox,
)
from .layers import PhysicalLayer, PhysicalObject, ThematicLayer
from .triangulate import (
    extrude_footprint,
    subdivide_mesh,
    triangle_areas,
    triangulate_polygon,
    vertex_normals,
    weld_vertices,
)

OSM_LAYER_NAMES = ("buildings", "parks", "water", "roads")

DEGENERATE_AREA = 1e-9  # m^2, triangles below this carry no samples
WELD_TOL = 1e-6         # m


class IngestError(ValueError):
    pass


class EmptyRegion(IngestError):
    """No requested feature intersects the region."""


class MalformedWay(IngestError):
    """Every candidate way had unresolvable node refs."""


class UnsupportedGeometry(IngestError):
    pass


class EmptyCollection(IngestError):
    pass


class MissingColumn(IngestError):
    pass


class TooManyCells(IngestError):
    pass


def _warn_to(warn):
    return warn if warn is not None else (lambda message: None)


# ---------------------------------------------------------------------------
# region handling


@dataclass
class IngestConfig:
    """Region plus conversion knobs; all lengths in meters."""

    region: tuple | list | str  # bbox, geodetic polygon, or address
    layers: tuple = OSM_LAYER_NAMES
    default_building_height: float = 10.0
    meters_per_level: float = 3.5
    grid_cell: float = 10.0
    surface_sample_edge: float = 5.0
    cell_limit: int = 1_000_000
    geocoder: Geocoder = field(default_factory=OfflineGeocoder)

    def __post_init__(self):
        for name in ("default_building_height", "meters_per_level", "grid_cell",
                     "surface_sample_edge"):
            if getattr(self, name) <= 0:
                raise IngestError(f"{name} must be positive")
        for name in self.layers:
            if name not in OSM_LAYER_NAMES:
                raise IngestError(f"unknown layer request {name!r}")


@dataclass
class _Region:
    """Geodetic region resolved to the shared local frame."""

    frame: LocalFrame
    box: tuple  # (xmin, ymin, xmax, ymax) local meters
    rings: list | None = None  # polygon regions: one projected ring

    def intersects(self, footprint_rings) -> bool:
        bb = rings_bbox(footprint_rings)
        if (bb[2] < self.box[0] or self.box[2] < bb[0]
                or bb[3] < self.box[1] or self.box[3] < bb[1]):
            return False
        if self.rings is None:
            return True
        return polygons_intersect(self.rings, footprint_rings)


def _box_region(bbox, frame: LocalFrame | None) -> _Region:
    lat_min, lon_min, lat_max, lon_max = (float(v) for v in bbox)
    if lat_min >= lat_max or lon_min >= lon_max:
        raise IngestError("region bounding box min must be below max")
    if frame is None:
        frame = LocalFrame((lat_min + lat_max) / 2, (lon_min + lon_max) / 2)
    x0, y0, _ = frame.project(lat_min, lon_min)
    x1, y1, _ = frame.project(lat_max, lon_max)
    return _Region(frame, (min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1)))


def resolve_region(config: IngestConfig, frame: LocalFrame | None = None) -> _Region:
    """Turn the configured region into a local-frame clip region.

    Polygon regions clip to the polygon's bounding box but admit only
    features that intersect the polygon itself; addresses resolve through
    the configured geocoder.
    """
    region = config.region
    if isinstance(region, str):
        return _box_region(config.geocoder.geocode(region), frame)
    region = list(region)
    if len(region) == 4 and all(isinstance(v, (int, float)) for v in region):
        return _box_region(region, frame)
    ring_geo = np.asarray(region, dtype=np.float64).reshape(-1, 2)
    if len(ring_geo) < 3:
        raise IngestError("region polygon needs at least 3 vertices")
    if frame is None:
        lat_c = float(ring_geo[:, 0].mean())
        lon_c = float(ring_geo[:, 1].mean())
        frame = LocalFrame(lat_c, lon_c)
    rx, ry, _ = frame.project(ring_geo[:, 0], ring_geo[:, 1])
    ring = np.column_stack([rx, ry])
    rings, _ = normalize_rings([ring])
    box = rings_bbox(rings)
    return _Region(frame, box, rings=rings)


# ---------------------------------------------------------------------------
# OSM


_PARK_LEISURE = ("park", "garden", "playground", "pitch", "golf_course",
                 "nature_reserve")
_PARK_LANDUSE = ("grass", "forest", "meadow", "recreation_ground",
                 "village_green", "cemetery")


def _classify_way(tags: dict) -> str | None:
    if tags.get("building") and tags.get("building") != "no":
        return "buildings"
    if (tags.get("leisure") in _PARK_LEISURE
            or tags.get("landuse") in _PARK_LANDUSE
            or tags.get("natural") == "wood"):
        return "parks"
    if (tags.get("natural") == "water" or tags.get("waterway") == "riverbank"
            or tags.get("landuse") in ("reservoir", "basin")):
        return "water"
    if tags.get("highway"):
        return "roads"
    return None


def _parse_length(text) -> float | None:
    if text is None:
        return None
    s = str(text).strip().lower()
    for suffix in ("meters", "meter", "m"):
        if s.endswith(suffix):
            s = s[: -len(suffix)].strip()
            break
    try:
        value = float(s)
    except ValueError:
        return None
    return value if math.isfinite(value) and value > 0 else None


def _building_height(tags: dict, config: IngestConfig, warn) -> float:
    height = _parse_length(tags.get("height"))
    if height is not None:
        return height
    if "height" in tags:
        warn(f"unparseable height tag {tags['height']!r}; falling back")
    levels = _parse_length(tags.get("building:levels"))
    if levels is not None:
        return levels * config.meters_per_level
    if "building:levels" in tags:
        warn(f"unparseable building:levels tag {tags['building:levels']!r}; "
             f"using default height")
    return config.default_building_height


def _extrude_building(way_id, ring, height, tags) -> PhysicalObject:
    rings, _ = normalize_rings([ring])
    vertices, triangles = extrude_footprint(rings, height)
    return PhysicalObject(
        object_id=f"way/{way_id}",
        coordinates=vertices,
        indices=triangles,
        rings=[list(range(len(rings[0])))],
        attributes={**tags, "height": height},
    )


def _clip_polyline(points: np.ndarray, box) -> list:
    """Clip a polyline to a box; returns maximal connected runs."""
    runs: list[list] = []
    current: list = []
    for i in range(len(points) - 1):
        seg = clip_segment_to_box(points[i], points[i + 1], *box)
        if seg is None:
            if current:
                runs.append(current)
                current = []
            continue
        a, b = seg
        if current and np.hypot(current[-1][0] - a[0], current[-1][1] - a[1]) > 1e-9:
            runs.append(current)
            current = []
        if not current:
            current.append(a)
        current.append(b)
    if current:
        runs.append(current)
    return [r for r in runs if len(r) >= 2]


def ingest_osm(extract: dict, config: IngestConfig,
               frame: LocalFrame | None = None, warn=None) -> list:
    """Convert an Overpass-JSON extract into the requested physical layers.

    Buildings keep their whole footprint when it intersects the region and
    are extruded to closed meshes; parks and water are clipped polygons;
    roads are clipped polylines.  Ways with unresolvable node refs are
    skipped with a warning; relations are not expanded.
    """
    warn = _warn_to(warn)
    region = resolve_region(config, frame)
    fr = region.frame

    nodes: dict[int, tuple[float, float]] = {}
    ways: list[dict] = []
    relation_count = 0
    for element in extract.get("elements", []):
        etype = element.get("type")
        if etype == "node":
            nodes[element["id"]] = (float(element["lat"]), float(element["lon"]))
        elif etype == "way":
            ways.append(element)
        elif etype == "relation":
            relation_count += 1
    if relation_count:
        warn(f"skipped {relation_count} relation(s): only ways are converted")

    wanted = tuple(config.layers)
    candidates = 0
    malformed = 0
    winding_fixes = 0
    buildings: list[PhysicalObject] = []
    flats: dict[str, list] = {"parks": [], "water": []}
    roads: list[PhysicalObject] = []

    for way in ways:
        tags = way.get("tags") or {}
        target = _classify_way(tags)
        if target is None or target not in wanted:
            continue
        candidates += 1
        refs = way.get("nodes") or []
        try:
            latlon = np.array([nodes[r] for r in refs], dtype=np.float64)
        except KeyError:
            warn(f"way/{way.get('id')}: unresolvable node ref; skipped")
            malformed += 1
            continue
        if len(latlon) < 2:
            warn(f"way/{way.get('id')}: fewer than 2 nodes; skipped")
            malformed += 1
            continue
        closed = bool(np.all(latlon[0] == latlon[-1]))
        wx, wy, _ = fr.project(latlon[:, 0], latlon[:, 1])
        xy = np.column_stack([wx, wy])

        if target == "roads":
            runs = _clip_polyline(xy, region.box)
            for k, run in enumerate(runs):
                pts = np.array([[p[0], p[1], 0.0] for p in run])
                suffix = f"/{k}" if len(runs) > 1 else ""
                roads.append(PhysicalObject(
                    object_id=f"way/{way['id']}{suffix}",
                    coordinates=pts,
                    rings=[list(range(len(pts)))],
                    attributes=dict(tags),
                ))
            continue

        if not closed or len(latlon) < 4:
            warn(f"way/{way.get('id')}: open ring for area feature; skipped")
            malformed += 1
            continue
        ring = xy[:-1]  # drop the repeated closing vertex

        if target == "buildings":
            footprint, fixed = normalize_rings([ring])
            if fixed:
                winding_fixes += 1
            if not region.intersects(footprint):
                continue
            height = _building_height(tags, config, warn)
            buildings.append(_extrude_building(way["id"], ring, height, tags))
            continue

        # parks / water: clip to the region box
        clipped = clip_polygon_to_box(ring, *region.box)
        if len(clipped) < 3:
            continue
        rings, fixed = normalize_rings([clipped])
        if fixed:
            winding_fixes += 1
        if region.rings is not None and not polygons_intersect(region.rings, rings):
            continue
        pts = np.column_stack([rings[0], np.zeros(len(rings[0]))])
        flats[target].append(PhysicalObject(
            object_id=f"way/{way['id']}",
            coordinates=pts,
            rings=[list(range(len(pts)))],
            attributes=dict(tags),
        ))

    if winding_fixes:
        warn(f"normalized winding on {winding_fixes} ring(s)")
    if candidates == 0:
        raise EmptyRegion("extract has no requested features")
    if malformed == candidates:
        raise MalformedWay("every candidate way was malformed")

    origin = (fr.lat0, fr.lon0)
    produced: list[PhysicalLayer] = []
    if "buildings" in wanted:
        produced.append(PhysicalLayer("buildings", "mesh3d", buildings, origin))
    if "parks" in wanted:
        produced.append(PhysicalLayer("parks", "polygons2d", flats["parks"], origin))
    if "water" in wanted:
        produced.append(PhysicalLayer("water", "polygons2d", flats["water"], origin))
    if "roads" in wanted:
        produced.append(PhysicalLayer("roads", "lines", roads, origin))
    if all(not layer.objects for layer in produced):
        raise EmptyRegion("no requested feature intersects the region")
    return produced


# ---------------------------------------------------------------------------
# GeoJSON


def _geojson_polygon_rings(geometry) -> list:
    """Polygon parts as lists of (lon, lat[, h]) rings."""
    gtype = geometry.get("type")
    if gtype == "Polygon":
        return [geometry["coordinates"]]
    if gtype == "MultiPolygon":
        return list(geometry["coordinates"])
    raise UnsupportedGeometry(f"geometry {gtype!r} is not polygonal")


def _geojson_lines(geometry) -> list:
    gtype = geometry.get("type")
    if gtype == "LineString":
        return [geometry["coordinates"]]
    if gtype == "MultiLineString":
        return list(geometry["coordinates"])
    raise UnsupportedGeometry(f"geometry {gtype!r} is not a line")


def _lonlat_to_local(coords, frame: LocalFrame) -> np.ndarray:
    arr = np.asarray(coords, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise UnsupportedGeometry("coordinates must be [lon, lat] rows")
    heights = arr[:, 2] if arr.shape[1] == 3 else np.zeros(len(arr))
    x, y, _ = frame.project(arr[:, 1], arr[:, 0])
    return np.column_stack([x, y, heights])


def ingest_geojson(doc: dict, name: str, kind: str,
                   origin: tuple | None = None, warn=None) -> PhysicalLayer:
    """One object per feature; properties preserved as attributes.

    kind selects the target: polygons2d takes Polygon/MultiPolygon, lines
    takes LineString/MultiLineString; anything else is UnsupportedGeometry.
    GeoJSON positions are [lon, lat, optional height].
    """
    warn = _warn_to(warn)
    if kind not in ("polygons2d", "lines"):
        raise UnsupportedGeometry(f"unsupported target kind {kind!r}")
    if doc.get("type") == "FeatureCollection":
        features = doc.get("features") or []
    elif doc.get("type") == "Feature":
        features = [doc]
    else:
        features = [{"type": "Feature", "geometry": doc, "properties": {}}]
    if not features:
        raise EmptyCollection("GeoJSON has no features")

    if origin is None:
        stack = []
        for feat in features:
            geometry = feat.get("geometry") or {}
            stack.extend(_flatten_positions(geometry.get("coordinates", [])))
        if not stack:
            raise EmptyCollection("GeoJSON has no coordinates")
        arr = np.asarray(stack, dtype=np.float64)
        origin = (float(arr[:, 1].mean()), float(arr[:, 0].mean()))
    frame = LocalFrame(*origin)

    objects: list[PhysicalObject] = []
    fixes = 0
    for i, feat in enumerate(features):
        geometry = feat.get("geometry") or {}
        props = feat.get("properties") or {}
        object_id = str(feat.get("id", props.get("id", f"feature/{i}")))
        if kind == "polygons2d":
            parts = _geojson_polygon_rings(geometry)
            all_rings = []
            for part in parts:
                local = [_lonlat_to_local(ring, frame)[:, :2] for ring in part]
                fixed_rings, fixed = normalize_rings(local)
                fixes += bool(fixed)
                all_rings.extend(fixed_rings)
            coords = np.vstack([np.column_stack([r, np.zeros(len(r))])
                                for r in all_rings])
            ring_indices = []
            base = 0
            for r in all_rings:
                ring_indices.append(list(range(base, base + len(r))))
                base += len(r)
            objects.append(PhysicalObject(object_id, coords, rings=ring_indices,
                                          attributes=dict(props)))
        else:
            lines = _geojson_lines(geometry)
            coords = np.vstack([_lonlat_to_local(line, frame) for line in lines])
            ring_indices = []
            base = 0
            for line in lines:
                ring_indices.append(list(range(base, base + len(line))))
                base += len(line)
            objects.append(PhysicalObject(object_id, coords, rings=ring_indices,
                                          attributes=dict(props)))
    if fixes:
        warn(f"normalized winding on {fixes} feature(s)")
    return PhysicalLayer(name, kind, objects, (frame.lat0, frame.lon0))


def _flatten_positions(coords) -> list:
    """All [lon, lat, ...] positions in a nested coordinate array."""
    if not isinstance(coords, (list, tuple)) or not coords:
        return []
    first = coords[0]
    if isinstance(first, (int, float)):
        return [coords]
    out = []
    for item in coords:
        out.extend(_flatten_positions(item))
    return out


# ---------------------------------------------------------------------------
# CSV


_DEFAULT_COLUMNS = {"lat": "lat", "lon": "lon", "height": "height",
                    "value": "value"}


def _looks_numeric(text: str) -> bool:
    return bool(text) and (text[0].isdigit() or text[0] in "+-.")


def ingest_csv(path: str, columns: dict | None = None, name: str | None = None,
               warn=None) -> ThematicLayer:
    """Read (lat, lon, height, value) rows into a thematic layer.

    columns remaps logical names to header names; the height column is
    optional and defaults to 0.  Value cells hold numbers or text: cells
    that look numeric but fail to parse become null with a warning.
    """
    warn = _warn_to(warn)
    colmap = dict(_DEFAULT_COLUMNS)
    colmap.update(columns or {})
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(f"{path}: empty file, no header row") from None
        header = [h.strip() for h in header]
        index: dict[str, int] = {}
        for logical in ("lat", "lon", "value"):
            column = colmap[logical]
            if column not in header:
                raise MissingColumn(f"{path}: missing column {column!r}")
            index[logical] = header.index(column)
        has_height = colmap["height"] in header
        if has_height:
            index["height"] = header.index(colmap["height"])

        points: list = []
        values: list = []
        for row_number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                lat = float(row[index["lat"]])
                lon = float(row[index["lon"]])
            except (ValueError, IndexError):
                warn(f"{path}:{row_number}: unparseable coordinates; row skipped")
                continue
            height = 0.0
            if has_height and index["height"] < len(row):
                cell = row[index["height"]].strip()
                if cell:
                    try:
                        height = float(cell)
                    except ValueError:
                        warn(f"{path}:{row_number}: unparseable height; using 0")
                        height = 0.0
            value = None
            if index["value"] < len(row):
                cell = row[index["value"]].strip()
                if cell:
                    try:
                        value = float(cell)
                        if not math.isfinite(value):
                            warn(f"{path}:{row_number}: non-finite value; null")
                            value = None
                    except ValueError:
                        if _looks_numeric(cell):
                            warn(f"{path}:{row_number}: unparseable numeric "
                                 f"value {cell!r}; null")
                            value = None
                        else:
                            value = cell
            points.append([lat, lon, height])
            values.append(value)

    if not points:
        warn(f"{path}: no data rows")
        points = np.zeros((0, 3))
    layer_name = name or path.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return ThematicLayer(layer_name, np.asarray(points, dtype=np.float64), values)


# ---------------------------------------------------------------------------
# grids


def make_grid(region_bbox, cell: float, origin: tuple | None = None,
              name: str = "grid", cell_limit: int = 1_000_000) -> PhysicalLayer:
    """Tile the projected region with axis-aligned square cells.

    ceil(width / cell) x ceil(height / cell) cells in row-major object order
    (rows south to north, columns west to east); cells on the far edges may
    overshoot the region.
    """
    if cell <= 0:
        raise IngestError("cell size must be positive")
    region = _box_region(region_bbox, LocalFrame(*origin) if origin else None)
    xmin, ymin, xmax, ymax = region.box
    # The 1e-9 slack keeps exact multiples (e.g. a 100 m span at cell 10)
    # from picking up a spurious extra row through projection round-off.
    cols = max(1, math.ceil((xmax - xmin) / cell - 1e-9))
    rows = max(1, math.ceil((ymax - ymin) / cell - 1e-9))
    if rows * cols > cell_limit:
        raise TooManyCells(f"{rows} x {cols} = {rows * cols} cells exceeds "
                           f"the limit of {cell_limit}")
    objects = []
    for r in range(rows):
        y0 = ymin + r * cell
        for c in range(cols):
            x0 = xmin + c * cell
            i = r * cols + c
            coords = np.array([
                [x0, y0, 0.0],
                [x0 + cell, y0, 0.0],
                [x0 + cell, y0 + cell, 0.0],
                [x0, y0 + cell, 0.0],
            ])
            objects.append(PhysicalObject(
                object_id=f"cell_{i}",
                coordinates=coords,
                rings=[[0, 1, 2, 3]],
                attributes={"row": r, "col": c},
            ))
    frame = region.frame
    return PhysicalLayer(name, "grid", objects, (frame.lat0, frame.lon0))


# ---------------------------------------------------------------------------
# surface sampling


@dataclass
class SurfaceSamples:
    """Shadow-ready sample points: position, owning object, outward normal."""

    points: np.ndarray       # (n, 3) workspace-local meters
    normals: np.ndarray      # (n, 3) unit outward
    object_ids: list         # owning object per point
    crs_origin: tuple

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(self.points) != len(self.normals) or len(self.points) != len(
                self.object_ids):
            raise IngestError("sample arrays disagree in length")

    def __len__(self) -> int:
        return len(self.points)

    def to_thematic(self, name: str, values=None, annotations=None) -> ThematicLayer:
        frame = LocalFrame(*self.crs_origin)
        geo = frame.unproject_points(self.points)
        return ThematicLayer(
            name=name,
            points=geo,
            values=list(values) if values is not None else [None] * len(self),
            crs_origin=self.crs_origin,
            annotations=annotations or {},
        )


def sample_surfaces(layer: PhysicalLayer, max_edge: float) -> SurfaceSamples:
    """Subdivide a mesh3d layer until every edge is at most max_edge and
    take the unique vertices as sample points.

    Midpoint subdivision shares vertices across neighboring triangles, and
    a final weld (1e-6 m) removes any residual duplicates; triangles with
    area below 1e-9 m^2 contribute no samples of their own.
    """
    if layer.kind != "mesh3d":
        raise IngestError(f"layer {layer.name!r} is {layer.kind}, need mesh3d")
    all_points = []
    all_normals = []
    owners: list = []
    for obj in layer.objects:
        if obj.indices is None or not len(obj.indices):
            continue
        vertices, triangles = subdivide_mesh(obj.coordinates, obj.indices, max_edge)
        vertices, triangles = weld_vertices(vertices, triangles, WELD_TOL)
        areas = triangle_areas(vertices, triangles)
        triangles = triangles[areas > DEGENERATE_AREA]
        keep = np.zeros(len(vertices), dtype=bool)
        keep[np.unique(triangles)] = True
        normals = vertex_normals(vertices, triangles)
        all_points.append(vertices[keep])
        all_normals.append(normals[keep])
        owners.extend([obj.object_id] * int(keep.sum()))
    if all_points:
        points = np.vstack(all_points)
        normals = np.vstack(all_normals)
    else:
        points = np.zeros((0, 3))
        normals = np.zeros((0, 3))
    return SurfaceSamples(points, normals, owners, layer.crs_origin)
