"""Layer store: the .utk container, the workspace catalog, the join cache.

A .utk file is a UTF-8 JSON document with top-level fields
container_version, type ("physical" | "thematic"), name, crs_origin, and a
type-specific payload.  Coordinates are geodetic (lat, lon, height meters)
on disk and projected into the workspace-local frame on load.  Loaded layers
are immutable: evaluation never mutates stored geometry or values, and the
in-memory arrays are marked read-only to keep that honest.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import LocalFrame, polygon_centroid

CONTAINER_VERSION = 1
LAYER_SUFFIX = ".utk"

PHYSICAL_KINDS = ("mesh3d", "polygons2d", "lines", "grid")
POLYGONAL_KINDS = ("polygons2d", "grid")

Scalar = float | str | None


class LayerError(ValueError):
    pass


class LayerFormatError(LayerError):
    """Malformed .utk container."""


class FrameMismatch(LayerError):
    """Layer crs_origin differs from the workspace frame."""


def normalize_scalar(value) -> Scalar:
    """Coerce a raw value into the scalar model: number, text, or null.

    NaN becomes null on the way in; bools count as numbers.
    """
    if value is None:
        return None
    if isinstance(value, bool):
        return 1.0 if value else 0.0
    if isinstance(value, (int, float)):
        v = float(value)
        return None if math.isnan(v) else v
    if isinstance(value, str):
        return value
    raise LayerError(f"unsupported scalar value {value!r}")


@dataclass(frozen=True)
class ColorScale:
    """How a thematic value maps to color; carried with the layer."""

    scheme: str = "sequential"
    domain: tuple[float, float] | str = "auto"
    no_data_color: str = "#9aa0a6"

    def to_json(self) -> dict:
        domain = self.domain if isinstance(self.domain, str) else list(self.domain)
        return {
            "scheme": self.scheme,
            "domain": domain,
            "no_data_color": self.no_data_color,
        }

    @staticmethod
    def from_json(data: dict | None) -> "ColorScale":
        if not data:
            return ColorScale()
        domain = data.get("domain", "auto")
        if isinstance(domain, (list, tuple)):
            domain = (float(domain[0]), float(domain[1]))
        elif domain != "auto":
            raise LayerFormatError("color_scale.domain must be 'auto' or [lo, hi]")
        scheme = data.get("scheme", "sequential")
        if scheme not in ("sequential", "diverging", "categorical"):
            raise LayerFormatError(f"unknown color scheme {scheme!r}")
        return ColorScale(scheme, domain, data.get("no_data_color", "#9aa0a6"))


@dataclass
class ThematicLayer:
    """Point-addressed values: (lat, lon, height) rows plus one scalar each."""

    name: str
    points: np.ndarray  # (n, 3) geodetic
    values: list
    color_scale: ColorScale = field(default_factory=ColorScale)
    crs_origin: tuple[float, float] | None = None
    annotations: dict = field(default_factory=dict)
    content_hash: str | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(self.values) != len(self.points):
            raise LayerError("thematic layer points and values lengths differ")
        self.values = [normalize_scalar(v) for v in self.values]
        self.points.setflags(write=False)

    def __len__(self) -> int:
        return len(self.points)

    def projected(self, frame: LocalFrame) -> np.ndarray:
        return frame.project_points(self.points)


@dataclass
class PhysicalObject:
    object_id: str
    coordinates: np.ndarray          # (n, 3) workspace-local meters
    indices: np.ndarray | None = None    # (m, 3) triangles, mesh3d only
    rings: list | None = None            # vertex-index rings, footprint order
    attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coordinates = np.asarray(self.coordinates, dtype=np.float64).reshape(-1, 3)
        if self.indices is not None:
            self.indices = np.asarray(self.indices, dtype=np.int32).reshape(-1, 3)
            self.indices.setflags(write=False)
        self.coordinates.setflags(write=False)

    def footprint(self) -> list:
        """2D rings (as coordinate arrays) for containment and distance."""
        if self.rings:
            return [self.coordinates[np.asarray(r, dtype=np.int64), :2] for r in self.rings]
        return [self.coordinates[:, :2]]


@dataclass
class PhysicalLayer:
    """Geometry container: ordered objects, each with its own coordinates.

    Knot values address either objects or the concatenation of all object
    coordinates in object order ("coordinate level").
    """

    name: str
    kind: str
    objects: list
    crs_origin: tuple[float, float]
    content_hash: str | None = None

    def __post_init__(self):
        if self.kind not in PHYSICAL_KINDS:
            raise LayerError(f"unknown physical kind {self.kind!r}")
        counts = [len(o.coordinates) for o in self.objects]
        self._offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self._all_coords = None
        self._centroids = None
        self._id_index = {o.object_id: i for i, o in enumerate(self.objects)}
        if len(self._id_index) != len(self.objects):
            raise LayerError("duplicate object_id in physical layer")

    @property
    def coordinate_count(self) -> int:
        return int(self._offsets[-1])

    @property
    def offsets(self) -> np.ndarray:
        """Per-object [start, end) into the stacked coordinate array."""
        return self._offsets

    def all_coordinates(self) -> np.ndarray:
        if self._all_coords is None:
            if self.objects:
                stacked = np.vstack([o.coordinates for o in self.objects])
            else:
                stacked = np.zeros((0, 3), dtype=np.float64)
            stacked.setflags(write=False)
            self._all_coords = stacked
        return self._all_coords

    def centroids(self) -> np.ndarray:
        """(n, 2) footprint centroid per object."""
        if self._centroids is None:
            cents = [polygon_centroid(o.footprint()) for o in self.objects]
            self._centroids = np.asarray(cents, dtype=np.float64).reshape(-1, 2)
            self._centroids.setflags(write=False)
        return self._centroids

    def object_index(self, object_id: str) -> int:
        try:
            return self._id_index[object_id]
        except KeyError:
            raise LayerError(f"object {object_id!r} not in layer {self.name!r}") from None

    def owner_of_coordinates(self) -> np.ndarray:
        """Object index per global coordinate row."""
        owners = np.zeros(self.coordinate_count, dtype=np.int64)
        for i in range(len(self.objects)):
            owners[self._offsets[i]:self._offsets[i + 1]] = i
        return owners


Layer = ThematicLayer | PhysicalLayer


# ---------------------------------------------------------------------------
# container IO


def _dump_canonical(doc: dict) -> bytes:
    # allow_nan=False: NaN/Infinity are not JSON and must never reach disk.
    return (json.dumps(doc, ensure_ascii=False, indent=1, allow_nan=False)
            + "\n").encode("utf-8")


def _coords_to_geodetic(obj: PhysicalObject, frame: LocalFrame) -> list:
    geo = frame.unproject_points(obj.coordinates)
    return [[float(a), float(b), float(c)] for a, b, c in geo]


def save_layer(layer: Layer, path: str) -> str:
    """Write a layer as a .utk container; geodetic on disk, deterministic
    bytes for identical inputs.  Returns the content hash."""
    if isinstance(layer, ThematicLayer):
        if not np.all(np.isfinite(layer.points)):
            raise LayerError(f"layer {layer.name!r} has non-finite point coordinates")
        doc = {
            "container_version": CONTAINER_VERSION,
            "type": "thematic",
            "name": layer.name,
            "crs_origin": list(layer.crs_origin) if layer.crs_origin else None,
            "payload": {
                "points": [[float(a), float(b), float(c)] for a, b, c in layer.points],
                "values": layer.values,
                "color_scale": layer.color_scale.to_json(),
                **({"annotations": layer.annotations} if layer.annotations else {}),
            },
        }
    elif isinstance(layer, PhysicalLayer):
        frame = LocalFrame(*layer.crs_origin)
        objects = []
        for o in layer.objects:
            if not np.all(np.isfinite(o.coordinates)):
                raise LayerError(
                    f"object {o.object_id!r} has non-finite coordinates")
            entry: dict = {
                "object_id": o.object_id,
                "coordinates": _coords_to_geodetic(o, frame),
            }
            if o.indices is not None:
                entry["indices"] = o.indices.tolist()
            if o.rings is not None:
                entry["rings"] = [list(map(int, r)) for r in o.rings]
            if o.attributes:
                entry["attributes"] = o.attributes
            objects.append(entry)
        doc = {
            "container_version": CONTAINER_VERSION,
            "type": "physical",
            "name": layer.name,
            "crs_origin": list(layer.crs_origin),
            "payload": {"kind": layer.kind, "objects": objects},
        }
    else:
        raise LayerError(f"cannot save {type(layer).__name__}")
    data = _dump_canonical(doc)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return hashlib.sha256(data).hexdigest()


def load_layer(path: str, frame: LocalFrame | None = None) -> Layer:
    """Read a .utk container; physical coordinates come back projected into
    the given frame (default: the layer's own crs_origin)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise LayerError(f"cannot read layer file {path}: {exc}") from exc
    content_hash = hashlib.sha256(raw).hexdigest()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LayerFormatError(f"{path}: not a JSON .utk container ({exc})") from exc
    for key in ("container_version", "type", "name", "payload"):
        if key not in doc:
            raise LayerFormatError(f"{path}: missing field {key!r}")
    if doc["container_version"] != CONTAINER_VERSION:
        raise LayerFormatError(
            f"{path}: unsupported container_version {doc['container_version']!r}")
    origin = doc.get("crs_origin")
    payload = doc["payload"]

    if doc["type"] == "thematic":
        points = np.asarray(payload.get("points", []), dtype=np.float64).reshape(-1, 3)
        values = payload.get("values", [])
        layer = ThematicLayer(
            name=doc["name"],
            points=points,
            values=values,
            color_scale=ColorScale.from_json(payload.get("color_scale")),
            crs_origin=tuple(origin) if origin else None,
            annotations=payload.get("annotations", {}),
            content_hash=content_hash,
        )
        return layer

    if doc["type"] == "physical":
        if origin is None:
            raise LayerFormatError(f"{path}: physical layer without crs_origin")
        origin = (float(origin[0]), float(origin[1]))
        if frame is None:
            frame = LocalFrame(*origin)
        elif (abs(frame.lat0 - origin[0]) > 1e-9) or (abs(frame.lon0 - origin[1]) > 1e-9):
            raise FrameMismatch(
                f"{path}: crs_origin {origin} differs from workspace frame "
                f"({frame.lat0}, {frame.lon0})")
        kind = payload.get("kind")
        objects = []
        for i, entry in enumerate(payload.get("objects", [])):
            geo = np.asarray(entry["coordinates"], dtype=np.float64).reshape(-1, 3)
            local = frame.project_points(geo)
            objects.append(PhysicalObject(
                object_id=str(entry["object_id"]),
                coordinates=local,
                indices=entry.get("indices"),
                rings=entry.get("rings"),
                attributes=entry.get("attributes", {}),
            ))
        return PhysicalLayer(
            name=doc["name"],
            kind=kind,
            objects=objects,
            crs_origin=origin,
            content_hash=content_hash,
        )

    raise LayerFormatError(f"{path}: unknown layer type {doc['type']!r}")


# ---------------------------------------------------------------------------
# workspace


@dataclass
class CatalogEntry:
    name: str
    path: str
    layer_type: str       # "physical" | "thematic"
    kind: str | None      # physical kinds only
    content_hash: str


class Workspace:
    """A directory of .utk layers sharing one local frame.

    Layer names are workspace-relative paths without the .utk suffix.  The
    frame is adopted from the first physical layer loaded; later loads with a
    different crs_origin fail.
    """

    def __init__(self, root: str):
        self.root = os.path.abspath(root)
        self.frame: LocalFrame | None = None
        self._loaded: dict[str, tuple[float, Layer]] = {}
        self._catalog: dict[str, CatalogEntry] | None = None

    def path_of(self, name: str) -> str:
        rel = name + LAYER_SUFFIX
        path = os.path.abspath(os.path.join(self.root, rel))
        if not path.startswith(self.root + os.sep):
            raise LayerError(f"layer name {name!r} escapes the workspace")
        return path

    def catalog(self, refresh: bool = False) -> dict[str, CatalogEntry]:
        if self._catalog is not None and not refresh:
            return self._catalog
        entries: dict[str, CatalogEntry] = {}
        for dirpath, dirnames, filenames in os.walk(self.root):
            dirnames[:] = [d for d in dirnames if not d.startswith(".")]
            for fn in sorted(filenames):
                if not fn.endswith(LAYER_SUFFIX):
                    continue
                path = os.path.join(dirpath, fn)
                rel = os.path.relpath(path, self.root)
                name = rel[: -len(LAYER_SUFFIX)].replace(os.sep, "/")
                try:
                    with open(path, "rb") as fh:
                        raw = fh.read()
                    doc = json.loads(raw.decode("utf-8"))
                    entries[name] = CatalogEntry(
                        name=name,
                        path=path,
                        layer_type=doc.get("type", "?"),
                        kind=(doc.get("payload") or {}).get("kind"),
                        content_hash=hashlib.sha256(raw).hexdigest(),
                    )
                except (OSError, ValueError):
                    continue  # non-container .utk files are invisible
        self._catalog = entries
        return entries

    def invalidate(self):
        self._catalog = None
        self._loaded.clear()

    def load(self, name: str) -> Layer:
        path = self.path_of(name)
        try:
            mtime = os.stat(path).st_mtime
        except OSError as exc:
            raise LayerError(f"unknown layer {name!r}: {exc}") from exc
        cached = self._loaded.get(name)
        if cached and cached[0] == mtime:
            return cached[1]
        layer = load_layer(path, frame=self.frame)
        if isinstance(layer, PhysicalLayer) and self.frame is None:
            self.frame = LocalFrame(*layer.crs_origin)
        self._loaded[name] = (mtime, layer)
        if self._catalog is not None and name not in self._catalog:
            self._catalog = None
        return layer

    def save(self, layer: Layer, name: str | None = None) -> str:
        name = name or layer.name
        digest = save_layer(layer, self.path_of(name))
        self._loaded.pop(name, None)
        self._catalog = None
        return digest

    def require_frame(self) -> LocalFrame:
        if self.frame is None:
            # Adopt the frame from any physical layer in the catalog.
            for entry in self.catalog().values():
                if entry.layer_type == "physical":
                    self.load(entry.name)
                    break
        if self.frame is None:
            raise LayerError("workspace has no physical layer to anchor a frame")
        return self.frame

    @property
    def cache_dir(self) -> str:
        return os.path.join(self.root, ".cache", "joins")


# ---------------------------------------------------------------------------
# join cache


def in_level_digest(content_hash: str, level: str) -> str:
    """Right-side cache hash: folds the element level into the layer digest
    so coordinate-level and object-level joins can never collide."""
    return hashlib.sha256(f"{content_hash}:{level}".encode("utf-8")).hexdigest()


@dataclass
class JoinMap:
    """For each left (out) element, the ascending right (in) indices matched.

    The mapping is total over left: unmatched elements carry empty lists.
    """

    left_hash: str
    right_hash: str
    relation: str
    out_level: str
    entries: list

    def key_digest(self) -> str:
        key = f"{self.left_hash}:{self.right_hash}:{self.relation}:{self.out_level}"
        return hashlib.sha256(key.encode("utf-8")).hexdigest()


def join_cache_lookup(cache_dir: str, left_hash: str, right_hash: str,
                      relation: str, out_level: str) -> JoinMap | None:
    probe = JoinMap(left_hash, right_hash, relation, out_level, [])
    path = os.path.join(cache_dir, probe.key_digest() + ".json")
    try:
        with open(path, "rb") as fh:
            doc = json.loads(fh.read().decode("utf-8"))
    except OSError:
        return None
    except ValueError:
        return None  # corrupt entry: treat as a miss, recompute overwrites it
    if (doc.get("left_hash"), doc.get("right_hash"), doc.get("relation"),
            doc.get("out_level")) != (left_hash, right_hash, relation, out_level):
        return None
    return JoinMap(left_hash, right_hash, relation, out_level,
                   [list(map(int, e)) for e in doc["entries"]])


def join_cache_store(cache_dir: str, jm: JoinMap) -> str:
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, jm.key_digest() + ".json")
    doc = {
        "left_hash": jm.left_hash,
        "right_hash": jm.right_hash,
        "relation": jm.relation,
        "out_level": jm.out_level,
        "entries": jm.entries,
    }
    tmp = path + f".tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(_dump_canonical(doc))
    os.replace(tmp, path)  # atomic: concurrent writers race benignly
    return path
