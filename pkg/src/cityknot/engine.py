"""Spec-level evaluation: dependency hashing, incremental re-evaluation,
and the export payloads shared by the CLI and the HTTP service.

Every byte-producing export goes through canonical_bytes so the CLI file
outputs and the HTTP responses come from one code path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .grammar import KnotDef, Specification, spec_to_json
from .knots import (
    EvaluatedKnot,
    KnotEvalError,
    PlotTable,
    evaluate_knot,
    footprint_slice,
    plot_table,
)
from .layers import ColorScale, PhysicalLayer, ThematicLayer, Workspace

BUNDLE_VERSION = "1.0"


# ---------------------------------------------------------------------------
# dependency hashing


def _knot_refs(knot: KnotDef) -> list:
    """Names a knot reads, in definition order, deduplicated."""
    refs: list = []
    if knot.is_operation:
        refs.extend(knot.inputs)
    for s in knot.schemes:
        refs.append(s.in_ref)
        refs.append(s.out_ref)
    seen = set()
    out = []
    for r in refs:
        if r not in seen:
            seen.add(r)
            out.append(r)
    return out


def definition_hashes(spec: Specification, workspace: Workspace) -> dict:
    """Digest per knot over its own document, the content of every layer it
    references, and the digests of the knots it references (transitively,
    since those digests fold in their own inputs).

    Cameras and views never participate: editing them cannot change values.
    A reference that is neither a declared knot nor a catalog layer hashes
    as absent, so adding the missing layer later changes the digest.
    """
    catalog = workspace.catalog()
    docs = spec_to_json(spec)["knots"]
    hashes: dict[str, str] = {}
    for i, knot in enumerate(spec.knots):
        parts = [json.dumps(docs[i], sort_keys=True, separators=(",", ":"))]
        for ref in _knot_refs(knot):
            if ref == knot.name:
                continue
            known = False
            if ref in hashes:
                parts.append(f"knot:{ref}:{hashes[ref]}")
                known = True
            if ref in catalog:
                parts.append(f"layer:{ref}:{catalog[ref].content_hash}")
                known = True
            if not known:
                parts.append(f"absent:{ref}")
        digest = hashlib.sha256("\n".join(parts).encode("utf-8")).hexdigest()
        hashes[knot.name] = digest
    return hashes


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class Evaluation:
    """All knots of one spec evaluated against one workspace."""

    spec: Specification
    hashes: dict       # knot name -> definition digest
    knots: dict        # knot name -> EvaluatedKnot, document order
    reevaluated: tuple  # names computed this round (the rest were reused)
    warnings: tuple    # "knot: element i: ..." texts from evaluation


def evaluate_spec(spec: Specification, workspace: Workspace,
                  previous: Evaluation | None = None, use_cache: bool = True,
                  geocoder=None) -> Evaluation:
    """Evaluate every knot in document order.

    With a previous Evaluation, knots whose definition digest is unchanged
    are reused as-is; a digest match guarantees the knot document, every
    referenced layer's content, and every transitive input are identical.
    """
    hashes = definition_hashes(spec, workspace)
    prev_hashes = previous.hashes if previous is not None else {}
    prev_knots = previous.knots if previous is not None else {}
    resolved: dict[str, EvaluatedKnot] = {}
    warnings: list = []
    reevaluated: list = []
    for knot in spec.knots:
        name = knot.name
        if name in prev_knots and prev_hashes.get(name) == hashes[name]:
            resolved[name] = prev_knots[name]
            continue

        def warn(message, _name=name):
            warnings.append(f"{_name}: {message}")

        resolved[name] = evaluate_knot(knot, workspace, resolved=resolved,
                                       warn=warn, use_cache=use_cache,
                                       geocoder=geocoder)
        reevaluated.append(name)
    return Evaluation(spec=spec, hashes=hashes, knots=resolved,
                      reevaluated=tuple(reevaluated),
                      warnings=tuple(warnings))


# ---------------------------------------------------------------------------
# export payloads


def canonical_bytes(doc) -> bytes:
    """Deterministic UTF-8 JSON: sorted keys, no whitespace, one newline."""
    return (json.dumps(doc, ensure_ascii=False, sort_keys=True,
                       separators=(",", ":")) + "\n").encode("utf-8")


def knot_table(evaluation: Evaluation, workspace: Workspace, name: str,
               level: str | None = None) -> PlotTable:
    knot = evaluation.knots[name]
    layer = workspace.load(knot.physical_layer)
    return plot_table(knot, layer, level=level)


def knot_payload(evaluation: Evaluation, workspace: Workspace, name: str,
                 level: str | None = None, fmt: str = "json") -> bytes:
    """The export for one knot at one level, as bytes.

    json: {"bundle_version", "knot", "physical_layer", "level", "rows"}
    csv:  element_id, object_id, value
    """
    table = knot_table(evaluation, workspace, name, level=level)
    if fmt == "csv":
        return table.to_csv().encode("utf-8")
    if fmt != "json":
        raise ValueError(f"unknown format {fmt!r}")
    doc = {
        "bundle_version": BUNDLE_VERSION,
        "knot": name,
        "physical_layer": evaluation.knots[name].physical_layer,
        "level": table.level,
        "rows": list(table.rows),
    }
    return canonical_bytes(doc)


def layer_geometry_doc(workspace: Workspace, name: str) -> dict:
    """Projected geometry for one layer, self-contained for rendering.

    Physical layers carry the stacked coordinate array plus per-object
    [start, end) ranges, triangle indices, and footprint rings (both in
    object-local vertex numbering).  Thematic layers carry projected points.
    """
    layer = workspace.load(name)
    frame = workspace.require_frame()
    if isinstance(layer, ThematicLayer):
        pts = layer.projected(frame)
        return {
            "bundle_version": BUNDLE_VERSION,
            "layer": name,
            "type": "thematic",
            "crs_origin": [frame.lat0, frame.lon0],
            "points": [[float(x), float(y), float(z)] for x, y, z in pts],
        }
    objects = []
    offsets = layer.offsets
    for i, obj in enumerate(layer.objects):
        entry = {
            "id": obj.object_id,
            "start": int(offsets[i]),
            "end": int(offsets[i + 1]),
        }
        if obj.indices is not None:
            entry["indices"] = obj.indices.tolist()
        if obj.rings:
            entry["rings"] = [[int(v) for v in ring] for ring in obj.rings]
        objects.append(entry)
    return {
        "bundle_version": BUNDLE_VERSION,
        "layer": name,
        "type": "physical",
        "kind": layer.kind,
        "crs_origin": list(layer.crs_origin),
        "coordinates": [[float(x), float(y), float(z)]
                        for x, y, z in layer.all_coordinates()],
        "objects": objects,
    }


def color_scale_doc(values) -> dict:
    """Value-to-color mapping resolved from the data: categorical for text,
    a min/max sequential domain otherwise (unit domain when all-null)."""
    defaults = ColorScale()
    usable = [v for v in values if v is not None]
    texts = sorted({v for v in usable if isinstance(v, str)})
    if texts:
        return {"scheme": "categorical", "domain": texts,
                "no_data_color": defaults.no_data_color}
    if not usable:
        return {"scheme": defaults.scheme, "domain": [0.0, 1.0],
                "no_data_color": defaults.no_data_color}
    return {"scheme": defaults.scheme,
            "domain": [float(min(usable)), float(max(usable))],
            "no_data_color": defaults.no_data_color}


def plot_list(spec: Specification) -> list:
    """Global plot order: (view_index, plot_index, PlotDef), document order.

    The global position is the index the data endpoint addresses."""
    out = []
    for vi, view in enumerate(spec.views):
        for pi, plot in enumerate(view.plots):
            out.append((vi, pi, plot))
    return out


def plot_data_doc(evaluation: Evaluation, workspace: Workspace,
                  index: int) -> dict:
    """The table(s) behind one plot: per bound knot, rows at the knot's own
    level for linked/surface arrangements, radial sectors for
    embedded_footprint (driven by the plot's args)."""
    plots = plot_list(evaluation.spec)
    if not 0 <= index < len(plots):
        raise IndexError(f"no plot at index {index}")
    vi, pi, plot = plots[index]
    data = {}
    for binding in plot.bindings:
        knot = evaluation.knots[binding.knot_id]
        layer = workspace.load(knot.physical_layer)
        if binding.arrangement == "embedded_footprint":
            args = plot.args
            try:
                object_id = args["object_id"]
                slice_height = float(args["slice_height"])
            except KeyError as exc:
                raise KnotEvalError(
                    "embedded_footprint plot args need object_id and "
                    f"slice_height (missing {exc})") from exc
            table = footprint_slice(
                knot, layer, object_id=object_id, slice_height=slice_height,
                band_width=float(args.get("band_width", 1.0)),
                n_segments=int(args.get("n_segments", 16)))
        else:
            table = plot_table(knot, layer)
        entry = {
            "arrangement": binding.arrangement,
            "level": table.level,
            "rows": list(table.rows),
        }
        if table.annotations:
            entry["annotations"] = table.annotations
        data[binding.knot_id] = entry
    return {
        "bundle_version": BUNDLE_VERSION,
        "plot": index,
        "view": vi,
        "chart": plot.chart_spec,
        "interaction": plot.interaction,
        "args": plot.args,
        "data": data,
    }


def scene_bundle_doc(evaluation: Evaluation, workspace: Workspace) -> dict:
    """Everything a renderer needs with no workspace access: the canonical
    spec, geometry for every knot's physical layer, per-knot values with a
    color scale, and every plot's tables."""
    knots_doc = {}
    layer_names = []
    for name, knot in evaluation.knots.items():
        if knot.physical_layer not in layer_names:
            layer_names.append(knot.physical_layer)
        knots_doc[name] = {
            "physical_layer": knot.physical_layer,
            "level": knot.level,
            "coordinates": list(knot.coord_values),
            "objects": (list(knot.object_values)
                        if knot.object_values is not None else None),
            "color_scale": color_scale_doc(knot.coord_values),
        }
    return {
        "bundle_version": BUNDLE_VERSION,
        "spec": spec_to_json(evaluation.spec),
        "layers": {name: layer_geometry_doc(workspace, name)
                   for name in layer_names},
        "knots": knots_doc,
        "plots": [plot_data_doc(evaluation, workspace, i)
                  for i in range(len(plot_list(evaluation.spec)))],
        "reevaluated": list(evaluation.reevaluated),
        "warnings": list(evaluation.warnings),
    }


def scene_bundle_bytes(evaluation: Evaluation,
                       workspace: Workspace) -> bytes:
    return canonical_bytes(scene_bundle_doc(evaluation, workspace))
