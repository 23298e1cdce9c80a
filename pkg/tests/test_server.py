"""HTTP service: spec lifecycle, incremental PUT, and byte-identical reads."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from cityknot.engine import (
    canonical_bytes,
    evaluate_spec,
    knot_payload,
    layer_geometry_doc,
    scene_bundle_bytes,
)
from cityknot.geometry import LocalFrame
from cityknot.grammar import parse_spec
from cityknot.layers import (
    PhysicalLayer,
    PhysicalObject,
    ThematicLayer,
    Workspace,
)
from cityknot.server import create_app

ORIGIN = (40.7128, -74.0060)
FRAME = LocalFrame(*ORIGIN)


def local_thematic(name, xyz, values):
    pts = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    geo = FRAME.unproject_points(pts) if len(pts) else np.zeros((0, 3))
    return ThematicLayer(name=name, points=geo, values=list(values),
                         crs_origin=ORIGIN)


def rect_layer(name, rects):
    objs = []
    for i, (x0, y0, x1, y1) in enumerate(rects):
        ring = np.array([[x0, y0, 0.0], [x1, y0, 0.0],
                         [x1, y1, 0.0], [x0, y1, 0.0]])
        objs.append(PhysicalObject(f"{name}/{i}", ring, rings=[[0, 1, 2, 3]]))
    return PhysicalLayer(name=name, kind="polygons2d", objects=objs,
                         crs_origin=ORIGIN)


def make_workspace(tmp_path):
    rng = np.random.default_rng(71)
    n = 40
    pts = np.column_stack([rng.uniform(0, 100, n), rng.uniform(0, 100, n),
                           np.zeros(n)])
    ws = Workspace(str(tmp_path / "ws"))
    ws.save(local_thematic("noise", pts,
                           [float(v) for v in rng.uniform(0, 10, n)]))
    ws.save(rect_layer("cells", [(i * 20.0, 0.0, i * 20.0 + 20.0, 100.0)
                                 for i in range(5)]))
    ws.invalidate()
    return ws


def spec_doc(agg="sum", camera_pos=(0.0, 0.0, 100.0)):
    return {
        "grammar_version": "1.0",
        "cameras": [{"id": "main", "position": list(camera_pos),
                     "direction": [0.0, 0.0, -1.0]}],
        "knots": [
            {"name": "base", "integration_scheme": [
                {"in": "noise", "out": "cells",
                 "spatial_relation": "contains", "out_level": "objects",
                 "operation": agg}]},
            {"name": "doubled", "inputs": ["base"],
             "operation": "base * 2"},
        ],
        "views": [{
            "map": {"camera": "main",
                    "knots": [{"knot": "doubled", "interaction": "pick"}]},
            "plots": [{
                "chart": {"mark": "bar"},
                "knots": [{"knot": "doubled", "arrangement": "linked"}],
                "interaction": "pick",
            }],
        }],
    }


@pytest.fixture
def client(tmp_path):
    ws = make_workspace(tmp_path)
    app = create_app(ws)
    with TestClient(app) as c:
        c.workspace = ws
        yield c


def put_spec(client, doc, revision=None):
    body = doc if revision is None else {"spec": doc, "revision": revision}
    return client.put("/api/spec", json=body)


class TestSpecLifecycle:
    def test_reads_404_before_first_spec(self, client):
        assert client.get("/api/spec").status_code == 404
        assert client.get("/api/knots").status_code == 404
        assert client.get("/api/knots/base/data").status_code == 404
        assert client.get("/api/plots/0/data").status_code == 404
        assert client.get("/api/scene").status_code == 404
        # layer geometry needs no spec, only the workspace
        assert client.get("/api/layers/cells/geometry").status_code == 200

    def test_first_put_evaluates_everything(self, client):
        resp = put_spec(client, spec_doc())
        assert resp.status_code == 200
        body = resp.json()
        assert body["revision"] == 1
        assert body["status"] == "ready"
        assert body["reevaluated"] == ["base", "doubled"]

        spec = client.get("/api/spec").json()
        assert spec["revision"] == 1
        assert [k["name"] for k in spec["spec"]["knots"]] == \
            ["base", "doubled"]

    def test_camera_only_put_reevaluates_nothing(self, client):
        put_spec(client, spec_doc())
        resp = put_spec(client, spec_doc(camera_pos=(5.0, 5.0, 40.0)))
        assert resp.status_code == 200
        body = resp.json()
        assert body["reevaluated"] == []
        assert body["revision"] == 2

    def test_aggregation_edit_reevaluates_dependents(self, client):
        put_spec(client, spec_doc("sum"))
        resp = put_spec(client, spec_doc("mean"))
        assert resp.json()["reevaluated"] == ["base", "doubled"]

    def test_parse_error_keeps_previous_spec(self, client):
        put_spec(client, spec_doc())
        before = client.get("/api/knots/base/data").content

        bad = spec_doc()
        bad["knots"][0]["integration_scheme"][0]["spatial_relation"] = "near"
        resp = put_spec(client, bad)
        assert resp.status_code == 422
        diags = resp.json()["diagnostics"]
        assert diags and all(d["severity"] == "error" for d in diags)
        assert any("spatial_relation" in d["path"] for d in diags)

        assert client.get("/api/spec").json()["revision"] == 1
        assert client.get("/api/knots/base/data").content == before

    def test_validation_error_keeps_previous_spec(self, client):
        put_spec(client, spec_doc())
        bad = spec_doc()
        bad["views"][0]["map"]["knots"][0]["knot"] = "ghost"
        resp = put_spec(client, bad)
        assert resp.status_code == 422
        assert any("ghost" in d["message"]
                   for d in resp.json()["diagnostics"])
        assert client.get("/api/spec").json()["revision"] == 1

    def test_unknown_layer_is_rejected_at_validation(self, client):
        bad = spec_doc()
        bad["knots"][0]["integration_scheme"][0]["in"] = "ghost"
        resp = put_spec(client, bad)
        assert resp.status_code == 422
        assert client.get("/api/spec").status_code == 404

    def test_non_json_body(self, client):
        resp = client.put("/api/spec", content=b"not json",
                          headers={"Content-Type": "application/json"})
        assert resp.status_code == 422

    def test_stale_revision_conflicts(self, client):
        put_spec(client, spec_doc())
        # writer A read revision 1, writer B commits first
        assert put_spec(client, spec_doc("mean"), revision=1).status_code \
            == 200
        resp = put_spec(client, spec_doc("min"), revision=1)
        assert resp.status_code == 409
        assert resp.json()["revision"] == 2
        # the winner's spec is still served
        spec = client.get("/api/spec").json()["spec"]
        assert spec["knots"][0]["integration_scheme"][0]["operation"] == \
            "mean"

    def test_put_without_revision_always_wins(self, client):
        put_spec(client, spec_doc())
        assert put_spec(client, spec_doc("mean")).status_code == 200
        assert client.get("/api/spec").json()["revision"] == 2


class TestDataEndpoints:
    def test_knot_listing(self, client):
        put_spec(client, spec_doc())
        body = client.get("/api/knots").json()
        assert [k["name"] for k in body["knots"]] == ["base", "doubled"]
        assert body["knots"][0]["physical_layer"] == "cells"
        assert body["knots"][0]["level"] == "objects"
        assert len(body["knots"][0]["hash"]) == 64

    def test_knot_data_matches_direct_export(self, client):
        put_spec(client, spec_doc())
        ws = client.workspace
        ev = evaluate_spec(parse_spec(spec_doc()), ws)
        for name in ("base", "doubled"):
            resp = client.get(f"/api/knots/{name}/data")
            assert resp.status_code == 200
            assert resp.headers["content-type"] == "application/json"
            assert resp.content == knot_payload(ev, ws, name)

    def test_knot_data_level_and_csv(self, client):
        put_spec(client, spec_doc())
        ws = client.workspace
        ev = evaluate_spec(parse_spec(spec_doc()), ws)
        resp = client.get("/api/knots/base/data?level=coordinates")
        assert resp.content == knot_payload(ev, ws, "base",
                                            level="coordinates")
        resp = client.get("/api/knots/base/data?format=csv")
        assert resp.status_code == 200
        assert resp.headers["content-type"].startswith("text/csv")
        assert resp.content == knot_payload(ev, ws, "base", fmt="csv")

    def test_knot_data_rejects_bad_requests(self, client):
        put_spec(client, spec_doc())
        assert client.get("/api/knots/ghost/data").status_code == 404
        assert client.get(
            "/api/knots/base/data?format=parquet").status_code == 422
        assert client.get(
            "/api/knots/base/data?level=voxels").status_code == 422

    def test_layer_geometry_bytes(self, client):
        ws = client.workspace
        resp = client.get("/api/layers/cells/geometry")
        assert resp.content == canonical_bytes(layer_geometry_doc(ws, "cells"))
        assert client.get("/api/layers/ghost/geometry").status_code == 404

    def test_plot_data(self, client):
        put_spec(client, spec_doc())
        resp = client.get("/api/plots/0/data")
        assert resp.status_code == 200
        doc = json.loads(resp.content)
        assert doc["chart"] == {"mark": "bar"}
        assert len(doc["data"]["doubled"]["rows"]) == 5
        assert client.get("/api/plots/5/data").status_code == 404

    def test_scene_bundle_bytes(self, client):
        put_spec(client, spec_doc())
        ws = client.workspace
        ev = evaluate_spec(parse_spec(spec_doc()), ws)
        resp = client.get("/api/scene")
        assert resp.status_code == 200
        assert resp.content == scene_bundle_bytes(ev, ws)

    def test_reads_follow_the_accepted_put(self, client):
        put_spec(client, spec_doc("sum"))
        put_spec(client, spec_doc("mean"))
        ws = client.workspace
        ev = evaluate_spec(parse_spec(spec_doc("mean")), ws)
        assert client.get("/api/knots/base/data").content == \
            knot_payload(ev, ws, "base")


class TestInitialSpec:
    def test_create_app_with_spec(self, tmp_path):
        ws = make_workspace(tmp_path)
        app = create_app(ws, initial_spec=parse_spec(spec_doc()))
        with TestClient(app) as client:
            body = client.get("/api/spec").json()
            assert body["revision"] == 1
            assert client.get("/api/knots/base/data").status_code == 200
