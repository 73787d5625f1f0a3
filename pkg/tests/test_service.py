"""HTTP service tests: job lifecycle, trace endpoints, CLI parity."""

import json
import time

import pytest
from fastapi.testclient import TestClient

from webnav.cli import main as cli_main
from webnav.service import create_app

from test_ltlr import TWO_PAGE

PATTERN = "B(?, _, ?, _, _, _, _, _, _)"


@pytest.fixture
def client(tmp_path):
    app = create_app(tmp_path / "store")
    with TestClient(app) as c:
        yield c


def wait_done(client, job_id, timeout=30.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        body = client.get(f"/api/check/{job_id}").json()
        if body["status"] != "running":
            return body
        time.sleep(0.02)
    raise AssertionError("job did not finish in time")


def submit_refuted(client):
    r = client.post("/api/check", json={
        "spec_source": TWO_PAGE, "property": "[] ~ curPage(b1, Away)"})
    assert r.status_code == 200
    job = wait_done(client, r.json()["job_id"])
    assert job["status"] == "done"
    assert job["verdict"]["outcome"] == "refuted"
    return job["verdict"]


def test_check_job_lifecycle(client):
    verdict = submit_refuted(client)
    assert verdict["schema"] == "webnav-verdict/1"
    assert verdict["trace_id"]


def test_fulfilled_check(client):
    r = client.post("/api/check", json={
        "spec_source": TWO_PAGE, "property": "[] ~ curPage(b1, Nowhere)"})
    job = wait_done(client, r.json()["job_id"])
    assert job["verdict"]["outcome"] == "fulfilled"
    assert "trace_id" not in job["verdict"]


def test_identical_submissions_share_a_job(client):
    req = {"spec_source": TWO_PAGE, "property": "[] ~ curPage(b1, Away)"}
    a = client.post("/api/check", json=req).json()["job_id"]
    b = client.post("/api/check", json=req).json()["job_id"]
    assert a == b


def test_parse_error_reported_as_job_error(client):
    r = client.post("/api/check", json={
        "spec_source": TWO_PAGE, "property": "[] nosuch(b1)"})
    job = wait_done(client, r.json()["job_id"])
    assert job["status"] == "error"
    assert job["error"]["code"] == "parse-error"


def test_unknown_job_and_trace_are_404(client):
    assert client.get("/api/check/nope").status_code == 404
    r = client.get("/api/trace/nope")
    assert r.status_code == 404
    assert r.json()["error"]["code"] == "not-found"


def test_trace_metadata_and_states(client):
    tid = submit_refuted(client)["trace_id"]
    meta = client.get(f"/api/trace/{tid}").json()
    assert meta["states"] > 1
    assert meta["index_entry"]["verdict"] == "refuted"
    s0 = client.get(f"/api/trace/{tid}/state/0").json()
    assert s0["rendered"].startswith("state(")
    assert s0["tree"]["op"] == "state"
    assert s0["tree"]["children"], "tree view must expose subterms"
    out = client.get(f"/api/trace/{tid}/state/{meta['states']}")
    assert out.status_code == 404


def test_slice_endpoint_and_caching(client):
    tid = submit_refuted(client)["trace_id"]
    req = {"pattern": PATTERN}
    a = client.post(f"/api/trace/{tid}/slice", json=req)
    assert a.status_code == 200
    doc = a.json()
    assert doc["schema"] == "webnav-slice/1"
    assert doc["trace_id"] == tid
    assert doc["metrics"]["ratio"] < 1.0
    b = client.post(f"/api/trace/{tid}/slice", json=req)
    assert b.json() == doc
    bad = client.post(f"/api/trace/{tid}/slice",
                      json={"pattern": PATTERN, "state_index": 9999})
    assert bad.status_code == 400


def test_graph_endpoints(client):
    r = client.post("/api/graph", json={"spec_source": TWO_PAGE})
    assert r.status_code == 200
    doc = r.json()
    assert {n["name"] for n in doc["nodes"]} == {"Home", "Away"}
    tid = submit_refuted(client)["trace_id"]
    via_trace = client.get(f"/api/trace/{tid}/graph").json()
    assert via_trace == doc
    bad = client.post("/api/graph", json={"spec_source": "page {"})
    assert bad.status_code == 400


def test_traces_listing(client):
    tid = submit_refuted(client)["trace_id"]
    listing = client.get("/api/traces").json()["traces"]
    assert any(e["trace_id"] == tid for e in listing)


def test_schema_endpoint(client):
    r = client.get("/api/schemas/trace-1.json")
    assert r.status_code == 200
    assert r.json()["$id"] == "webnav-trace/1"
    assert client.get("/api/schemas/nope.json").status_code == 404


def test_cli_and_api_agree_on_slice_metrics(tmp_path, capsys, client):
    """The same slicing request through the HTTP API and the CLI must
    produce identical metrics."""
    tid = submit_refuted(client)["trace_id"]
    api_doc = client.post(f"/api/trace/{tid}/slice",
                          json={"pattern": PATTERN}).json()

    # name the file so the embedded model name matches the service's choice
    spec = tmp_path / "model.nav"
    spec.write_text(TWO_PAGE)
    code = cli_main(["check", str(spec), "--prop", "[] ~ curPage(b1, Away)",
                     "--store", str(tmp_path / "cs"), "--format", "json"])
    assert code == 1
    vdoc = json.loads(capsys.readouterr().out)
    assert vdoc["trace_id"] == tid
    code = cli_main(["slice", vdoc["trace_file"], "--pattern", PATTERN,
                     "--format", "json"])
    assert code == 0
    cli_doc = json.loads(capsys.readouterr().out)
    assert cli_doc["metrics"] == api_doc["metrics"]
    assert cli_doc["per_state"] == api_doc["per_state"]
