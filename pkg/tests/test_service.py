import json

import pytest
from fastapi.testclient import TestClient

from repomem.service import create_app

from conftest import CLAMP_INSTRUCTIONS, CHECKS_PY, clamp_script, write_repo


@pytest.fixture
def client():
    return TestClient(create_app())


def write_script(tmp_path, entries, name="script.json"):
    path = tmp_path / name
    path.write_text(json.dumps(entries), encoding="utf-8")
    return str(path)


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


def test_index_endpoint(client, tiny_repo):
    response = client.post("/index", json={"root": str(tiny_repo)})
    assert response.status_code == 200
    body = response.json()
    assert [b["namespace"] for b in body["blocks"]] == ["helpers.scale", "helpers.shift", "lib.Formatter"]
    assert body["blocks"][2]["kind"] == "class"
    assert "class_methods" in body["blocks"][2]["key"]


def test_index_bad_root(client):
    response = client.post("/index", json={"root": "/definitely/missing"})
    assert response.status_code == 400


def test_session_lifecycle_and_rounds(client, clamp_repo, tmp_path):
    script = write_script(tmp_path, clamp_script(ablate_detector=False))
    created = client.post(
        "/sessions",
        json={
            "repo_root": str(clamp_repo),
            "target": "widget.clamp",
            "config": {"mock_script": script},
        },
    )
    assert created.status_code == 200
    session_id = created.json()["session_id"]

    first = client.post(f"/sessions/{session_id}/rounds", json={"instruction": CLAMP_INSTRUCTIONS[0]})
    assert first.status_code == 200
    body = first.json()
    assert body["round"] == 1
    assert body["decision"]["mode"] == "ADD"
    assert body["final_code"].startswith("def clamp")

    for instruction in CLAMP_INSTRUCTIONS[1:3]:
        response = client.post(f"/sessions/{session_id}/rounds", json={"instruction": instruction})
        assert response.status_code == 200
    round3 = response.json()
    assert round3["conflicts"] and round3["conflicts"][0]["block_id"] == 1
    assert "raise ValueError" in round3["final_code"]

    info = client.get(f"/sessions/{session_id}")
    assert info.json()["round"] == 3
    assert info.json()["sequences"] == {"widget.clamp": 3}

    closed = client.delete(f"/sessions/{session_id}")
    assert closed.status_code == 200
    assert client.get(f"/sessions/{session_id}").status_code == 404


def test_round_on_unknown_session(client):
    response = client.post("/sessions/nope/rounds", json={"instruction": "x"})
    assert response.status_code == 404


def test_script_exhaustion_maps_to_409(client, clamp_repo, tmp_path):
    script = write_script(tmp_path, [])
    created = client.post(
        "/sessions",
        json={"repo_root": str(clamp_repo), "target": "widget.clamp", "config": {"mock_script": script}},
    )
    session_id = created.json()["session_id"]
    response = client.post(f"/sessions/{session_id}/rounds", json={"instruction": "x"})
    assert response.status_code == 409


def test_save_and_load_endpoints(client, clamp_repo, tmp_path):
    script = write_script(tmp_path, clamp_script(False))
    created = client.post(
        "/sessions",
        json={"repo_root": str(clamp_repo), "target": "widget.clamp", "config": {"mock_script": script}},
    )
    session_id = created.json()["session_id"]
    client.post(f"/sessions/{session_id}/rounds", json={"instruction": CLAMP_INSTRUCTIONS[0]})

    store_path = str(tmp_path / "snap.json")
    saved = client.post(f"/sessions/{session_id}/save", json={"path": store_path})
    assert saved.status_code == 200

    loaded = client.post("/sessions/load", json={"path": store_path})
    assert loaded.status_code == 200
    assert loaded.json()["round"] == 1
    assert loaded.json()["sequences"] == {"widget.clamp": 1}

    inspected = client.get("/stores/inspect", params={"path": store_path})
    assert inspected.status_code == 200
    assert "widget.clamp" in inspected.json()["text"]


def test_replay_and_eval_endpoints(client, tmp_path):
    repo = write_repo(
        tmp_path / "bench" / "proj",
        {
            "widget.py": "def clamp(value, limit):\n    return value\n",
            "checks.py": CHECKS_PY,
        },
    )
    record = {
        "namespace": "widget.clamp",
        "project_path": "proj",
        "completion_path": "proj/widget.py",
        "prompt": "Implement clamp.",
        "requirement": {
            "Input-Output Conditions": {
                "requirement": "Implement clamp returning value bounded above by limit.",
                "test": "t1_min",
            },
            "Exception Handling": {
                "requirement": "Add a guard: raise ValueError when limit is negative.",
                "test": "t2_guard",
            },
        },
    }
    data = tmp_path / "bench.jsonl"
    data.write_text(json.dumps(record) + "\n", encoding="utf-8")

    import sys

    script = write_script(tmp_path, clamp_script(False)[:3])
    out = tmp_path / "out"
    response = client.post(
        "/replay",
        json={
            "bench": "codeif",
            "data": str(data),
            "out": str(out),
            "repo_base": str(tmp_path / "bench"),
            "config": {
                "mock_script": script,
                "runner_template": f"{sys.executable} checks.py {{test}}",
            },
        },
    )
    assert response.status_code == 200, response.text
    report = response.json()["report"]
    assert report["n_transcripts"] == 1
    assert report["turns"][0]["ia"] == 1.0
    assert report["turns"][1]["ia"] == 1.0
    assert (out / "widget.clamp.json").exists()
    assert (out / "report.json").exists()
    # the scratch copy was patched, not the source repository
    assert "raise ValueError" not in (repo / "widget.py").read_text()

    evaluated = client.post("/eval", json={"transcripts": str(out)})
    assert evaluated.status_code == 200
    assert evaluated.json()["report"]["turns"][0]["ia"] == 1.0
    assert evaluated.json()["table"] == response.json()["table"]


def test_replay_rejects_unknown_bench(client, tmp_path):
    data = tmp_path / "x.jsonl"
    data.write_text("{}\n")
    response = client.post(
        "/replay", json={"bench": "nope", "data": str(data), "out": str(tmp_path / "o")}
    )
    assert response.status_code == 422


def test_eval_missing_dir(client):
    assert client.post("/eval", json={"transcripts": "/missing/dir"}).status_code == 404
