"""Protocol conformance: the contract the embedding clients rely on.

Includes one live end-to-end run: the service in a real uvicorn process,
driven through the primary toolkit's CLI (its only interface to us).
"""

import json
import os
import shutil
import socket
import subprocess
import sys
import time

import numpy as np
import pytest
import requests


def _trajectory_strings(n=20):
    out = []
    for i in range(n):
        lon = 116.30 + i * 0.00341
        lat = 39.90 + i * 0.00173
        out.append(
            f"Trajectory: ({lon:.5f}, {lat:.5f}), "
            f"({lon + 0.001:.5f}, {lat - 0.002:.5f}), "
            f"({lon + 0.004:.5f}, {lat + 0.003:.5f})"
        )
    return out


def test_server_mean_equals_client_side_pooling(loaded_client):
    texts = _trajectory_strings(20)
    pooled = loaded_client.post("/v1/embed", json={
        "texts": texts[:8], "pooling": "mean", "layer": "last",
    }).json()
    raw = loaded_client.post("/v1/embed", json={
        "texts": texts[:8], "pooling": "none", "layer": "last",
    }).json()
    for server_vec, tokens in zip(pooled["embeddings"], raw["embeddings"]):
        client_vec = np.mean(np.asarray(tokens, dtype=float), axis=0)
        assert np.allclose(server_vec, client_vec, atol=1e-5)
    # remaining strings, second batch
    pooled = loaded_client.post("/v1/embed", json={
        "texts": texts[8:16], "pooling": "mean", "layer": "last",
    }).json()
    raw = loaded_client.post("/v1/embed", json={
        "texts": texts[8:16], "pooling": "none", "layer": "last",
    }).json()
    for server_vec, tokens in zip(pooled["embeddings"], raw["embeddings"]):
        client_vec = np.mean(np.asarray(tokens, dtype=float), axis=0)
        assert np.allclose(server_vec, client_vec, atol=1e-5)
    for text in texts[16:]:
        pooled = loaded_client.post("/v1/embed", json={
            "texts": [text], "pooling": "mean"}).json()
        raw = loaded_client.post("/v1/embed", json={
            "texts": [text], "pooling": "none"}).json()
        client_vec = np.mean(np.asarray(raw["embeddings"][0], float), axis=0)
        assert np.allclose(pooled["embeddings"][0], client_vec, atol=1e-5)
    print("[ACCEPTANCE] service-pooling-conformance: PASS")


def test_healthcheck_dim_matches_checkpoint(loaded_client, tiny_checkpoint):
    from transformers import AutoConfig

    want = AutoConfig.from_pretrained(tiny_checkpoint).n_embd
    assert loaded_client.get("/healthz").json()["dim"] == want
    print("[ACCEPTANCE] service-healthcheck-dim: PASS")


def test_malformed_requests_rejected(loaded_client):
    for payload in ({}, {"texts": []}, {"texts": 42}, {"pooling": "mean"}):
        resp = loaded_client.post("/v1/embed", json=payload)
        assert resp.status_code == 400, payload
    resp = loaded_client.post("/v1/embed", content=b"not json",
                              headers={"Content-Type": "application/json"})
    assert resp.status_code == 400
    print("[ACCEPTANCE] service-malformed-400: PASS")


def _free_port():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture(scope="module")
def live_server(tiny_checkpoint):
    port = _free_port()
    proc = subprocess.Popen(
        [sys.executable, "-m", "embed_service",
         "--model", tiny_checkpoint, "--port", str(port),
         "--max-batch", "16", "--max-tokens", "128"],
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
        env={**os.environ, "TRAJLENS_EMBED_TOKEN": ""},
    )
    url = f"http://127.0.0.1:{port}"
    try:
        deadline = time.time() + 60
        while time.time() < deadline:
            try:
                if requests.get(url + "/healthz", timeout=2).status_code == 200:
                    break
            except requests.RequestException:
                pass
            if proc.poll() is not None:
                raise RuntimeError("service process exited early")
            time.sleep(0.3)
        else:
            raise RuntimeError("service did not become healthy")
        yield url
    finally:
        proc.terminate()
        proc.wait(timeout=10)


class TestLiveServer:
    def test_protocol_over_real_socket(self, live_server):
        resp = requests.post(live_server + "/v1/embed", json={
            "texts": ["Trajectory: (0.00000, 0.00000)"],
            "pooling": "none", "layer": "last",
        }, timeout=30)
        assert resp.status_code == 200
        body = resp.json()
        assert body["dim"] == 32
        assert len(body["embeddings"][0]) >= 1

    @pytest.mark.skipif(shutil.which("trajlens") is None,
                        reason="primary CLI not installed")
    def test_primary_cli_end_to_end(self, live_server, tmp_path):
        # drive the service exactly the way the toolkit does: through its
        # `embed --backend remote` command and the JSONL interchange files
        trajs = [
            {"user_id": "u", "traj_id": f"u/{i}",
             "points": [[116.3 + i * 0.01 + j * 0.001,
                         39.9 + i * 0.005 + j * 0.0005,
                         j * 60] for j in range(4)]}
            for i in range(5)
        ]
        src = tmp_path / "trajs.jsonl"
        src.write_text("".join(json.dumps(t) + "\n" for t in trajs))
        out = tmp_path / "emb.jsonl"
        result = subprocess.run(
            ["trajlens", "embed", "--in", str(src), "--out", str(out),
             "--backend", "remote", "--endpoint", live_server,
             "--dim", "32", "--backoff-s", "0"],
            capture_output=True, text=True, timeout=120,
        )
        assert result.returncode == 0, result.stderr
        rows = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(rows) == 5
        assert all(row["dim"] == 32 for row in rows)
        assert all(len(row["values"]) == 32 for row in rows)
