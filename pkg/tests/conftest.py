import hashlib
import json
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from trajlens.core import TrackPoint, Trajectory


def make_trajectory(coords, tid="u/0", user="u", t0=0, dt=60):
    pts = tuple(
        TrackPoint(lon=lon, lat=lat, t=t0 + i * dt)
        for i, (lon, lat) in enumerate(coords)
    )
    return Trajectory(user_id=user, traj_id=tid, points=pts)


def three_group_corpus(n_per_group=20, n_points=24, seed=0):
    """Synthetic corpus: three spatial groups far apart in degree space.

    Group centres sit in different integer-degree cells so serialized
    coordinate strings share leading digits only within a group.
    """
    rng = random.Random(seed)
    centres = [(10.0, 20.0), (120.0, 45.0), (-70.0, -30.0)]
    trajs, labels = [], []
    for g, (clon, clat) in enumerate(centres):
        for k in range(n_per_group):
            lon = clon + rng.uniform(-0.02, 0.02)
            lat = clat + rng.uniform(-0.02, 0.02)
            coords = []
            for _ in range(n_points):
                lon += rng.uniform(-0.003, 0.003)
                lat += rng.uniform(-0.003, 0.003)
                coords.append((lon, lat))
            trajs.append(make_trajectory(coords, tid=f"g{g}/t{k}", user=f"g{g}"))
            labels.append(g)
    return trajs, labels


class _StubEmbedHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def _reply(self, status, obj):
        body = json.dumps(obj).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        if self.path != "/v1/embed":
            self._reply(404, {"error": "not found"})
            return
        cfg = self.server.stub_config
        if cfg.get("require_token"):
            auth = self.headers.get("Authorization", "")
            if auth != f"Bearer {cfg['require_token']}":
                self._reply(401, {"error": "bad token"})
                return
        length = int(self.headers.get("Content-Length", 0))
        try:
            body = json.loads(self.rfile.read(length))
            texts = body["texts"]
            pooling = body.get("pooling", "mean")
        except (ValueError, KeyError):
            self._reply(400, {"error": "malformed request"})
            return
        if not isinstance(texts, list) or not texts:
            self._reply(400, {"error": "texts must be a non-empty list"})
            return
        marker = cfg.get("fail_marker")
        if marker and any(marker in t for t in texts):
            self.server.stub_failures += 1
            self._reply(500, {"error": "injected failure"})
            return
        self.server.stub_requests += 1
        dim = cfg.get("dim", 8)

        def vec(text):
            h = hashlib.sha256(text.encode()).digest()
            return [((h[i % 32] / 255.0) * 2 - 1) + 0.01 * i for i in range(dim)]

        if pooling == "mean":
            embeddings = [vec(t) for t in texts]
        else:
            embeddings = [[vec(f"{t}#{i}") for i in range(len(t.split()))]
                          for t in texts]
        self._reply(200, {"model": "stub", "dim": dim, "embeddings": embeddings})


@pytest.fixture
def stub_embed_server():
    """Start a protocol stub; yields (url, config dict, server)."""
    servers = []

    def start(**config):
        server = ThreadingHTTPServer(("127.0.0.1", 0), _StubEmbedHandler)
        server.stub_config = config
        server.stub_requests = 0
        server.stub_failures = 0
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return f"http://127.0.0.1:{server.server_address[1]}", server

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()
