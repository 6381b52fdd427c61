import base64
import socket
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from clipx.encoders import ColorPrototypeEncoder
from clipx.export import ExportJob, run_export
from clipx.service import create_app

from pandaug.providers import RemoteProvider

from smoke_fixtures import GRID, RESOLUTION


@pytest.fixture()
def client():
    return TestClient(create_app(ColorPrototypeEncoder()))


def image_body(pixels, grid=GRID):
    return {
        "kind": "patches",
        "item_id": "it",
        "label": "red",
        "image": base64.b64encode(pixels.tobytes()).decode("ascii"),
        "grid": grid,
    }


class TestProtocol:
    def test_text(self, client):
        resp = client.post("/embed", json={"kind": "text", "label": "red"})
        assert resp.status_code == 200
        body = resp.json()
        assert body["dimension"] == 64
        assert len(body["vectors"]) == 1
        assert len(body["vectors"][0]) == 64

    def test_patches_vector_count(self, client):
        pixels = np.zeros((RESOLUTION, RESOLUTION, 3), dtype=np.uint8)
        pixels[:] = 40
        resp = client.post("/embed", json=image_body(pixels))
        assert resp.status_code == 200
        assert len(resp.json()["vectors"]) == GRID * GRID

    def test_text_without_label_is_400(self, client):
        assert client.post("/embed", json={"kind": "text"}).status_code == 400

    def test_unknown_kind_is_400(self, client):
        assert client.post("/embed", json={"kind": "tokens"}).status_code == 400

    def test_bad_base64_is_400(self, client):
        body = {"kind": "patches", "image": "%%%", "grid": 2}
        assert client.post("/embed", json=body).status_code == 400

    def test_indivisible_grid_is_400(self, client):
        pixels = np.zeros((RESOLUTION, RESOLUTION, 3), dtype=np.uint8)
        assert client.post("/embed", json=image_body(pixels, grid=7)).status_code == 400

    def test_unknown_label_is_404(self, client):
        resp = client.post("/embed", json={"kind": "text", "label": "chartreuse"})
        assert resp.status_code == 404

    def test_non_json_body_is_400(self, client):
        resp = client.post("/embed", content=b"\x00\x01",
                           headers={"content-type": "application/json"})
        assert resp.status_code == 400


class TestServedMatchesOffline:
    def test_patch_vectors_agree(self, client, smoke_set):
        encoder = ColorPrototypeEncoder()
        job = ExportJob(manifest=str(smoke_set.manifest),
                        output=str(smoke_set.root / "s.pemb"),
                        grid=GRID, resolution=RESOLUTION)
        outcome = run_export(job, encoder)
        path, label, _ = smoke_set.items[0]
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"))
        served = np.asarray(
            client.post("/embed", json=image_body(pixels)).json()["vectors"],
            dtype=np.float32)
        offline = {r.patch_index: r.vector for r in outcome.records
                   if r.item_id == path}
        for i in range(GRID * GRID):
            assert np.max(np.abs(served[i] - offline[i])) < 1e-5

    def test_text_vectors_agree(self, client, smoke_set):
        encoder = ColorPrototypeEncoder()
        job = ExportJob(manifest=str(smoke_set.manifest),
                        output=str(smoke_set.root / "s.pemb"),
                        grid=GRID, resolution=RESOLUTION)
        outcome = run_export(job, encoder)
        for record in outcome.records:
            if record.patch_index != 0xFFFF:
                continue
            served = client.post(
                "/embed", json={"kind": "text", "label": record.item_id})
            vec = np.asarray(served.json()["vectors"][0], dtype=np.float32)
            assert np.max(np.abs(vec - record.vector)) < 1e-5


class TestPrimaryClientInterop:
    @pytest.fixture()
    def live_server(self):
        import uvicorn

        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            port = probe.getsockname()[1]
        config = uvicorn.Config(create_app(ColorPrototypeEncoder()),
                                host="127.0.0.1", port=port, log_level="error")
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.time() + 10
        while not server.started:
            if time.time() > deadline:
                raise RuntimeError("service did not start")
            time.sleep(0.05)
        yield f"http://127.0.0.1:{port}"
        server.should_exit = True
        thread.join(timeout=5)

    def test_remote_provider_round_trip(self, live_server, smoke_set):
        provider = RemoteProvider(live_server, dimension=64, timeout=5)
        text = provider.text_embedding("red")
        assert text.shape == (64,)
        path, label, _ = smoke_set.items[0]
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"))
        vecs = provider.patch_embeddings(path, label, GRID * GRID, image=pixels)
        assert vecs.shape == (GRID * GRID, 64)
        offline = ColorPrototypeEncoder().encode_images(
            [pixels[r * 32:(r + 1) * 32, c * 32:(c + 1) * 32]
             for r in range(2) for c in range(2)])
        assert np.max(np.abs(vecs - offline)) < 1e-5
