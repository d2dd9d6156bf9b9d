import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image as PILImage

from descry.core import Rng, save_image
from descry.encoder import forward, init, save_checkpoint
from descry.heatmap import HeatmapConfig, KeypointDB, db_heatmap
from descry.service import ServiceConfig, create_app
from tests.conftest import noise_image


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    images = root / "images"
    images.mkdir()
    for name, seed in (("alpha", 1), ("beta", 2)):
        save_image(noise_image(16, 16, seed=seed), images / f"{name}.png")
    params = init(8, Rng(0))
    save_checkpoint(params, root / "model.ckpt")
    static = root / "static"
    static.mkdir()
    (static / "index.html").write_text("<html><body>ui</body></html>")
    return root, params


@pytest.fixture()
def client(workspace, tmp_path):
    root, _ = workspace
    cfg = ServiceConfig(
        image_dir=root / "images",
        checkpoint_path=root / "model.ckpt",
        db_dir=tmp_path / "dbs",
        static_dir=root / "static",
    )
    return TestClient(create_app(cfg))


class TestImages:
    def test_list_images(self, client):
        resp = client.get("/api/images")
        assert resp.status_code == 200
        ids = {r["id"] for r in resp.json()}
        assert ids == {"alpha", "beta"}
        assert all(r["width"] == 16 and r["height"] == 16 for r in resp.json())

    def test_get_image_returns_png(self, client):
        resp = client.get("/api/images/alpha")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        img = PILImage.open(io.BytesIO(resp.content))
        assert img.size == (16, 16)

    def test_unknown_image_404(self, client):
        assert client.get("/api/images/nope").status_code == 404

    def test_path_traversal_rejected(self, client):
        assert client.get("/api/images/..%2Fmodel").status_code in (404, 422)


class TestAnnotation:
    def test_annotate_persists_db(self, client, tmp_path):
        resp = client.post(
            "/api/db/grasps/keypoints",
            json={"image_id": "alpha", "u": 3, "v": 4, "label": "kp1"},
        )
        assert resp.status_code == 200
        assert resp.json() == {"label": "kp1", "u": 3, "v": 4}
        db_file = tmp_path / "dbs" / "grasps.json"
        assert db_file.is_file()
        db = KeypointDB.load(db_file)
        assert db.labels() == ["kp1"]
        assert db.entries[0].image_id == "alpha"

    def test_descriptor_matches_direct_forward(self, client, workspace):
        root, params = workspace
        client.post(
            "/api/db/check/keypoints",
            json={"image_id": "beta", "u": 5, "v": 6, "label": "x"},
        )
        doc = client.get("/api/db/check").json()
        from descry.core import load_image

        desc, _ = forward(params, load_image(root / "images" / "beta.png"))
        assert np.allclose(doc["entries"][0]["descriptor"], desc.data[6, 5], atol=1e-6)

    def test_duplicate_label_409(self, client):
        body = {"image_id": "alpha", "u": 1, "v": 1, "label": "dup"}
        assert client.post("/api/db/d/keypoints", json=body).status_code == 200
        assert client.post("/api/db/d/keypoints", json=body).status_code == 409

    def test_out_of_bounds_400(self, client):
        resp = client.post(
            "/api/db/x/keypoints",
            json={"image_id": "alpha", "u": 16, "v": 0, "label": "y"},
        )
        assert resp.status_code == 400

    def test_delete_keypoint(self, client):
        client.post(
            "/api/db/del/keypoints",
            json={"image_id": "alpha", "u": 2, "v": 2, "label": "gone"},
        )
        assert client.delete("/api/db/del/keypoints/gone").status_code == 200
        assert client.delete("/api/db/del/keypoints/gone").status_code == 404

    def test_unknown_db_404(self, client):
        assert client.get("/api/db/never").status_code == 404

    def test_non_integer_coordinates_rejected(self, client):
        resp = client.post(
            "/api/db/x/keypoints",
            json={"image_id": "alpha", "u": 1.5, "v": 0, "label": "z"},
        )
        assert resp.status_code == 422


class TestHeatmap:
    def seed_db(self, client):
        client.post(
            "/api/db/hm/keypoints",
            json={"image_id": "alpha", "u": 8, "v": 8, "label": "c"},
        )

    def test_png_format(self, client):
        self.seed_db(client)
        resp = client.get("/api/heatmap", params={"db": "hm", "image_id": "alpha"})
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"

    def test_json_peak_on_source_image_is_annotation(self, client):
        self.seed_db(client)
        resp = client.get(
            "/api/heatmap", params={"db": "hm", "image_id": "alpha", "format": "json"}
        )
        peak = resp.json()["peak"]
        assert (peak["u"], peak["v"]) == (8, 8)
        assert peak["value"] == pytest.approx(1.0, abs=1e-5)

    def test_peak_matches_library_fusion(self, client, workspace):
        root, params = workspace
        self.seed_db(client)
        resp = client.get(
            "/api/heatmap", params={"db": "hm", "image_id": "beta", "format": "json"}
        )
        peak = resp.json()["peak"]
        from descry.core import load_image

        desc, _ = forward(params, load_image(root / "images" / "beta.png"))
        db = KeypointDB.from_json(client.get("/api/db/hm").json())
        fused = db_heatmap(desc, db, HeatmapConfig())
        flat = fused.data[:, :, 0]
        idx = int(np.argmax(flat))
        assert (peak["u"], peak["v"]) == (idx % 16, idx // 16)

    def test_empty_db_422(self, client):
        client.post(
            "/api/db/tmp/keypoints",
            json={"image_id": "alpha", "u": 0, "v": 0, "label": "a"},
        )
        client.delete("/api/db/tmp/keypoints/a")
        resp = client.get("/api/heatmap", params={"db": "tmp", "image_id": "alpha"})
        assert resp.status_code == 422


class TestTrack:
    def test_self_track_is_identity(self, client):
        resp = client.get(
            "/api/track", params={"src": "alpha", "u": 5, "v": 7, "dst": "alpha"}
        )
        body = resp.json()
        assert (body["u_star"], body["v_star"]) == (5, 7)
        assert body["similarity"] == pytest.approx(1.0, abs=1e-5)

    def test_cross_track_returns_valid_pixel(self, client):
        body = client.get(
            "/api/track", params={"src": "alpha", "u": 3, "v": 3, "dst": "beta"}
        ).json()
        assert 0 <= body["u_star"] < 16 and 0 <= body["v_star"] < 16

    def test_out_of_bounds_400(self, client):
        resp = client.get(
            "/api/track", params={"src": "alpha", "u": 99, "v": 0, "dst": "beta"}
        )
        assert resp.status_code == 400


class TestStatic:
    def test_ui_served_at_root(self, client):
        resp = client.get("/")
        assert resp.status_code == 200
        assert "ui" in resp.text


class TestPersistence:
    def test_dbs_reload_on_startup(self, workspace, tmp_path):
        root, _ = workspace
        cfg = ServiceConfig(
            image_dir=root / "images",
            checkpoint_path=root / "model.ckpt",
            db_dir=tmp_path / "dbs",
        )
        c1 = TestClient(create_app(cfg))
        c1.post(
            "/api/db/persisted/keypoints",
            json={"image_id": "alpha", "u": 1, "v": 2, "label": "still-here"},
        )
        c2 = TestClient(create_app(cfg))
        doc = c2.get("/api/db/persisted").json()
        assert [e["label"] for e in doc["entries"]] == ["still-here"]

    def test_env_configuration(self, workspace, tmp_path, monkeypatch):
        root, _ = workspace
        monkeypatch.setenv("DESCRY_IMAGE_DIR", str(root / "images"))
        monkeypatch.setenv("DESCRY_CHECKPOINT", str(root / "model.ckpt"))
        monkeypatch.setenv("DESCRY_DB_DIR", str(tmp_path / "envdbs"))
        cfg = ServiceConfig.from_env_and_args()
        assert cfg.image_dir == root / "images"
        assert cfg.static_dir is None
        client = TestClient(create_app(cfg))
        assert client.get("/api/images").status_code == 200

    def test_args_win_over_env(self, workspace, tmp_path, monkeypatch):
        root, _ = workspace
        monkeypatch.setenv("DESCRY_IMAGE_DIR", "/does/not/exist")
        cfg = ServiceConfig.from_env_and_args(
            image_dir=root / "images",
            checkpoint_path=root / "model.ckpt",
            db_dir=tmp_path / "dbs2",
        )
        assert cfg.image_dir == root / "images"
