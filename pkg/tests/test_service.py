"""HTTP service contract: sessions, reenaction, error paths."""

import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from facegan.service import create_app
from facegan.synthetic import Identity, render_crop


def png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray((np.clip(img, 0, 1) * 255).round().astype(np.uint8)).save(buf, "PNG")
    return buf.getvalue()


@pytest.fixture(scope="module")
def face_png():
    img, _, _ = render_crop(Identity(), np.full(17, 0.3), np.zeros(3), size=64)
    return png_bytes(img)


@pytest.fixture()
def client(bundle, tmp_path):
    app = create_app(bundle, tmp_path / "sessions")
    return TestClient(app)


def make_session(client, face_png):
    r = client.post("/v1/session", files={"image": ("face.png", face_png, "image/png")})
    assert r.status_code == 200
    return r.json()


class TestHealthAndSchema:
    def test_health(self, client):
        r = client.get("/v1/health")
        assert r.status_code == 200
        assert r.json() == {"status": "ok", "resolution": 64}

    def test_schema_sliders(self, client):
        sliders = client.get("/v1/schema").json()["sliders"]
        assert len(sliders) == 20
        assert sliders[0]["id"] == "AU01" and sliders[0]["min"] == 0.0
        assert sliders[17]["id"] == "pose_Rx" and sliders[17]["min"] == -1.0
        assert [s["index"] for s in sliders] == list(range(20))


class TestSession:
    def test_create_returns_initial_sliders(self, client, face_png):
        body = make_session(client, face_png)
        assert len(body["aus"]) == 20
        assert len(body["landmarks"]) == 136
        assert body["session_id"]

    def test_undecodable_image(self, client):
        r = client.post("/v1/session", files={"image": ("x.png", b"not a png", "image/png")})
        assert r.status_code == 422

    def test_no_face(self, client):
        blank = png_bytes(np.zeros((64, 64, 3)))
        r = client.post("/v1/session", files={"image": ("x.png", blank, "image/png")})
        assert r.status_code == 422
        assert r.json()["detail"]["reason"] == "no face detected"


class TestReenact:
    def test_returns_png(self, client, face_png):
        body = make_session(client, face_png)
        r = client.post(f"/v1/session/{body['session_id']}/reenact",
                        json={"aus": body["aus"]})
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert r.headers["X-Facegan-Clamped"] == "0"
        img = Image.open(io.BytesIO(r.content))
        assert img.size == (64, 64)

    def test_out_of_range_values_clamped(self, client, face_png):
        body = make_session(client, face_png)
        aus = [2.0] * 17 + [0.0, 0.0, -3.0]
        r = client.post(f"/v1/session/{body['session_id']}/reenact", json={"aus": aus})
        assert r.status_code == 200
        assert int(r.headers["X-Facegan-Clamped"]) == 18

    def test_wrong_length(self, client, face_png):
        body = make_session(client, face_png)
        r = client.post(f"/v1/session/{body['session_id']}/reenact",
                        json={"aus": [0.5] * 7})
        assert r.status_code == 400

    def test_unknown_session(self, client):
        r = client.post("/v1/session/deadbeef/reenact", json={"aus": [0.0] * 20})
        assert r.status_code == 404

    def test_expired_session(self, bundle, tmp_path, face_png):
        client = TestClient(create_app(bundle, tmp_path / "s", ttl_seconds=-1.0))
        body = make_session(client, face_png)
        r = client.post(f"/v1/session/{body['session_id']}/reenact",
                        json={"aus": body["aus"]})
        assert r.status_code == 404


class TestBackground:
    def test_upload_and_use(self, client, face_png):
        body = make_session(client, face_png)
        sid = body["session_id"]
        bg = png_bytes(np.full((64, 64, 3), 0.5))
        r = client.post(f"/v1/session/{sid}/background",
                        files={"image": ("bg.png", bg, "image/png")})
        assert r.status_code == 200
        bg_id = r.json()["background_id"]
        r = client.post(f"/v1/session/{sid}/reenact",
                        json={"aus": body["aus"], "background_id": bg_id})
        assert r.status_code == 200

    def test_unknown_background(self, client, face_png):
        body = make_session(client, face_png)
        r = client.post(f"/v1/session/{body['session_id']}/reenact",
                        json={"aus": body["aus"], "background_id": "missing"})
        assert r.status_code == 404

    def test_background_for_unknown_session(self, client):
        bg = png_bytes(np.full((64, 64, 3), 0.5))
        r = client.post("/v1/session/nosuch/background",
                        files={"image": ("bg.png", bg, "image/png")})
        assert r.status_code == 404
