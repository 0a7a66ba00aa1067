"""HTTP inference service for interactive AU editing.

JSON over HTTP under /v1 with multipart image upload; sessions are persisted
to an on-disk store with a TTL so the service is stateless across restarts.
"""

from __future__ import annotations

import io
import json
import time
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response, UploadFile
from PIL import Image
from pydantic import BaseModel

from .geometry import AU_NAMES, MOTION_DIM, NUM_AUS, POSE_NAMES, MotionVector
from .pipeline import PipelineBundle
from .synthetic import NoFaceDetected

DEFAULT_TTL_SECONDS = 3600.0


class ReenactRequest(BaseModel):
    aus: list[float]
    background_id: str | None = None


class SessionStore:
    """Directory-backed session persistence with TTL expiry."""

    def __init__(self, root, ttl_seconds: float = DEFAULT_TTL_SECONDS):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.ttl = ttl_seconds

    def _dir(self, session_id: str) -> Path:
        return self.root / session_id

    def create(self, image: np.ndarray, meta: dict) -> str:
        session_id = uuid.uuid4().hex
        d = self._dir(session_id)
        d.mkdir(parents=True)
        _save_png(d / "source.png", image)
        meta = dict(meta, created=time.time())
        (d / "meta.json").write_text(json.dumps(meta))
        return session_id

    def get(self, session_id: str) -> tuple[np.ndarray, dict]:
        d = self._dir(session_id)
        meta_path = d / "meta.json"
        if not meta_path.exists():
            raise KeyError(session_id)
        meta = json.loads(meta_path.read_text())
        if time.time() - meta["created"] > self.ttl:
            raise KeyError(session_id)
        return _load_png(d / "source.png"), meta

    def add_background(self, session_id: str, image: np.ndarray) -> str:
        self.get(session_id)
        background_id = uuid.uuid4().hex[:12]
        _save_png(self._dir(session_id) / f"bg_{background_id}.png", image)
        return background_id

    def get_background(self, session_id: str, background_id: str) -> np.ndarray:
        path = self._dir(session_id) / f"bg_{background_id}.png"
        if not path.exists():
            raise KeyError(background_id)
        return _load_png(path)


def _save_png(path: Path, image: np.ndarray) -> None:
    Image.fromarray((np.clip(image, 0, 1) * 255).round().astype(np.uint8)).save(path)


def _load_png(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path))[..., :3].astype(np.float64) / 255.0


def _decode_upload(data: bytes, resolution: int) -> np.ndarray:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    img = img.resize((resolution, resolution), Image.BILINEAR)
    return np.asarray(img).astype(np.float64) / 255.0


def create_app(bundle: PipelineBundle, store_dir,
               ttl_seconds: float = DEFAULT_TTL_SECONDS) -> FastAPI:
    app = FastAPI(title="facegan", version="1")
    store = SessionStore(store_dir, ttl_seconds)

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "resolution": bundle.resolution}

    @app.get("/v1/schema")
    def schema():
        """Slider schema for UI clients: names, ranges and ordering."""
        sliders = [{"index": i, "id": code, "label": label, "min": 0.0, "max": 1.0}
                   for i, (code, label) in enumerate(AU_NAMES)]
        sliders += [{"index": NUM_AUS + i, "id": code, "label": label,
                     "min": -1.0, "max": 1.0}
                    for i, (code, label) in enumerate(POSE_NAMES)]
        return {"sliders": sliders}

    @app.post("/v1/session")
    def create_session(image: UploadFile):
        data = image.file.read()
        try:
            img = _decode_upload(data, bundle.resolution)
        except Exception:
            raise HTTPException(status_code=422, detail={"reason": "undecodable image"})
        try:
            landmarks = bundle.estimators.landmarks(img)
            raw_au, raw_pose = bundle.estimators.motion(img)
        except NoFaceDetected as e:
            raise HTTPException(status_code=422, detail={"reason": "no face detected",
                                                         "message": str(e)})
        from .geometry import normalize_motion
        motion = normalize_motion(raw_au, raw_pose)
        session_id = store.create(img, {
            "landmarks": np.asarray(landmarks).reshape(-1).tolist(),
            "aus": motion.as_vector().tolist(),
        })
        return {"session_id": session_id,
                "aus": motion.as_vector().tolist(),
                "landmarks": np.asarray(landmarks).reshape(-1).tolist()}

    @app.post("/v1/session/{session_id}/background")
    def upload_background(session_id: str, image: UploadFile):
        try:
            img = _decode_upload(image.file.read(), bundle.resolution)
            background_id = store.add_background(session_id, img)
        except KeyError:
            raise HTTPException(status_code=404, detail={"reason": "unknown session"})
        return {"background_id": background_id}

    @app.post("/v1/session/{session_id}/reenact")
    def reenact(session_id: str, req: ReenactRequest):
        if len(req.aus) != MOTION_DIM:
            raise HTTPException(status_code=400,
                                detail={"reason": f"aus must have {MOTION_DIM} values"})
        try:
            source_img, meta = store.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail={"reason": "unknown session"})
        background = None
        if req.background_id:
            try:
                background = store.get_background(session_id, req.background_id)
            except KeyError:
                raise HTTPException(status_code=404, detail={"reason": "unknown background"})

        vec = np.asarray(req.aus, dtype=np.float64)
        clamped = np.concatenate([np.clip(vec[:NUM_AUS], 0.0, 1.0),
                                  np.clip(vec[NUM_AUS:], -1.0, 1.0)])
        n_clamped = int(np.sum(clamped != vec))
        motion = MotionVector.from_vector(clamped)

        from .geometry import LandmarkSet
        source_lm = LandmarkSet.unflatten(meta["landmarks"])
        result = bundle.reenact(source_img, source_lm, motion, background_img=background)
        buf = io.BytesIO()
        Image.fromarray((result["output"] * 255).round().astype(np.uint8)).save(buf, format="PNG")
        headers = {"X-Facegan-Clamped": str(n_clamped)}
        return Response(content=buf.getvalue(), media_type="image/png", headers=headers)

    return app
