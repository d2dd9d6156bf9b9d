"""HTTP API for annotation and inspection: images, clicks, heatmaps, tracking.

All endpoints live under /api/; static UI assets are served from a
configurable directory at /. Keypoint databases persist to disk atomically
(write temp file, then rename).
"""

from __future__ import annotations

import io
import json
import os
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .core import Image, load_image
from .encoder import DescriptorImage, EncoderParams, forward, load_checkpoint
from .evaluation import track
from .heatmap import HeatmapConfig, KeypointDB, add_keypoint, db_heatmap


@dataclass
class ServiceConfig:
    image_dir: Path
    checkpoint_path: Path
    db_dir: Path
    static_dir: Optional[Path] = None
    cache_capacity: int = 16
    eta: float = 0.1

    @staticmethod
    def from_env_and_args(
        image_dir=None, checkpoint_path=None, db_dir=None, static_dir=None, **kw
    ) -> "ServiceConfig":
        """Flags win over environment variables."""
        env = os.environ
        return ServiceConfig(
            image_dir=Path(image_dir or env.get("DESCRY_IMAGE_DIR", ".")),
            checkpoint_path=Path(checkpoint_path or env.get("DESCRY_CHECKPOINT", "best.ckpt")),
            db_dir=Path(db_dir or env.get("DESCRY_DB_DIR", "dbs")),
            static_dir=Path(static_dir) if static_dir else (
                Path(env["DESCRY_STATIC_DIR"]) if "DESCRY_STATIC_DIR" in env else None
            ),
            **kw,
        )


class SessionState:
    """Loaded checkpoint, image index, LRU descriptor cache, keypoint DBs."""

    def __init__(self, cfg: ServiceConfig):
        self.cfg = cfg
        self.params: EncoderParams = load_checkpoint(cfg.checkpoint_path)
        self._cache: "OrderedDict[str, DescriptorImage]" = OrderedDict()
        self._cache_lock = threading.Lock()
        self._db_lock = threading.Lock()
        self.dbs: Dict[str, KeypointDB] = {}
        cfg.db_dir.mkdir(parents=True, exist_ok=True)
        for f in sorted(cfg.db_dir.glob("*.json")):
            db = KeypointDB.load(f)
            self.dbs[db.name] = db

    def reload_checkpoint(self, path: Path) -> None:
        self.params = load_checkpoint(path)
        with self._cache_lock:
            self._cache.clear()  # cache must always match the loaded checkpoint

    def list_images(self):
        out = []
        for f in sorted(self.cfg.image_dir.glob("*.png")):
            img = load_image(f)
            out.append({"id": f.stem, "width": img.width, "height": img.height})
        return out

    def image_path(self, image_id: str) -> Path:
        p = self.cfg.image_dir / f"{image_id}.png"
        if not p.is_file() or "/" in image_id or image_id.startswith("."):
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        return p

    def load(self, image_id: str) -> Image:
        return load_image(self.image_path(image_id))

    def descriptors(self, image_id: str) -> DescriptorImage:
        with self._cache_lock:
            if image_id in self._cache:
                self._cache.move_to_end(image_id)
                return self._cache[image_id]
        img = self.load(image_id)
        desc, _ = forward(self.params, img)
        with self._cache_lock:
            self._cache[image_id] = desc
            while len(self._cache) > self.cfg.cache_capacity:
                self._cache.popitem(last=False)
        return desc

    def get_db(self, name: str, create: bool = False) -> KeypointDB:
        if name not in self.dbs:
            if not create:
                raise HTTPException(status_code=404, detail=f"unknown db {name!r}")
            self.dbs[name] = KeypointDB(name=name, dim=self.params.dim)
        return self.dbs[name]

    def persist_db(self, db: KeypointDB) -> None:
        final = self.cfg.db_dir / f"{db.name}.json"
        tmp = final.with_suffix(".json.tmp")
        with open(tmp, "w") as f:
            json.dump(db.to_json(), f, indent=1)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, final)


class AnnotateRequest(BaseModel):
    image_id: str
    u: int
    v: int
    label: str


def _png_response(img: Image) -> Response:
    from PIL import Image as PILImage

    arr = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    pil = (
        PILImage.fromarray(arr[:, :, 0], mode="L")
        if arr.shape[2] == 1
        else PILImage.fromarray(arr, mode="RGB")
    )
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return Response(content=buf.getvalue(), media_type="image/png")


def create_app(cfg: ServiceConfig) -> FastAPI:
    app = FastAPI(title="descry annotation service")
    state = SessionState(cfg)
    app.state.session = state

    @app.get("/api/images")
    def list_images():
        try:
            return state.list_images()
        except OSError as e:
            raise HTTPException(status_code=500, detail=f"cannot read image dir: {e}")

    @app.get("/api/images/{image_id}")
    def get_image(image_id: str):
        return _png_response(state.load(image_id))

    @app.post("/api/db/{name}/keypoints")
    def annotate(name: str, req: AnnotateRequest):
        img = state.load(req.image_id)
        if not (0 <= req.u < img.width and 0 <= req.v < img.height):
            raise HTTPException(status_code=400, detail=f"pixel ({req.u}, {req.v}) out of bounds")
        with state._db_lock:
            db = state.get_db(name, create=True)
            if req.label in db.labels():
                raise HTTPException(status_code=409, detail=f"duplicate label {req.label!r}")
            desc = state.descriptors(req.image_id)
            add_keypoint(db, desc, req.u, req.v, req.label, image_id=req.image_id)
            state.persist_db(db)
        return {"label": req.label, "u": req.u, "v": req.v}

    @app.delete("/api/db/{name}/keypoints/{label}")
    def remove_keypoint(name: str, label: str):
        with state._db_lock:
            db = state.get_db(name)
            before = len(db.entries)
            db.entries = [e for e in db.entries if e.label != label]
            if len(db.entries) == before:
                raise HTTPException(status_code=404, detail=f"unknown label {label!r}")
            state.persist_db(db)
        return {"deleted": label}

    @app.get("/api/db/{name}")
    def get_db(name: str):
        return state.get_db(name).to_json()

    @app.get("/api/heatmap")
    def heatmap_endpoint(
        db: str = Query(...), image_id: str = Query(...), format: str = Query("png")
    ):
        kdb = state.get_db(db)
        if not kdb.entries:
            raise HTTPException(status_code=422, detail=f"db {db!r} is empty")
        desc = state.descriptors(image_id)
        fused = db_heatmap(desc, kdb, HeatmapConfig(eta=cfg.eta))
        flat = fused.data[:, :, 0]
        peak_idx = int(np.argmax(flat))
        peak = {
            "u": peak_idx % fused.width,
            "v": peak_idx // fused.width,
            "value": float(flat.ravel()[peak_idx]),
        }
        if format == "json":
            return {"peak": peak}
        return _png_response(fused)

    @app.get("/api/track")
    def track_endpoint(src: str, u: int, v: int, dst: str):
        desc_src = state.descriptors(src)
        if not (0 <= u < desc_src.width and 0 <= v < desc_src.height):
            raise HTTPException(status_code=400, detail=f"pixel ({u}, {v}) out of bounds")
        desc_dst = state.descriptors(dst)
        u_star, v_star, sim = track(desc_dst, desc_src.at(u, v))
        return {"u_star": u_star, "v_star": v_star, "similarity": sim}

    if cfg.static_dir is not None and Path(cfg.static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(cfg.static_dir), html=True), name="ui")

    return app


def serve(cfg: ServiceConfig, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(create_app(cfg), host=host, port=port)
