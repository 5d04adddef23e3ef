"""HTTP front door for interactive editing sessions.

All endpoints speak JSON (images as base64 PNG); coordinates are mm.
Errors return ``{"code", "message"}`` with a 4xx/5xx status. Sessions live
in process memory; one writer at a time per session (the session lock),
reads in between.
"""

from __future__ import annotations

import base64
import io
import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Form, UploadFile
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .jei import CorrectionOutOfReach, CorrectionPoint, JeiError, decode_session
from .serio import FormatError
from .volume import Volume3D, VolumeError


class SessionStore:
    def __init__(self):
        self.sessions = {}

    def add(self, session):
        self.sessions[session.id] = session
        return session.id

    def get(self, sid):
        if sid not in self.sessions:
            raise KeyError(sid)
        return self.sessions[sid]


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"code": code, "message": message})


def _png_b64(img2d: np.ndarray) -> str:
    # transpose so image rows follow the second in-plane axis (v down, u right)
    pil = Image.fromarray(img2d.T)
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def make_app(store: SessionStore | None = None, ui_dir=None) -> FastAPI:
    store = store or SessionStore()
    app = FastAPI(title="segmentation editing service")
    app.state.store = store

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": len(store.sessions)}

    @app.post("/sessions")
    async def create_session(volume: UploadFile = File(...),
                             volume_header: UploadFile = File(...),
                             session: UploadFile = File(...)):
        try:
            header = json.loads((await volume_header.read()).decode())
            payload = await volume.read()
            dims = tuple(int(d) for d in header["dims"])
            expected = dims[0] * dims[1] * dims[2] * 4
            if header.get("dtype") != "f32le" or len(payload) != expected:
                raise VolumeError("volume payload does not match its header")
            data = np.frombuffer(payload, dtype="<f4").reshape(dims, order="F")
            vol = Volume3D(dims, tuple(header["spacing_mm"]),
                           tuple(header["origin_mm"]), data)
            blob = await session.read()
            sess = decode_session(blob, vol)
        except (VolumeError, FormatError, KeyError, ValueError) as exc:
            return _error(400, "bad_session_input", str(exc))
        sid = store.add(sess)
        return {"id": sid}

    @app.get("/sessions/{sid}/surfaces")
    def surfaces(sid: str):
        try:
            sess = store.get(sid)
        except KeyError:
            return _error(404, "unknown_session", sid)
        sol = sess.solution
        out = {"total_cost": sol.total_cost, "surfaces": []}
        meshes = sess.surface_meshes()
        for (t, o, s), mesh in meshes.items():
            out["surfaces"].append({
                "timepoint": int(t),
                "object": int(o),
                "surface": int(s),
                "k": sol.ks[(t, o, s)].tolist(),
                "vertices": mesh.vertices.tolist(),
                "triangles": mesh.triangles.tolist(),
            })
        return out

    @app.get("/sessions/{sid}/slice")
    def get_slice(sid: str, axis: int, index: int,
                  wmin: float = 0.0, wmax: float = 255.0):
        try:
            sess = store.get(sid)
        except KeyError:
            return _error(404, "unknown_session", sid)
        try:
            img, contours = sess.get_slice(axis, index, wmin, wmax)
        except JeiError as exc:
            return _error(400, "bad_slice_request", str(exc))
        keep = [a for a in range(3) if a != axis]
        return {
            "png_base64": _png_b64(img),
            "contours": contours,
            "shape": [int(img.shape[0]), int(img.shape[1])],
            "axes": keep,
            "spacing_mm": [sess.volume.spacing[a] for a in keep],
            "origin_mm": [sess.volume.origin[a] for a in keep],
            "plane_mm": sess.volume.origin[axis] + index * sess.volume.spacing[axis],
            "window": [wmin, wmax],
        }

    @app.post("/sessions/{sid}/corrections")
    async def corrections(sid: str, body: dict):
        try:
            sess = store.get(sid)
        except KeyError:
            return _error(404, "unknown_session", sid)
        try:
            cp = CorrectionPoint(
                position=(float(body["x"]), float(body["y"]), float(body["z"])),
                object_index=int(body["object"]),
                surface=int(body["surface"]),
                timepoint=int(body.get("t", 0)),
                radius_mm=float(body.get("radius", 5.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            return _error(400, "bad_correction", str(exc))
        try:
            _, delta, dt = sess.apply_correction(cp)
        except CorrectionOutOfReach as exc:
            return _error(409, "out_of_reach", str(exc))
        except JeiError as exc:
            return _error(400, "bad_correction", str(exc))
        return {"solution_delta": delta, "resolve_ms": dt * 1000.0}

    @app.post("/sessions/{sid}/undo")
    def undo(sid: str):
        try:
            sess = store.get(sid)
        except KeyError:
            return _error(404, "unknown_session", sid)
        try:
            sess.undo()
        except JeiError as exc:
            return _error(409, "nothing_to_undo", str(exc))
        return {"ok": True}

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app


def serve(host: str, port: int, store: SessionStore | None = None, ui_dir=None):
    import uvicorn
    app = make_app(store, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
