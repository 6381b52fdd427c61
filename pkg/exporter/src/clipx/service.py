"""POST /embed service speaking the remote provider wire protocol.

Request: JSON {"kind": "text"|"patches", "label"?, "item_id"?,
"image"?: base64 raw RGB bytes, "grid"?: int}. Response:
{"dimension": d, "vectors": [[...], ...]}. Malformed input gets 400,
unknown labels 404, and requests beyond the concurrency budget 429.
Served vectors equal the offline exporter's for identical pixel input.
"""

from __future__ import annotations

import base64
import binascii
import math
import threading

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .encoders import UnknownLabelError, prompt_for
from .export import split_patches


def create_app(encoder, max_concurrency: int = 8) -> FastAPI:
    app = FastAPI()
    slots = threading.BoundedSemaphore(max_concurrency)

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": message})

    @app.post("/embed")
    async def embed(request: Request):
        if not slots.acquire(blocking=False):
            return error(429, "embedding queue is full, retry later")
        try:
            try:
                body = await request.json()
            except Exception:
                return error(400, "request body is not valid JSON")
            if not isinstance(body, dict):
                return error(400, "request body must be a JSON object")
            kind = body.get("kind")
            if kind == "text":
                return _embed_text(body)
            if kind == "patches":
                return _embed_patches(body)
            return error(400, f"kind must be 'text' or 'patches', got {kind!r}")
        finally:
            slots.release()

    def _embed_text(body: dict):
        label = body.get("label")
        if not label or not isinstance(label, str):
            return error(400, "text request requires a non-empty 'label'")
        try:
            vectors = encoder.encode_text([prompt_for(label)])
        except UnknownLabelError as exc:
            return error(404, str(exc))
        return {"dimension": encoder.dimension, "vectors": vectors.tolist()}

    def _embed_patches(body: dict):
        image_b64 = body.get("image")
        grid = body.get("grid")
        if not image_b64 or not isinstance(grid, int) or grid < 1:
            return error(400, "patches request requires 'image' and integer 'grid'")
        try:
            raw = base64.b64decode(image_b64, validate=True)
        except (binascii.Error, ValueError):
            return error(400, "'image' is not valid base64")
        if len(raw) % 3 != 0:
            return error(400, "image bytes are not raw RGB")
        side = math.isqrt(len(raw) // 3)
        if side * side * 3 != len(raw):
            return error(400, "image bytes do not form a square RGB raster")
        if side % grid != 0:
            return error(400, f"grid {grid} does not divide resolution {side}")
        pixels = np.frombuffer(raw, dtype=np.uint8).reshape(side, side, 3)
        vectors = encoder.encode_images(split_patches(pixels, grid))
        return {"dimension": encoder.dimension, "vectors": vectors.tolist()}

    return app
