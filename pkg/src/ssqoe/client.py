"""Thin HTTP client for the QoE service.

With a base URL it talks to a running server; without one it serves
requests against the ASGI app in-process (no socket), which is how the
CLI runs by default.  Service errors come back as the same typed
exceptions the core library raises.
"""

from __future__ import annotations

import asyncio

import httpx

from .errors import NumericOverflowError, QoeError, TrainingError, ValidationError

_ERROR_TYPES = {
    "validation": ValidationError,
    "training": TrainingError,
    "numeric": NumericOverflowError,
}


class _InProcessTransport(httpx.BaseTransport):
    """Sync transport that drives an ASGI app directly."""

    def __init__(self, app):
        self._inner = httpx.ASGITransport(app=app)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        content = request.read()

        async def call():
            req = httpx.Request(request.method, request.url,
                                headers=request.headers, content=content)
            resp = await self._inner.handle_async_request(req)
            await resp.aread()
            return resp

        resp = asyncio.run(call())
        return httpx.Response(resp.status_code, headers=resp.headers,
                              content=resp.content)


class ServiceClient:
    def __init__(self, base_url: str | None = None, app=None, timeout: float | None = None):
        if base_url:
            self._client = httpx.Client(base_url=base_url, timeout=timeout)
        else:
            if app is None:
                from .service import app as default_app
                app = default_app
            self._client = httpx.Client(base_url="http://ssqoe.internal",
                                        transport=_InProcessTransport(app),
                                        timeout=None)

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _post(self, path: str, payload: dict) -> dict:
        response = self._client.post(path, json=payload)
        if response.status_code == 200:
            return response.json()
        try:
            body = response.json()
        except ValueError:
            response.raise_for_status()
            raise QoeError(f"unexpected response {response.status_code}")
        detail = body.get("detail")
        exc_type = _ERROR_TYPES.get(body.get("errorType"))
        if exc_type is None:
            # FastAPI request validation (or other framework) errors.
            exc_type = ValidationError if response.status_code in (400, 422) else QoeError
        raise exc_type(str(detail))

    def health(self) -> dict:
        response = self._client.get("/v1/health")
        response.raise_for_status()
        return response.json()

    def train(self, dataset: dict, config: dict | None = None,
              model_config: dict | None = None) -> dict:
        payload = {"dataset": dataset}
        if config is not None:
            payload["config"] = config
        if model_config is not None:
            payload["modelConfig"] = model_config
        return self._post("/v1/train", payload)

    def predict(self, model: dict, trace: dict, scale_min=None, scale_max=None) -> dict:
        payload = {"model": model, "trace": trace}
        if scale_min is not None:
            payload["scaleMin"] = scale_min
        if scale_max is not None:
            payload["scaleMax"] = scale_max
        return self._post("/v1/predict", payload)

    def loocv(self, dataset: dict, config: dict | None = None,
              model_config: dict | None = None, mode: str = "netflix",
              workers: int = 1) -> dict:
        payload = {"dataset": dataset, "mode": mode, "workers": workers}
        if config is not None:
            payload["config"] = config
        if model_config is not None:
            payload["modelConfig"] = model_config
        return self._post("/v1/loocv", payload)

    def analyze(self, model: dict, rank_tol: float = 0.0) -> dict:
        return self._post("/v1/analyze", {"model": model, "rankTol": rank_tol})

    def synth(self, spec: dict, seed: int = 0) -> dict:
        return self._post("/v1/synth", {"spec": spec, "seed": seed})
