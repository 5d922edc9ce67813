"""HTTP service hosting the synthesized endpoints over the read-only database.

Each endpoint becomes one GET route at its pool path; parameters travel as
URL query strings. Responses wrap the result rows as {resource: values}.
Missing required parameters return 422 naming the parameter, type
mismatches return 400, execution failures return 500 with an opaque
message. The service is stateless: every worker thread opens its own
read-only connection.
"""

from __future__ import annotations

import sqlite3
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import uvicorn
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .pools import ToolPool, load_pool


@dataclass
class ServiceConfig:
    bind: str = "127.0.0.1"
    port: int = 8000
    database_root: Path = Path(".")
    pool_path: Path | None = None
    timeout_ms: int = 10000
    max_concurrent: int = 64


class _Connections(threading.local):
    conn: sqlite3.Connection | None = None


def _coerce(value: str, json_type: str, name: str):
    if json_type == "integer":
        try:
            return int(value)
        except ValueError:
            raise _BadType(name, "integer")
    if json_type == "number":
        try:
            return float(value)
        except ValueError:
            raise _BadType(name, "number")
    if json_type == "boolean":
        if value.lower() in ("true", "1"):
            return 1
        if value.lower() in ("false", "0"):
            return 0
        raise _BadType(name, "boolean")
    return value


class _BadType(Exception):
    def __init__(self, param: str, expected: str):
        self.param = param
        self.expected = expected
        super().__init__(param)


def create_app(pool: ToolPool, database_root: Path, timeout_ms: int = 10000) -> FastAPI:
    """Build the FastAPI app: one GET route per endpoint, /health and /spec."""
    if pool.formulation != "REST":
        raise ValueError("the service hosts REST pools only")
    database_root = Path(database_root)
    db_path = database_root / f"{pool.database}.sqlite"
    if not db_path.exists():
        raise FileNotFoundError(f"database file {db_path} does not exist")

    # fail fast: every template must prepare against the database
    probe = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
    try:
        for endpoint in pool.endpoints.values():
            probe.execute("EXPLAIN " + endpoint["sql_template"],
                          [None] * len(endpoint["params"]))
    finally:
        probe.close()

    app = FastAPI(title=f"bird-{pool.database}", docs_url=None, redoc_url=None)
    local = _Connections()
    deadline_s = timeout_ms / 1000.0

    def connection() -> sqlite3.Connection:
        if local.conn is None:
            local.conn = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
        return local.conn

    @app.get("/health")
    def health():
        return {"status": "ok", "database": pool.database,
                "endpoints": len(pool.endpoints)}

    @app.get("/spec")
    def spec():
        return list(pool.tools.values())

    @app.exception_handler(404)
    async def not_found(request: Request, exc):
        return JSONResponse(status_code=404,
                            content={"error": "not found", "path": request.url.path})

    def make_handler(endpoint: dict):
        def handler(request: Request):
            params = []
            for descriptor in endpoint["params"]:
                name = descriptor["name"]
                if name not in request.query_params:
                    return JSONResponse(
                        status_code=422,
                        content={"error": "missing required parameter", "param": name},
                    )
                try:
                    params.append(_coerce(request.query_params[name],
                                          descriptor["type"], name))
                except _BadType as exc:
                    return JSONResponse(
                        status_code=400,
                        content={"error": "parameter type mismatch", "param": exc.param,
                                 "expected": exc.expected},
                    )
            conn = connection()
            started = time.monotonic()
            conn.set_progress_handler(
                lambda: 1 if time.monotonic() - started > deadline_s else 0, 1000)
            try:
                cursor = conn.execute(endpoint["sql_template"], params)
                rows = cursor.fetchall()
                width = len(cursor.description)
            except sqlite3.Error:
                return JSONResponse(status_code=500,
                                    content={"error": "query execution failed"})
            finally:
                conn.set_progress_handler(None, 0)
            values = [row[0] for row in rows] if width == 1 else [list(row) for row in rows]
            return JSONResponse(content={endpoint["resource"]: values})

        return handler

    for endpoint in pool.endpoints.values():
        app.get(endpoint["path"])(make_handler(endpoint))
    return app


def serve(config: ServiceConfig) -> None:
    """Load the pool, build the app and block serving it."""
    if config.pool_path is None:
        raise ValueError("a pool file is required")
    pool = load_pool(Path(config.pool_path), db_root=Path(config.database_root))
    app = create_app(pool, Path(config.database_root), timeout_ms=config.timeout_ms)
    uvicorn.run(app, host=config.bind, port=config.port,
                limit_concurrency=config.max_concurrent, log_level="warning")


class BackgroundServer:
    """Run the service in a thread; used by tests and the agent harness."""

    def __init__(self, app: FastAPI, host: str = "127.0.0.1", port: int = 0):
        config = uvicorn.Config(app, host=host, port=port, log_level="error")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)
        self._host = host

    def __enter__(self) -> str:
        self.thread.start()
        while not self.server.started:
            if not self.thread.is_alive():
                raise RuntimeError("server failed to start")
            time.sleep(0.02)
        server = self.server.servers[0]
        port = server.sockets[0].getsockname()[1]
        return f"http://{self._host}:{port}"

    def __exit__(self, *exc_info) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10)
