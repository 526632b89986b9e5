"""HTTP front end: the OAI-PMH endpoint plus the static files it describes.

Serving the document root from the same process lets DIDL by-reference
links and a crawler baseline hit exactly the files the index was built from.
"""

from __future__ import annotations

import argparse
import hashlib
import html
import logging
import os
import posixpath
import signal
import socket
import sys
import threading
import time
from datetime import datetime, timezone
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qsl, quote, unquote, urlsplit

from . import SERVER_TOKEN
from .config import ConfigError, ServiceConfig, dump_config, host_port, load_config
from .metadata import digest_header_value
from .protocol import handle
from .render import render_response
from .repo import ConfigurationError, RepositorySnapshot, media_type_of, scan
from .timeutil import from_timestamp, http_date, parse_http_date
from .tokens import TokenCodec

log = logging.getLogger(__name__)


def refresh_snapshot(current: RepositorySnapshot | None, cfg: ServiceConfig) -> RepositorySnapshot | None:
    """Rescan; keep ``current`` when nothing changed or the scan fails."""
    try:
        fresh = scan(cfg.docroot)
    except (ConfigurationError, OSError) as exc:
        log.error("rescan failed, keeping current snapshot: %s", exc)
        return current
    if current is not None and fresh.snapshot_id == current.snapshot_id:
        return current
    return fresh


class AccessLog:
    """One line per request: ``<iso timestamp> <method> <target> <status> <bytes>``."""

    def __init__(self, path: str | None):
        self._lock = threading.Lock()
        self._fh = open(path, "a", encoding="utf-8", buffering=1) if path else None

    def write(self, method: str, target: str, status: int, nbytes: int) -> None:
        if self._fh is None:
            return
        stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")
        target = quote(target, safe="/?&=%:;,+@!$'()*~-._")
        with self._lock:
            self._fh.write(f"{stamp} {method} {target} {status} {nbytes}\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class OaiService:
    """Holds the current snapshot and answers requests against it."""

    def __init__(self, cfg: ServiceConfig, snapshot: RepositorySnapshot | None = None):
        self.cfg = cfg
        self.codec = TokenCodec(cfg.secret, cfg.token_ttl)
        self.access_log = AccessLog(cfg.access_log)
        self._refresh_lock = threading.Lock()
        self._inflight = 0
        self._inflight_lock = threading.Lock()
        self._drained = threading.Condition(self._inflight_lock)
        self.snapshot = snapshot if snapshot is not None else scan(cfg.docroot)

    def refresh(self) -> RepositorySnapshot:
        # at most one rescan in flight; a concurrent caller just sees the current one
        if not self._refresh_lock.acquire(blocking=False):
            return self.snapshot
        try:
            new = refresh_snapshot(self.snapshot, self.cfg)
            if new is not self.snapshot:
                log.info("installed snapshot %s (%d records)", new.snapshot_id, len(new))
                self.snapshot = new
            return self.snapshot
        finally:
            self._refresh_lock.release()

    def enter(self) -> bool:
        with self._inflight_lock:
            if self._inflight >= self.cfg.max_inflight:
                return False
            self._inflight += 1
            return True

    def leave(self) -> None:
        with self._inflight_lock:
            self._inflight -= 1
            self._drained.notify_all()

    def wait_drained(self, timeout: float) -> bool:
        with self._inflight_lock:
            return self._drained.wait_for(lambda: self._inflight == 0, timeout)

    def oai_bytes(self, params) -> bytes:
        snap = self.snapshot
        return render_response(handle(params, snap, self.cfg, self.codec))

    @property
    def endpoint_path(self) -> str:
        return self.cfg.docroot.base_path + self.cfg.endpoint_path

    def resolve(self, url_path: str) -> tuple[int, str | None]:
        """Map a request path to a filesystem path: (status, path-or-None)."""
        base = self.cfg.docroot.base_path
        if base and not (url_path == base or url_path.startswith(base + "/")):
            return HTTPStatus.NOT_FOUND, None
        rel = unquote(url_path[len(base):])
        segments = [s for s in rel.split("/") if s]
        if any(s in (".", "..") or s.startswith(".") or "\x00" in s for s in segments):
            return HTTPStatus.NOT_FOUND, None

        alias = self.cfg.docroot.alias_for("/" + "/".join(segments))
        if alias is not None:
            prefix, target = alias
            rest = segments[len([s for s in prefix.split("/") if s]):]
            root = os.path.realpath(target)
            full = os.path.join(root, *rest) if rest else root
        else:
            root = os.path.realpath(self.cfg.docroot.root_path)
            full = os.path.join(root, *segments)

        real = os.path.realpath(full)
        if not (real == root or real.startswith(root.rstrip(os.sep) + os.sep)):
            return HTTPStatus.NOT_FOUND, None
        if not os.path.exists(real):
            return HTTPStatus.NOT_FOUND, None
        if os.path.isfile(real):
            lower = real.lower()
            if any(lower.endswith(ext) for ext in self.cfg.docroot.excluded_extensions):
                # dynamic sources are never shipped unprocessed
                return HTTPStatus.FORBIDDEN, None
        return HTTPStatus.OK, full


class Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = SERVER_TOKEN
    sys_version = ""
    server: "OaiHTTPServer"

    def setup(self):
        super().setup()
        # headers and body go out in separate writes; don't let Nagle stall the second
        self.connection.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def version_string(self) -> str:
        return SERVER_TOKEN

    def log_message(self, format, *args):
        log.debug("%s - %s", self.address_string(), format % args)

    # plumbing

    def _send(self, status: int, headers: dict[str, str], body: bytes, *, send_body: bool = True):
        self.send_response(status)
        for key, value in headers.items():
            self.send_header(key, value)
        if "Content-Length" not in headers:
            self.send_header("Content-Length", str(len(body) if send_body else 0))
        nbytes = len(body) if send_body else 0
        # logged before anything goes out, so a client that has the full
        # response can rely on the line being present
        self.server.service.access_log.write(self.command, self.path, status, nbytes)
        self.end_headers()
        if send_body and body:
            self.wfile.write(body)

    def _error(self, status: int, extra: dict[str, str] | None = None):
        body = f"{status} {HTTPStatus(status).phrase}\n".encode("ascii")
        headers = {"Content-Type": "text/plain; charset=utf-8", **(extra or {})}
        self._send(status, headers, body, send_body=self.command != "HEAD")

    def _guarded(self, fn):
        service = self.server.service
        if not service.enter():
            self._error(HTTPStatus.SERVICE_UNAVAILABLE, {"Retry-After": "1"})
            return
        try:
            fn()
        finally:
            service.leave()

    # verbs

    def do_GET(self):
        self._guarded(self._get_or_head)

    def do_HEAD(self):
        self._guarded(self._get_or_head)

    def do_POST(self):
        self._guarded(self._post)

    def _post(self):
        path = urlsplit(self.path).path
        length = int(self.headers.get("Content-Length") or 0)
        data = self.rfile.read(length) if length else b""
        if path != self.server.service.endpoint_path:
            self._error(HTTPStatus.METHOD_NOT_ALLOWED, {"Allow": "GET, HEAD"})
            return
        params = parse_qsl(data.decode("utf-8", "replace"), keep_blank_values=True)
        self._oai(params)

    def _get_or_head(self):
        parts = urlsplit(self.path)
        if parts.path == self.server.service.endpoint_path:
            self._oai(parse_qsl(parts.query, keep_blank_values=True))
            return
        self._static(parts.path)

    def _oai(self, params):
        body = self.server.service.oai_bytes(params)
        self._send(
            HTTPStatus.OK,
            {"Content-Type": "text/xml; charset=utf-8"},
            body,
            send_body=self.command != "HEAD",
        )

    def _static(self, url_path: str):
        ims = parse_http_date(self.headers.get("If-Modified-Since", ""))
        status, resp = handle_static_get(self.server.service, url_path, ims, self.command)
        if status == HTTPStatus.MOVED_PERMANENTLY:
            self._send(status, {"Location": resp[0]["Location"]}, b"")
            return
        if status in (HTTPStatus.NOT_FOUND, HTTPStatus.FORBIDDEN):
            self._error(status)
            return
        headers, body = resp
        self._send(status, headers, body, send_body=self.command == "GET" and status == HTTPStatus.OK)


def _listing(url_path: str, directory: str) -> bytes:
    items = []
    for name in sorted(os.listdir(directory)):
        if name.startswith("."):
            continue
        href = quote(name) + ("/" if os.path.isdir(os.path.join(directory, name)) else "")
        items.append(f'<li><a href="{href}">{html.escape(name)}</a></li>')
    title = html.escape(url_path)
    return (
        f"<!DOCTYPE html>\n<html><head><title>Index of {title}</title></head>"
        f"<body><h1>Index of {title}</h1><ul>\n" + "\n".join(items) + "\n</ul></body></html>\n"
    ).encode("utf-8")


def handle_static_get(service: OaiService, url_path: str, if_modified_since: datetime | None, method: str = "GET"):
    """Resolve a static request.

    Returns (status, (headers, body)); the body is returned for HEAD too and
    dropped by the caller, so GET and HEAD agree on every header.
    """
    status, full = service.resolve(url_path)
    if status != HTTPStatus.OK:
        return status, None

    if os.path.isdir(full):
        if not url_path.endswith("/"):
            return HTTPStatus.MOVED_PERMANENTLY, ({"Location": url_path + "/"}, b"")
        index = os.path.join(full, "index.html")
        if os.path.isfile(index):
            full = index
        else:
            body = _listing(url_path, full)
            return HTTPStatus.OK, ({"Content-Type": "text/html"}, body)

    try:
        st = os.stat(full)
        with open(full, "rb") as fh:
            body = fh.read()
    except PermissionError:
        return HTTPStatus.FORBIDDEN, None
    except OSError:
        return HTTPStatus.NOT_FOUND, None

    mtime = from_timestamp(st.st_mtime)
    headers = {"Last-Modified": http_date(mtime)}
    if if_modified_since is not None and if_modified_since >= mtime:
        return HTTPStatus.NOT_MODIFIED, (headers, b"")
    headers.update({
        "Content-Type": media_type_of(posixpath.basename(full)),
        "Content-Length": str(len(body)),
        "Digest": digest_header_value(hashlib.sha256(body).hexdigest()),
    })
    return HTTPStatus.OK, (headers, body)


class OaiHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, service: OaiService | None = None):
        super().__init__(address, Handler)
        self.service = service


class RunningServer:
    """A started server: its URLs and a way to stop it."""

    def __init__(self, httpd: OaiHTTPServer, service: OaiService):
        self.httpd = httpd
        self.service = service
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def base_url(self) -> str:
        return self.service.cfg.base_url

    @property
    def endpoint_url(self) -> str:
        return self.service.cfg.endpoint_url

    def start(self) -> "RunningServer":
        t = threading.Thread(target=self.httpd.serve_forever, name="oai-http", daemon=True)
        t.start()
        self._threads.append(t)
        interval = self.service.cfg.rescan_interval
        if interval:
            r = threading.Thread(target=self._rescan_loop, args=(interval,), name="oai-rescan", daemon=True)
            r.start()
            self._threads.append(r)
        return self

    def _rescan_loop(self, interval: float):
        while not self._stop.wait(interval):
            self.service.refresh()

    def stop(self, drain_timeout: float = 10.0) -> None:
        self._stop.set()
        self.httpd.shutdown()
        self.service.wait_drained(drain_timeout)
        self.httpd.server_close()
        self.service.access_log.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def start_server(cfg: ServiceConfig) -> RunningServer:
    """Bind, scan, and serve in background threads."""
    host, port = host_port(cfg.listen_address)
    httpd = OaiHTTPServer((host, port))
    try:
        if cfg.derived_base_url:
            bound_host, bound_port = httpd.server_address[:2]
            cfg = cfg.with_base_url(f"http://{bound_host}:{bound_port}")
        service = OaiService(cfg)
    except BaseException:
        httpd.server_close()
        raise
    httpd.service = service
    return RunningServer(httpd, service).start()


def serve(cfg: ServiceConfig, ready=None) -> None:
    """Run until SIGINT/SIGTERM; in-flight requests are drained on the way out."""
    server = start_server(cfg)
    done = threading.Event()

    def _stop(signum, frame):
        done.set()

    signal.signal(signal.SIGTERM, _stop)
    signal.signal(signal.SIGINT, _stop)
    if ready is not None:
        ready(server)
    try:
        while not done.wait(0.5):
            pass
    finally:
        server.stop()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="oai-serve", description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True, help="flat key = value config file")
    parser.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return 0

    def ready(server: RunningServer):
        print(f"READY {server.base_url} {server.endpoint_url}", flush=True)

    started = time.monotonic()
    try:
        serve(cfg, ready=ready)
    except (OSError, ConfigurationError) as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1
    log.info("shut down after %.1fs", time.monotonic() - started)
    return 0


if __name__ == "__main__":
    sys.exit(main())
