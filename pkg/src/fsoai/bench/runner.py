"""Benchmark runs against a live service, reconciled with its access log.

The harness owns the service lifecycle: each run (and each sweep round)
gets a freshly started service, the way the original experiments restarted
the web server between harvesting rounds.
"""

from __future__ import annotations

import os
import queue
import shutil
import signal
import statistics
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass
from urllib.parse import urlsplit

import requests

from ..config import parse_config
from ..harvester import OaiClient, harvest_identifiers, harvest_records
from ..metadata import DEFAULT_BYVALUE_THRESHOLD
from ..repo import DocRootConfig, url_for
from ..service import start_server
from .corpus import Manifest
from .crawler import Crawler
from .report import RunReport


class ReconciliationError(AssertionError):
    """Client-side counts disagree with the server's access log."""


class ServiceStartError(RuntimeError):
    pass


def _config_text(docroot: str, access_log: str, page_size_records: int, page_size_identifiers: int,
                 byvalue_threshold: int, extra: dict | None) -> str:
    lines = [
        f"docroot = {os.path.abspath(docroot)}",
        "listen_address = 127.0.0.1:0",
        f"access_log = {access_log}",
        f"page_size_records = {page_size_records}",
        f"page_size_identifiers = {page_size_identifiers}",
        f"byvalue_threshold = {byvalue_threshold}",
        "token_secret = bench",
    ]
    lines += [f"{k} = {v}" for k, v in (extra or {}).items()]
    return "\n".join(lines) + "\n"


class _ServiceBase:
    def __init__(self, docroot: str, workdir: str, *, page_size_records: int = 50,
                 page_size_identifiers: int = 500, byvalue_threshold: int = DEFAULT_BYVALUE_THRESHOLD,
                 extra: dict | None = None):
        self.docroot = docroot
        self.workdir = workdir
        self.page_size_records = page_size_records
        self.page_size_identifiers = page_size_identifiers
        self.byvalue_threshold = byvalue_threshold
        self.access_log = os.path.join(workdir, "access.log")
        self.config_path = os.path.join(workdir, "service.conf")
        self.base_url = ""
        self.endpoint_url = ""
        os.makedirs(workdir, exist_ok=True)
        with open(self.config_path, "w", encoding="utf-8") as fh:
            fh.write(_config_text(docroot, self.access_log, page_size_records, page_size_identifiers,
                                  byvalue_threshold, extra))

    @property
    def endpoint_path(self) -> str:
        return urlsplit(self.endpoint_url).path

    def page_size_for(self, verb: str) -> int:
        return self.page_size_records if verb == "ListRecords" else self.page_size_identifiers

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def restart(self):
        self.stop()
        return self.start()


class ServiceProcess(_ServiceBase):
    """The service as a child process (``python -m fsoai.service``)."""

    proc: subprocess.Popen | None = None

    def start(self, timeout: float = 60.0) -> "ServiceProcess":
        stderr = open(os.path.join(self.workdir, "service.err"), "ab")
        env = {k: v for k, v in os.environ.items() if k != "FSOAI_LISTEN"}
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "fsoai.service", "--config", self.config_path],
            stdout=subprocess.PIPE, stderr=stderr, env=env,
        )
        stderr.close()
        lines: queue.Queue = queue.Queue()
        threading.Thread(target=lambda: lines.put(self.proc.stdout.readline()), daemon=True).start()
        try:
            line = lines.get(timeout=timeout).decode("utf-8").split()
        except queue.Empty:
            line = []
        if len(line) != 3 or line[0] != "READY":
            self.stop()
            raise ServiceStartError(f"service did not start; see {self.workdir}/service.err")
        self.base_url, self.endpoint_url = line[1], line[2]
        return self

    def stop(self) -> None:
        if self.proc is None:
            return
        if self.proc.poll() is None:
            self.proc.send_signal(signal.SIGTERM)
            try:
                self.proc.wait(15)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        if self.proc.stdout:
            self.proc.stdout.close()
        self.proc = None


class InProcessService(_ServiceBase):
    """Same interface, served from threads of the current process (quicker to start in tests)."""

    server = None

    def start(self) -> "InProcessService":
        with open(self.config_path, encoding="utf-8") as fh:
            cfg = parse_config(fh.read(), env={})
        self.server = start_server(cfg)
        self.base_url, self.endpoint_url = self.server.base_url, self.server.endpoint_url
        return self

    def stop(self) -> None:
        if self.server is not None:
            self.server.stop()
            self.server = None


@dataclass
class LogCounts:
    head: int = 0
    get: int = 0
    oai: int = 0
    bytes: int = 0


def log_offset(path: str) -> int:
    try:
        return os.path.getsize(path)
    except FileNotFoundError:
        return 0


def read_log(path: str, offset: int = 0) -> list[tuple[str, str, int, int]]:
    """Entries (method, target, status, bytes) written after ``offset``."""
    out = []
    with open(path, "rb") as fh:
        fh.seek(offset)
        for line in fh.read().decode("utf-8").splitlines():
            _stamp, method, target, status, nbytes = line.split(" ")
            out.append((method, target, int(status), int(nbytes)))
    return out


def count_log(entries, endpoint_path: str) -> LogCounts:
    counts = LogCounts()
    for method, target, _status, nbytes in entries:
        counts.bytes += nbytes
        if urlsplit(target).path == endpoint_path:
            counts.oai += 1
        elif method == "HEAD":
            counts.head += 1
        elif method == "GET":
            counts.get += 1
    return counts


def reconcile(report: RunReport, counts: LogCounts) -> None:
    mismatches = [
        f"{name}: client {client} != log {logged}"
        for name, client, logged in (
            ("requests_head", report.requests_head, counts.head),
            ("requests_get", report.requests_get, counts.get),
            ("requests_oai", report.requests_oai, counts.oai),
            ("bytes", report.bytes, counts.bytes),
        )
        if client != logged
    ]
    if mismatches:
        raise ReconciliationError("; ".join(mismatches))


def seed_urls(service, manifest: Manifest, seed_mode: str) -> list[str]:
    if seed_mode == "index":
        return [service.base_url + "/index.html"]
    if seed_mode == "manifest":
        cfg = DocRootConfig(root_path=manifest.root, base_url=service.base_url)
        return [url_for(cfg, p) for p in sorted(manifest.paths())]
    raise ValueError(f"unknown seed_mode {seed_mode!r}")


def run_crawl(service, seed_mode: str, mirror_dir: str, timestamping: bool = True, *,
              manifest: Manifest | None = None, phase: str = "baseline") -> RunReport:
    if seed_mode == "manifest" and manifest is None:
        raise ValueError("seed_mode=manifest needs the corpus manifest")
    try:
        requests.head(service.base_url + "/", timeout=5)
    except requests.RequestException as exc:
        raise ServiceStartError(f"service at {service.base_url} unreachable: {exc}") from exc
    seeds = seed_urls(service, manifest, seed_mode)
    start = log_offset(service.access_log)
    crawler = Crawler(service.base_url + "/", mirror_dir, timestamping=timestamping,
                      exclude_paths=(service.endpoint_path,))
    t0 = time.perf_counter()
    with crawler.session:
        result = crawler.crawl(seeds)
    wall = time.perf_counter() - t0
    report = RunReport(
        tool="crawler", phase=phase, seed_mode=seed_mode,
        records=len(result.visited),
        requests_head=result.requests_head, requests_get=result.requests_get,
        bytes=result.bytes, wall_time=wall, files_transferred=result.files_transferred,
        details={"transferred": result.transferred, "visited": result.visited},
    )
    reconcile(report, count_log(read_log(service.access_log, start), service.endpoint_path))
    return report


def run_harvest(service, verb: str, from_: str | None = None, page_size: int | None = None, *,
                mirror_dir: str | None = None, phase: str = "baseline", on_page=None) -> RunReport:
    if verb not in ("ListIdentifiers", "ListRecords"):
        raise ValueError(f"unsupported verb {verb!r}")
    configured = service.page_size_for(verb)
    if page_size is not None and page_size != configured:
        raise ValueError(f"service is configured with page size {configured} for {verb}, not {page_size}")
    start = log_offset(service.access_log)
    client = OaiClient(service.endpoint_url)
    t0 = time.perf_counter()
    if verb == "ListIdentifiers":
        urls, metrics, _ = harvest_identifiers(service.endpoint_url, from_, client=client, on_page=on_page)
        by_ref, transferred, details = 0, 0, {"identifiers": urls}
    else:
        own_mirror = mirror_dir is None
        mirror = tempfile.mkdtemp(prefix="harvest-mirror-") if own_mirror else mirror_dir
        try:
            result = harvest_records(service.endpoint_url, from_, mirror, url_prefix=service.base_url,
                                     client=client, on_page=on_page)
        finally:
            if own_mirror:
                shutil.rmtree(mirror, ignore_errors=True)
        if result.errors:
            raise RuntimeError(f"harvest reported {len(result.errors)} errors: {result.errors[:3]}")
        metrics, by_ref, transferred = result.metrics, result.by_ref_fetches, len(result.updated)
        details = {"identifiers": result.identifiers, "updated": result.updated}
    wall = time.perf_counter() - t0
    report = RunReport(
        tool="harvester", phase=phase, verb=verb, page_size=configured,
        records=metrics.records_received,
        requests_get=by_ref, requests_oai=metrics.http_requests - by_ref,
        bytes=metrics.bytes_received, wall_time=wall, files_transferred=transferred,
        details=details,
    )
    reconcile(report, count_log(read_log(service.access_log, start), service.endpoint_path))
    return report


def sweep_page_sizes(docroot: str, verb: str, sizes, workdir: str, *, repeats: int = 5,
                     byvalue_threshold: int = DEFAULT_BYVALUE_THRESHOLD, service_cls=ServiceProcess) -> list[RunReport]:
    """One baseline harvest per (size, repeat), each against a freshly started service.

    Reports come back in input order; wall_time is the median over repeats,
    request and byte counts must agree across repeats.
    """
    out = []
    for size in sizes:
        kwargs = {"page_size_records": size} if verb == "ListRecords" else {"page_size_identifiers": size}
        runs = []
        for i in range(repeats):
            svc = service_cls(docroot, os.path.join(workdir, f"{verb}-{size}-{i}"),
                              byvalue_threshold=byvalue_threshold, **kwargs)
            with svc:
                runs.append(run_harvest(svc, verb, page_size=size))
        keys = {(r.requests_oai, r.requests_get, r.records) for r in runs}
        if len(keys) != 1:
            raise ReconciliationError(f"request counts varied across repeats at page size {size}: {keys}")
        first = runs[0]
        first.phase = "sweep"
        first.wall_time = statistics.median(r.wall_time for r in runs)
        first.bytes = int(statistics.median(r.bytes for r in runs))
        first.details = {"wall_times": [r.wall_time for r in runs]}
        out.append(first)
    return out
