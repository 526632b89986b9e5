"""OAI-PMH harvester: identifier lists, DIDL mirroring, incremental state.

usage: harvest identifiers --base-url URL [--from T] [--until T] [--set S]
       harvest records --base-url URL --mirror DIR [--from T] [--state FILE]

The base URL is the OAI-PMH endpoint.  Identifier lists go to stdout one per
line; ``--metrics FILE`` appends one CSV row of request/byte counts.  With
``--state FILE`` the next run starts from the previous run's responseDate
(overlapping by design, never leaving a gap); ``--baseline`` ignores it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterator
from urllib.parse import unquote, urlsplit

import requests
from lxml import etree

from .metadata import DidlError, decode_didl
from .timeutil import format_datestamp, parse_datestamp, to_timestamp, utcnow

log = logging.getLogger(__name__)

OAI_NS = "http://www.openarchives.org/OAI/2.0/"
NS = {"oai": OAI_NS}
USER_AGENT = "fsoai-harvester/0.1"


class HarvestError(Exception):
    pass


class StaleRepositoryError(HarvestError):
    """The repository kept changing underneath a token chain."""


class OaiProtocolError(HarvestError):
    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


class StateError(HarvestError):
    pass


@dataclass
class HarvestMetrics:
    http_requests: int = 0
    bytes_received: int = 0
    records_received: int = 0
    wall_time: float = 0.0
    pages: int = 0

    def csv_row(self) -> dict:
        return asdict(self)


@dataclass
class HarvestState:
    base_url: str
    last_successful_from: str | None = None
    last_response_date: str | None = None
    records_seen: int = 0
    format: str = "oai_dc"


@dataclass
class Header:
    identifier: str
    datestamp: str
    set_specs: tuple[str, ...] = ()


@dataclass
class Page:
    response_date: str
    headers: list[Header] = field(default_factory=list)
    metadata: list[etree._Element | None] = field(default_factory=list)
    token: str | None = None
    cursor: int | None = None
    complete_list_size: int | None = None
    error: tuple[str, str] | None = None


def parse_page(xml: bytes) -> Page:
    """Parse one OAI-PMH response (ListIdentifiers, ListRecords or GetRecord)."""
    parser = etree.XMLParser(resolve_entities=False, no_network=True, huge_tree=True)
    try:
        root = etree.fromstring(xml, parser)
    except etree.XMLSyntaxError as exc:
        raise HarvestError(f"unparseable OAI-PMH response: {exc}") from exc
    page = Page(response_date=root.findtext("oai:responseDate", default="", namespaces=NS))
    err = root.find("oai:error", NS)
    if err is not None:
        page.error = (err.get("code", ""), (err.text or "").strip())
        return page

    def header_of(h) -> Header:
        return Header(
            identifier=h.findtext("oai:identifier", default="", namespaces=NS),
            datestamp=h.findtext("oai:datestamp", default="", namespaces=NS),
            set_specs=tuple(s.text or "" for s in h.findall("oai:setSpec", NS)),
        )

    for h in root.findall("oai:ListIdentifiers/oai:header", NS):
        page.headers.append(header_of(h))
    for rec in root.findall("oai:ListRecords/oai:record", NS) + root.findall("oai:GetRecord/oai:record", NS):
        page.headers.append(header_of(rec.find("oai:header", NS)))
        md = rec.find("oai:metadata", NS)
        page.metadata.append(md[0] if md is not None and len(md) else None)

    tok = root.find("oai:*/oai:resumptionToken", NS)
    if tok is not None:
        page.token = (tok.text or "").strip() or None
        if tok.get("cursor") is not None:
            page.cursor = int(tok.get("cursor"))
        if tok.get("completeListSize") is not None:
            page.complete_list_size = int(tok.get("completeListSize"))
    return page


class OaiClient:
    """HTTP transport with bounded retries and request/byte accounting."""

    def __init__(self, base_url: str, *, retries: int = 3, backoff: float = 0.5, timeout: float = 60.0):
        self.base_url = base_url
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.metrics = HarvestMetrics()
        # responseDate of the first OAI response; the safe "from" for the next incremental run
        self.first_response_date: str | None = None
        self._lock = threading.Lock()
        self._local = threading.local()

    @property
    def session(self) -> requests.Session:
        s = getattr(self._local, "session", None)
        if s is None:
            s = self._local.session = requests.Session()
            s.headers["User-Agent"] = USER_AGENT
        return s

    def _count(self, nbytes: int) -> None:
        with self._lock:
            self.metrics.http_requests += 1
            self.metrics.bytes_received += nbytes

    def fetch(self, url: str, params=None) -> requests.Response:
        delay = self.backoff
        for attempt in range(self.retries + 1):
            try:
                resp = self.session.get(url, params=params, timeout=self.timeout)
            except requests.RequestException as exc:
                with self._lock:
                    self.metrics.http_requests += 1
                if attempt == self.retries:
                    raise HarvestError(f"request to {url} failed: {exc}") from exc
                log.warning("request failed (%s), retrying in %.1fs", exc, delay)
                time.sleep(delay)
                delay *= 2
                continue
            self._count(len(resp.content))
            if resp.status_code == 503 and attempt < self.retries:
                wait = float(resp.headers.get("Retry-After", delay))
                log.info("server busy, retrying in %.1fs", wait)
                time.sleep(wait)
                delay *= 2
                continue
            return resp
        raise HarvestError(f"request to {url} failed")  # pragma: no cover

    def oai(self, params: dict) -> Page:
        resp = self.fetch(self.base_url, params)
        if resp.status_code != 200:
            raise HarvestError(f"{self.base_url} answered HTTP {resp.status_code}")
        page = parse_page(resp.content)
        if self.first_response_date is None and page.response_date:
            self.first_response_date = page.response_date
        return page


def _list_pages(
    client: OaiClient,
    verb: str,
    prefix: str,
    from_: str | None,
    until: str | None,
    set_spec: str | None,
    on_page: Callable[[Page], None] | None = None,
) -> Iterator[Page]:
    """Yield pages of one complete token chain; raises OaiProtocolError on protocol errors."""
    params = {"verb": verb, "metadataPrefix": prefix}
    for key, value in (("from", from_), ("until", until), ("set", set_spec)):
        if value:
            params[key] = value
    while True:
        page = client.oai(params)
        if page.error is not None:
            code, message = page.error
            if code == "noRecordsMatch":
                return
            raise OaiProtocolError(code, message)
        client.metrics.pages += 1
        client.metrics.records_received += len(page.headers)
        yield page
        if on_page is not None:
            on_page(page)
        if not page.token:
            return
        params = {"verb": verb, "resumptionToken": page.token}


def _with_restart(run: Callable[[], object]):
    """Run a full token chain, restarting once on badResumptionToken."""
    for attempt in (1, 2):
        try:
            return run()
        except OaiProtocolError as exc:
            if exc.code != "badResumptionToken":
                raise
            if attempt == 2:
                raise StaleRepositoryError(
                    "repository changed during the harvest twice in a row; giving up"
                ) from exc
            log.warning("resumptionToken rejected (%s); restarting harvest from scratch", exc)


def harvest_identifiers(
    base_url: str,
    from_: str | None = None,
    until: str | None = None,
    set_spec: str | None = None,
    *,
    metadata_prefix: str = "oai_dc",
    client: OaiClient | None = None,
    on_page: Callable[[Page], None] | None = None,
) -> tuple[list[str], HarvestMetrics, str | None]:
    """Return (identifiers in server order, metrics, responseDate of the first page)."""
    client = client or OaiClient(base_url)
    started = time.perf_counter()

    def run():
        urls: list[str] = []
        for page in _list_pages(client, "ListIdentifiers", metadata_prefix, from_, until, set_spec, on_page):
            urls.extend(h.identifier for h in page.headers)
        return urls

    urls = _with_restart(run)
    client.metrics.wall_time = time.perf_counter() - started
    return urls, client.metrics, client.first_response_date


def default_url_prefix(endpoint: str) -> str:
    """The document base URL, assumed to be the endpoint's parent."""
    return endpoint.rstrip("/").rsplit("/", 1)[0]


def mirror_path(mirror_dir: str, url: str, url_prefix: str) -> str | None:
    """Local path for ``url``; None if the URL is outside the prefix or escapes the mirror."""
    prefix = url_prefix.rstrip("/") + "/"
    if not url.startswith(prefix):
        return None
    rel = urlsplit(url[len(prefix) - 1:]).path
    segments = [unquote(s) for s in rel.split("/") if s]
    if not segments or any(s in (".", "..") or "/" in s or "\x00" in s for s in segments):
        return None
    return os.path.join(mirror_dir, *segments)


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _is_current(path: str, size: int, mtime: int, sha256: str | None) -> bool:
    try:
        st = os.stat(path)
    except OSError:
        return False
    if st.st_size != size or int(st.st_mtime) != mtime:
        return False
    return sha256 is None or _sha256_file(path) == sha256


def write_file(path: str, data: bytes, mtime: int) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".part-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.utime(tmp, (mtime, mtime))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RecordsResult:
    metrics: HarvestMetrics
    updated: list[str]
    errors: list[str]
    by_ref_fetches: int
    identifiers: list[str]
    response_date: str | None


def harvest_records(
    base_url: str,
    from_: str | None,
    mirror_dir: str,
    *,
    until: str | None = None,
    set_spec: str | None = None,
    url_prefix: str | None = None,
    concurrency: int = 4,
    client: OaiClient | None = None,
    on_page: Callable[[Page], None] | None = None,
) -> RecordsResult:
    """ListRecords in oai_didl and write each resource into ``mirror_dir``.

    Inline (by-value) content is written directly; reference-only records
    are fetched with a GET.  Files already identical in size, mtime and
    digest are left alone, so repeating a harvest rewrites nothing.
    """
    client = client or OaiClient(base_url)
    url_prefix = url_prefix or default_url_prefix(base_url)
    started = time.perf_counter()
    updated: list[str] = []
    errors: list[str] = []
    fetches = 0

    def fetch_ref(job):
        url, path, mtime, sha = job
        try:
            resp = client.fetch(url)
        except HarvestError as exc:
            return url, None, str(exc)
        if resp.status_code != 200:
            return url, None, f"HTTP {resp.status_code}"
        if sha is not None and hashlib.sha256(resp.content).hexdigest() != sha:
            return url, None, "fetched content does not match the declared digest"
        write_file(path, resp.content, mtime)
        return url, path, None

    def run():
        nonlocal fetches
        identifiers: list[str] = []
        with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
            for page in _list_pages(client, "ListRecords", "oai_didl", from_, until, set_spec, on_page):
                jobs = []
                for header, md in zip(page.headers, page.metadata):
                    identifiers.append(header.identifier)
                    if md is None:
                        errors.append(f"{header.identifier}: no metadata")
                        continue
                    try:
                        doc = decode_didl(md)
                    except DidlError as exc:
                        errors.append(f"{header.identifier}: {exc}")
                        continue
                    path = mirror_path(mirror_dir, doc.by_ref, url_prefix)
                    if path is None:
                        errors.append(f"{header.identifier}: no mirror location")
                        continue
                    mtime = to_timestamp(parse_datestamp(header.datestamp))
                    sha = doc.headers.sha256_hex()
                    if _is_current(path, doc.headers.content_length, mtime, sha):
                        continue
                    if doc.by_value is not None:
                        write_file(path, doc.by_value, mtime)
                        updated.append(path)
                    else:
                        jobs.append((doc.by_ref, path, mtime, sha))
                fetches += len(jobs)
                # map keeps page order regardless of completion order
                for url, path, err in pool.map(fetch_ref, jobs):
                    if err is not None:
                        errors.append(f"{url}: {err}")
                    else:
                        updated.append(path)
        return identifiers

    identifiers = _with_restart(run)
    client.metrics.wall_time = time.perf_counter() - started
    return RecordsResult(client.metrics, updated, errors, fetches, identifiers, client.first_response_date)


def load_state(path: str) -> HarvestState | None:
    """None when the file does not exist (first harvest is a baseline)."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    except FileNotFoundError:
        return None
    try:
        data = json.loads(raw)
        names = {f.name for f in fields(HarvestState)}
        if not isinstance(data, dict) or set(data) != names:
            raise ValueError("unexpected keys")
        state = HarvestState(**data)
        for stamp in (state.last_successful_from, state.last_response_date):
            if stamp is not None:
                parse_datestamp(stamp)
        if not isinstance(state.records_seen, int):
            raise ValueError("records_seen is not an integer")
    except (ValueError, TypeError) as exc:
        raise StateError(
            f"harvest state {path} is corrupt ({exc}); rerun with --baseline to start over"
        ) from None
    return state


def save_state(path: str, state: HarvestState) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".state-")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(asdict(state), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def write_metrics(path: str, metrics: HarvestMetrics) -> None:
    names = [f.name for f in fields(HarvestMetrics)]
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=names)
        if new:
            writer.writeheader()
        writer.writerow(metrics.csv_row())


def _datestamp_arg(value: str) -> str:
    try:
        parse_datestamp(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD or YYYY-MM-DDThh:mm:ssZ, got {value!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="harvest", description="OAI-PMH harvester")
    sub = parser.add_subparsers(dest="mode", required=True)
    for name, help_ in (("identifiers", "list identifiers (URLs)"), ("records", "mirror DIDL records")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--base-url", required=True, help="OAI-PMH endpoint URL")
        p.add_argument("--from", dest="from_", type=_datestamp_arg)
        p.add_argument("--until", type=_datestamp_arg)
        p.add_argument("--set", dest="set_spec")
        p.add_argument("--page-hint", type=int, help="expected page size, only used to log the expected request count")
        p.add_argument("--mirror", help="mirror directory (records mode)")
        p.add_argument("--url-prefix", help="URL that maps to the mirror root (default: endpoint parent)")
        p.add_argument("--state", help="harvest state file for incremental runs")
        p.add_argument("--baseline", action="store_true", help="ignore saved state and harvest everything")
        p.add_argument("--metrics", help="append a CSV metrics row to this file")
        p.add_argument("--concurrency", type=int, default=4, help="parallel by-reference fetches")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    prefix = "oai_didl" if args.mode == "records" else "oai_dc"
    if args.mode == "records" and not args.mirror:
        print("harvest records: --mirror is required", file=sys.stderr)
        return 2

    from_ = args.from_
    if args.state and not args.baseline:
        try:
            state = load_state(args.state)
        except StateError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        if state is not None and from_ is None:
            from_ = state.last_response_date
            log.info("incremental harvest from %s", from_)

    try:
        if args.mode == "identifiers":
            urls, metrics, response_date = harvest_identifiers(
                args.base_url, from_, args.until, args.set_spec
            )
            sys.stdout.write("".join(u + "\n" for u in urls))
            count, failed = len(urls), False
        else:
            result = harvest_records(
                args.base_url, from_, args.mirror,
                until=args.until, set_spec=args.set_spec,
                url_prefix=args.url_prefix, concurrency=args.concurrency,
            )
            for err in result.errors:
                print(f"error: {err}", file=sys.stderr)
            metrics, response_date = result.metrics, result.response_date
            count, failed = len(result.identifiers), bool(result.errors)
    except HarvestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3

    if args.page_hint:
        expected = -(-count // args.page_hint) if count else 1
        log.info("%d records; expected about %d list requests at page size %d", count, expected, args.page_hint)
    if args.metrics:
        write_metrics(args.metrics, metrics)
    if args.state and not failed:
        save_state(args.state, HarvestState(
            base_url=args.base_url,
            last_successful_from=from_,
            last_response_date=response_date or format_datestamp(utcnow()),
            records_seen=count,
            format=prefix,
        ))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
