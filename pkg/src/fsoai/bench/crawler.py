"""A wget-style recursive mirroring crawler.

Behaviour follows ``wget -r --no-parent -N --exclude-directories=/oai``:
recursion over links found in HTML (downloaded or already mirrored),
never above the start directory, and with timestamping a HEAD per known
URL followed by a GET only when the remote copy is newer or differs in size.
"""

from __future__ import annotations

import os
import time
from collections import deque
from dataclasses import dataclass, field
from html.parser import HTMLParser
from urllib.parse import urldefrag, urljoin

import requests

from ..harvester import mirror_path, write_file
from ..timeutil import parse_http_date, to_timestamp

HTML_EXTENSIONS = (".html", ".htm")


class _LinkParser(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.links: list[str] = []

    def handle_starttag(self, tag, attrs):
        for name, value in attrs:
            if name in ("href", "src") and value:
                self.links.append(value)


def extract_links(html_bytes: bytes, page_url: str) -> list[str]:
    parser = _LinkParser()
    parser.feed(html_bytes.decode("utf-8", "replace"))
    parser.close()
    out = []
    for link in parser.links:
        absolute, _ = urldefrag(urljoin(page_url, link))
        out.append(absolute.split("?", 1)[0])
    return out


@dataclass
class CrawlResult:
    requests_head: int = 0
    requests_get: int = 0
    bytes: int = 0
    files_transferred: int = 0
    transferred: list[str] = field(default_factory=list)
    visited: list[str] = field(default_factory=list)


class Crawler:
    def __init__(
        self,
        start_url: str,
        mirror_dir: str,
        *,
        timestamping: bool = True,
        exclude_paths: tuple[str, ...] = ("/oai",),
        session: requests.Session | None = None,
        timeout: float = 30.0,
    ):
        # --no-parent: nothing above the directory of the start URL
        self.scope = start_url if start_url.endswith("/") else start_url.rsplit("/", 1)[0] + "/"
        self.mirror_dir = mirror_dir
        self.timestamping = timestamping
        self.exclude = tuple(self.scope.rstrip("/") + "/" + p.strip("/") for p in exclude_paths)
        self.session = session or requests.Session()
        self.timeout = timeout

    def in_scope(self, url: str) -> bool:
        if not url.startswith(self.scope):
            return False
        return not any(url == ex or url.startswith(ex + "/") for ex in self.exclude)

    def local_path(self, url: str) -> str | None:
        if url.endswith("/"):
            url += "index.html"
        return mirror_path(self.mirror_dir, url, self.scope)

    def crawl(self, seeds: list[str]) -> CrawlResult:
        result = CrawlResult()
        queue = deque()
        seen = set()
        for url in seeds:
            if url not in seen and self.in_scope(url):
                seen.add(url)
                queue.append(url)

        while queue:
            url = queue.popleft()
            result.visited.append(url)
            local = self.local_path(url)
            if local is None:
                continue
            for link in self._visit(url, local, result):
                if link not in seen and self.in_scope(link):
                    seen.add(link)
                    queue.append(link)
        return result

    def _visit(self, url: str, local: str, result: CrawlResult) -> list[str]:
        """Fetch ``url`` if needed and return the links it leads to."""
        need_get = True
        if self.timestamping and os.path.isfile(local):
            resp = self.session.head(url, timeout=self.timeout, allow_redirects=False)
            result.requests_head += 1
            if resp.status_code != 200:
                return []
            remote = parse_http_date(resp.headers.get("Last-Modified", ""))
            st = os.stat(local)
            size = resp.headers.get("Content-Length")
            newer = remote is None or to_timestamp(remote) > int(st.st_mtime)
            need_get = newer or (size is not None and int(size) != st.st_size)

        if need_get:
            resp = self.session.get(url, timeout=self.timeout, allow_redirects=False)
            result.requests_get += 1
            result.bytes += len(resp.content)
            if resp.status_code in (301, 302, 303, 307, 308) and "Location" in resp.headers:
                return [urldefrag(urljoin(url, resp.headers["Location"]))[0]]
            if resp.status_code != 200:
                return []
            remote = parse_http_date(resp.headers.get("Last-Modified", ""))
            write_file(local, resp.content, to_timestamp(remote) if remote else int(time.time()))
            result.files_transferred += 1
            result.transferred.append(url)
            is_html = resp.headers.get("Content-Type", "").startswith("text/html")
            return extract_links(resp.content, url) if is_html else []

        # not re-downloaded: recurse through the mirrored copy, as wget -N does
        if local.lower().endswith(HTML_EXTENSIONS):
            with open(local, "rb") as fh:
                return extract_links(fh.read(), url)
        return []
