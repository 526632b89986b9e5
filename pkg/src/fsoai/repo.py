"""Filesystem scanning: turn a document root into an immutable, ordered record index.

A web server maps URLs onto files; this module goes the other way and derives
one URL per harvestable file.  Dynamic sources (.php, .cgi, ...) are never
exported, and files whose natural URL is claimed by an entry of the alias
table are kept but flagged as shadowed.
"""

from __future__ import annotations

import fnmatch
import hashlib
import logging
import os
import posixpath
import re
from dataclasses import dataclass, field
from datetime import datetime
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence
from urllib.parse import quote, unquote, urlsplit

from .timeutil import EPOCH, format_datestamp, from_timestamp, utcnow

log = logging.getLogger(__name__)

DEFAULT_EXCLUDED_EXTENSIONS = (".php", ".cgi", ".shtml", ".jsp")
DEFAULT_EXCLUDED_PATTERNS = ("oai", "oai/*")
FALLBACK_MEDIA_TYPE = "application/octet-stream"
SET_ROOT = "mime"

_SETSPEC_RE = re.compile(r"^[A-Za-z0-9\-_.!~*'()]+(:[A-Za-z0-9\-_.!~*'()]+)*$")

# Bundled so results do not depend on the host's mime.types.
MEDIA_TYPES = {
    ".html": "text/html",
    ".htm": "text/html",
    ".txt": "text/plain",
    ".text": "text/plain",
    ".css": "text/css",
    ".csv": "text/csv",
    ".xml": "application/xml",
    ".xsd": "application/xml",
    ".json": "application/json",
    ".js": "application/javascript",
    ".pdf": "application/pdf",
    ".ps": "application/postscript",
    ".zip": "application/zip",
    ".gz": "application/gzip",
    ".tar": "application/x-tar",
    ".doc": "application/msword",
    ".rtf": "application/rtf",
    ".bin": "application/octet-stream",
    ".png": "image/png",
    ".gif": "image/gif",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".svg": "image/svg+xml",
    ".ico": "image/vnd.microsoft.icon",
    ".tif": "image/tiff",
    ".tiff": "image/tiff",
    ".mp3": "audio/mpeg",
    ".wav": "audio/wav",
    ".mp4": "video/mp4",
    ".mpg": "video/mpeg",
    ".mov": "video/quicktime",
}


class ConfigurationError(Exception):
    """Raised when a document root cannot be scanned at all."""


def _normalize_extension(ext: str) -> str:
    ext = ext.strip().lower()
    return ext if ext.startswith(".") else "." + ext


def _normalize_prefix(prefix: str) -> str:
    prefix = "/" + prefix.strip().strip("/")
    return prefix


@dataclass(frozen=True)
class DocRootConfig:
    root_path: str
    base_url: str
    excluded_extensions: tuple[str, ...] = DEFAULT_EXCLUDED_EXTENSIONS
    excluded_path_patterns: tuple[str, ...] = DEFAULT_EXCLUDED_PATTERNS
    alias_table: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "base_url", self.base_url.rstrip("/"))
        object.__setattr__(
            self,
            "excluded_extensions",
            tuple(_normalize_extension(e) for e in self.excluded_extensions),
        )
        object.__setattr__(self, "excluded_path_patterns", tuple(self.excluded_path_patterns))
        object.__setattr__(
            self,
            "alias_table",
            tuple((_normalize_prefix(p), str(d)) for p, d in self.alias_table),
        )

    @property
    def base_path(self) -> str:
        """URL path component of base_url, without trailing slash ("" at the host root)."""
        return urlsplit(self.base_url).path.rstrip("/")

    def is_excluded(self, rel_path: str) -> bool:
        lower = rel_path.lower()
        if any(lower.endswith(ext) for ext in self.excluded_extensions):
            return True
        return any(fnmatch.fnmatchcase(rel_path, pat) for pat in self.excluded_path_patterns)

    def alias_for(self, url_path: str) -> tuple[str, str] | None:
        """Longest alias prefix claiming ``url_path`` (a path relative to base_url)."""
        best = None
        for prefix, target in self.alias_table:
            if url_path == prefix or url_path.startswith(prefix.rstrip("/") + "/"):
                if best is None or len(prefix) > len(best[0]):
                    best = (prefix, target)
        return best


@dataclass(frozen=True)
class ResourceRecord:
    url: str
    rel_path: str
    datestamp: datetime
    media_type: str
    size_bytes: int
    digest: str
    shadowed: bool = False

    @property
    def identifier(self) -> str:
        return self.url

    @property
    def datestamp_str(self) -> str:
        return format_datestamp(self.datestamp)

    @property
    def set_spec(self) -> str:
        return set_spec_of(self.media_type)


@dataclass(frozen=True)
class RepositorySnapshot:
    snapshot_id: str
    created_at: datetime
    records: tuple[ResourceRecord, ...]
    earliest_datestamp: datetime
    set_index: Mapping[str, tuple[int, ...]]
    root_path: str = ""
    _by_url: Mapping[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def get(self, url: str) -> ResourceRecord | None:
        pos = self._by_url.get(url)
        return None if pos is None else self.records[pos]

    def content_path(self, rec: ResourceRecord) -> str:
        return os.path.join(self.root_path, *rec.rel_path.split("/"))

    def read_content(self, rec: ResourceRecord) -> bytes:
        with open(self.content_path(rec), "rb") as fh:
            return fh.read()

    def set_specs(self) -> list[str]:
        return sorted(self.set_index)


def media_type_of(rel_path: str) -> str:
    ext = posixpath.splitext(rel_path)[1].lower()
    return MEDIA_TYPES.get(ext, FALLBACK_MEDIA_TYPE)


def set_spec_of(media_type: str) -> str:
    parts = media_type.split("/")
    if len(parts) != 2 or not all(parts):
        return set_spec_of(FALLBACK_MEDIA_TYPE)
    spec = ":".join([SET_ROOT, parts[0].lower(), parts[1].lower()])
    # setSpec tokens are restricted to URL unreserved characters
    spec = re.sub(r"[^A-Za-z0-9\-_.!~*'():]", "-", spec)
    return spec


def set_ancestors(set_spec: str) -> list[str]:
    """"mime:text:html" -> ["mime", "mime:text", "mime:text:html"]."""
    parts = set_spec.split(":")
    return [":".join(parts[: i + 1]) for i in range(len(parts))]


def is_valid_set_spec(value: str) -> bool:
    return bool(_SETSPEC_RE.match(value))


def in_set(rec: ResourceRecord, set_spec: str) -> bool:
    own = rec.set_spec
    return own == set_spec or own.startswith(set_spec + ":")


def url_for(config: DocRootConfig, rel_path: str) -> str:
    return config.base_url + "/" + quote(rel_path, safe="/")


def rel_path_for(config: DocRootConfig, url: str) -> str | None:
    """Inverse of url_for; None when ``url`` lies outside base_url."""
    prefix = config.base_url + "/"
    if not url.startswith(prefix):
        return None
    return unquote(url[len(prefix):])


def _hash_file(path: str) -> tuple[str, int]:
    h = hashlib.sha256()
    size = 0
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
            size += len(chunk)
    return h.hexdigest(), size


def _inside(path: str, root: str) -> bool:
    return path == root or path.startswith(root.rstrip(os.sep) + os.sep)


def _walk(root: str) -> Iterable[str]:
    """Yield relative posix paths of regular files, confined to ``root``."""
    real_root = os.path.realpath(root)
    seen_dirs = {real_root}
    for dirpath, dirnames, filenames in os.walk(root, followlinks=True):
        keep = []
        for d in sorted(dirnames):
            if d.startswith("."):
                continue
            real = os.path.realpath(os.path.join(dirpath, d))
            if not _inside(real, real_root) or real in seen_dirs:
                continue
            seen_dirs.add(real)
            keep.append(d)
        dirnames[:] = keep
        for name in sorted(filenames):
            if name.startswith("."):
                continue
            full = os.path.join(dirpath, name)
            real = os.path.realpath(full)
            if not _inside(real, real_root):
                log.debug("skipping link outside root: %s", full)
                continue
            if not os.path.isfile(full):
                continue
            rel = os.path.relpath(full, root)
            yield rel.replace(os.sep, "/")


def compute_snapshot_id(records: Sequence[ResourceRecord]) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(f"{rec.url}\t{rec.datestamp_str}\t{rec.size_bytes}\n".encode("utf-8"))
    return h.hexdigest()[:32]


def build_snapshot(records: Iterable[ResourceRecord], root_path: str = "") -> RepositorySnapshot:
    ordered = tuple(sorted(records, key=lambda r: (r.datestamp, r.url)))
    set_index: dict[str, list[int]] = {}
    by_url: dict[str, int] = {}
    for pos, rec in enumerate(ordered):
        for spec in set_ancestors(rec.set_spec):
            set_index.setdefault(spec, []).append(pos)
        by_url.setdefault(rec.url, pos)
    earliest = ordered[0].datestamp if ordered else EPOCH
    return RepositorySnapshot(
        snapshot_id=compute_snapshot_id(ordered),
        created_at=utcnow(),
        records=ordered,
        earliest_datestamp=earliest,
        set_index=MappingProxyType({k: tuple(v) for k, v in set_index.items()}),
        root_path=root_path,
        _by_url=MappingProxyType(by_url),
    )


def scan(config: DocRootConfig) -> RepositorySnapshot:
    root = config.root_path
    if not os.path.isdir(root) or not os.access(root, os.R_OK | os.X_OK):
        raise ConfigurationError(f"document root is not a readable directory: {root}")

    records = []
    for rel in _walk(root):
        if config.is_excluded(rel):
            continue
        full = os.path.join(root, *rel.split("/"))
        try:
            st = os.stat(full)
            digest, size = _hash_file(full)
        except OSError as exc:
            log.warning("omitting unreadable file %s: %s", rel, exc)
            continue
        records.append(
            ResourceRecord(
                url=url_for(config, rel),
                rel_path=rel,
                datestamp=from_timestamp(st.st_mtime),
                media_type=media_type_of(rel),
                size_bytes=size,
                digest=digest,
                shadowed=config.alias_for("/" + rel) is not None,
            )
        )
    return build_snapshot(records, root_path=root)


def filter_records(
    snap: RepositorySnapshot,
    from_: datetime | None = None,
    until: datetime | None = None,
    set_spec: str | None = None,
) -> list[ResourceRecord]:
    """Records with from <= datestamp <= until (inclusive) in set_spec, snapshot order kept."""
    if set_spec is not None:
        positions = snap.set_index.get(set_spec, ())
        candidates: Iterable[ResourceRecord] = (snap.records[p] for p in positions)
    else:
        candidates = snap.records
    out = []
    for rec in candidates:
        if from_ is not None and rec.datestamp < from_:
            continue
        if until is not None and rec.datestamp > until:
            continue
        out.append(rec)
    return out
