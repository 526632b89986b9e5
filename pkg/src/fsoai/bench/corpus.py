"""Synthetic web-site corpora with controllable link reachability.

Every non-orphan file hangs off a spanning tree of HTML pages rooted at
``index.html``; orphans exist on disk but nothing links to them, which is
what makes an index-seeded crawl see less than a file listing does.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import posixpath
import random
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

from ..timeutil import format_datestamp, parse_datestamp, to_timestamp

BASELINE_MTIME = datetime(2000, 1, 1, tzinfo=timezone.utc)
TOUCH_MTIME = datetime(2002, 1, 1, tzinfo=timezone.utc)

_OTHER_EXTENSIONS = (".txt", ".css", ".js", ".xml", ".png", ".jpg", ".pdf", ".bin")
_TEXT_EXTENSIONS = {".txt", ".css", ".js", ".xml"}
_WORDS = (
    "archive harvest crawler repository metadata record protocol server file index "
    "update resource digital library object identifier datestamp token page link"
).split()


class CorpusError(Exception):
    pass


@dataclass(frozen=True)
class CorpusSpec:
    file_count: int
    html_fraction: float = 0.3
    max_depth: int = 3
    size_distribution: tuple[int, int, str] = (256, 8192, "uniform")
    link_fanout: int = 8
    seed: int = 0
    baseline_mtime: datetime = BASELINE_MTIME
    orphan_fraction: float = 0.0
    # share of files given a dynamic (.php) extension; always unlinked
    dynamic_fraction: float = 0.0

    def __post_init__(self):
        if self.file_count < 1:
            raise CorpusError("file_count must be positive")
        for name in ("html_fraction", "orphan_fraction", "dynamic_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise CorpusError(f"{name} must lie in [0, 1]")
        if self.max_depth < 1 or self.link_fanout < 1:
            raise CorpusError("max_depth and link_fanout must be positive")
        lo, hi, dist = self.size_distribution
        if not 0 <= lo <= hi or dist not in ("uniform", "lognormal", "fixed"):
            raise CorpusError(f"bad size_distribution {self.size_distribution!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["baseline_mtime"] = format_datestamp(self.baseline_mtime)
        d["size_distribution"] = list(self.size_distribution)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CorpusSpec":
        d = dict(d)
        d["baseline_mtime"] = parse_datestamp(d["baseline_mtime"])
        d["size_distribution"] = tuple(d["size_distribution"])
        return cls(**d)


@dataclass
class ManifestEntry:
    path: str
    size: int
    mtime: str
    digest: str
    kind: str  # html | other | dynamic
    orphan: bool


@dataclass
class Manifest:
    root: str
    spec: CorpusSpec
    files: list[ManifestEntry] = field(default_factory=list)

    def paths(self) -> list[str]:
        return [f.path for f in self.files]

    def orphans(self) -> list[str]:
        return [f.path for f in self.files if f.orphan]

    def reachable(self) -> list[str]:
        return [f.path for f in self.files if not f.orphan]

    def save(self, path: str) -> None:
        data = {"root": self.root, "spec": self.spec.to_json(), "files": [asdict(f) for f in self.files]}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "Manifest":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(
            root=data["root"],
            spec=CorpusSpec.from_json(data["spec"]),
            files=[ManifestEntry(**f) for f in data["files"]],
        )


def _size(rng: random.Random, spec: CorpusSpec) -> int:
    lo, hi, dist = spec.size_distribution
    if dist == "fixed" or lo == hi:
        return lo
    if dist == "uniform":
        return rng.randint(lo, hi)
    mu = (math.log(max(lo, 1)) + math.log(max(hi, 1))) / 2
    return int(min(hi, max(lo, round(rng.lognormvariate(mu, 1.0)))))


def _filler(rng: random.Random, n: int) -> str:
    words = []
    total = 0
    while total < n:
        w = rng.choice(_WORDS)
        words.append(w)
        total += len(w) + 1
    return " ".join(words)[:n]


def _html(rng: random.Random, title: str, links: list[tuple[str, str]], size: int) -> bytes:
    items = "".join(f'<li><a href="{href}">{text}</a></li>\n' for href, text in links)
    head = f"<!DOCTYPE html>\n<html><head><title>{title}</title></head><body>\n<h1>{title}</h1>\n<ul>\n{items}</ul>\n<p>"
    tail = "</p>\n</body></html>\n"
    pad = max(0, size - len(head) - len(tail))
    return (head + _filler(rng, pad) + tail).encode("ascii")


def _other(rng: random.Random, ext: str, size: int) -> bytes:
    if ext in _TEXT_EXTENSIONS:
        return _filler(rng, size).encode("ascii")
    return rng.randbytes(size)


def _relative_href(from_path: str, to_path: str) -> str:
    return posixpath.relpath(to_path, posixpath.dirname(from_path) or ".")


def generate_corpus(spec: CorpusSpec, out_dir: str) -> Manifest:
    if os.path.exists(out_dir) and os.listdir(out_dir):
        raise CorpusError(f"refusing to generate into non-empty directory {out_dir}")
    os.makedirs(out_dir, exist_ok=True)
    rng = random.Random(spec.seed)
    n = spec.file_count

    # file 0 is index.html; the rest get a directory, a kind and an extension
    others = list(range(1, n))
    rng.shuffle(others)
    n_dynamic = min(len(others), round(spec.dynamic_fraction * n))
    n_orphan = min(len(others), max(n_dynamic, round(spec.orphan_fraction * n)))
    dynamic = set(others[:n_dynamic])
    orphan = set(others[:n_orphan])

    kinds = {0: "html"}
    for i in range(1, n):
        if i in dynamic:
            kinds[i] = "dynamic"
        else:
            kinds[i] = "html" if rng.random() < spec.html_fraction else "other"

    linked = [i for i in range(n) if i not in orphan]
    fanout = spec.link_fanout
    # enough HTML pages must exist among linked files to host the spanning tree
    n_html = sum(1 for i in linked[1:] if kinds[i] == "html")
    for i in linked[1:]:
        if fanout * (1 + n_html) >= len(linked) - 1:
            break
        if kinds[i] == "other":
            kinds[i] = "html"
            n_html += 1

    paths = {}
    for i in range(n):
        if i == 0:
            paths[i] = "index.html"
            continue
        depth = rng.randrange(spec.max_depth)
        dirs = [f"d{rng.randrange(4)}" for _ in range(depth)]
        ext = {"html": ".html", "dynamic": ".php"}.get(kinds[i]) or rng.choice(_OTHER_EXTENSIONS)
        paths[i] = posixpath.join(*dirs, f"f{i:05d}{ext}")

    children: dict[int, list[int]] = {i: [] for i in range(n) if kinds[i] == "html"}
    order = [0] + [i for i in linked[1:] if kinds[i] == "html"] + [i for i in linked[1:] if kinds[i] != "html"]
    capacity = {0: fanout}
    for i in order[1:]:
        parent = rng.choice(sorted(p for p, c in capacity.items() if c > 0))
        capacity[parent] -= 1
        children[parent].append(i)
        if kinds[i] == "html":
            capacity[i] = fanout

    link_targets = [i for i in linked if kinds[i] != "dynamic"]
    manifest = Manifest(root=os.path.abspath(out_dir), spec=spec)
    stamp = to_timestamp(spec.baseline_mtime)
    for i in range(n):
        size = _size(rng, spec)
        if kinds[i] == "html":
            targets = list(children[i])
            for _ in range(rng.randint(0, 2)):
                targets.append(rng.choice(link_targets))
            links = [(_relative_href(paths[i], paths[t]), posixpath.basename(paths[t])) for t in targets]
            data = _html(rng, posixpath.basename(paths[i]), links, size)
        elif kinds[i] == "dynamic":
            data = b"<?php\n$db_password = 'not-for-export';\n?>\n" + _filler(rng, size).encode("ascii")
        else:
            data = _other(rng, posixpath.splitext(paths[i])[1], size)
        full = os.path.join(out_dir, *paths[i].split("/"))
        os.makedirs(os.path.dirname(full), exist_ok=True)
        with open(full, "wb") as fh:
            fh.write(data)
        os.utime(full, (stamp, stamp))
        manifest.files.append(ManifestEntry(
            path=paths[i],
            size=len(data),
            mtime=format_datestamp(spec.baseline_mtime),
            digest=hashlib.sha256(data).hexdigest(),
            kind=kinds[i],
            orphan=i in orphan,
        ))
    manifest.files.sort(key=lambda f: f.path)
    return manifest


def touch_fraction(manifest: Manifest, fraction: float, new_mtime: datetime, seed: int) -> list[str]:
    """Set the mtime of round(fraction * N) randomly chosen files; contents untouched."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    if new_mtime <= manifest.spec.baseline_mtime:
        raise ValueError("new_mtime must be later than the corpus baseline mtime")
    count = round(fraction * len(manifest.files))
    rng = random.Random(seed)
    chosen = sorted(rng.sample(sorted(manifest.paths()), count))
    stamp = to_timestamp(new_mtime)
    by_path = {f.path: f for f in manifest.files}
    for path in chosen:
        os.utime(os.path.join(manifest.root, *path.split("/")), (stamp, stamp))
        by_path[path].mtime = format_datestamp(new_mtime)
    return chosen
