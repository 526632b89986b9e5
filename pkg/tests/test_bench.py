from __future__ import annotations

import math
import os
import re
from collections import deque

import pytest

from fsoai.bench.cli import main as bench_main
from fsoai.bench.corpus import (
    TOUCH_MTIME,
    CorpusError,
    CorpusSpec,
    Manifest,
    generate_corpus,
    touch_fraction,
)
from fsoai.bench.crawler import extract_links
from fsoai.bench.report import COLUMNS, RunReport, emit_report, read_csv, summary, write_csv
from fsoai.bench.runner import (
    InProcessService,
    LogCounts,
    ReconciliationError,
    count_log,
    reconcile,
    run_crawl,
    run_harvest,
    sweep_page_sizes,
)
from fsoai.harvester import harvest_identifiers
from fsoai.timeutil import to_timestamp

HREF = re.compile(rb'href="([^"]+)"')


def _reachable(root: str) -> set[str]:
    """Independent oracle: BFS over href attributes from index.html."""
    seen, queue = {"index.html"}, deque(["index.html"])
    while queue:
        page = queue.popleft()
        if not page.endswith(".html"):
            continue
        with open(os.path.join(root, page), "rb") as fh:
            for href in HREF.findall(fh.read()):
                target = os.path.normpath(os.path.join(os.path.dirname(page), href.decode())).replace(os.sep, "/")
                if target not in seen and os.path.isfile(os.path.join(root, target)):
                    seen.add(target)
                    queue.append(target)
    return seen


def _files(root: str) -> dict[str, bytes]:
    out = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            full = os.path.join(dirpath, name)
            with open(full, "rb") as fh:
                out[os.path.relpath(full, root).replace(os.sep, "/")] = fh.read()
    return out


# corpus

def test_corpus_fully_reachable_without_orphans(tmp_path):
    manifest = generate_corpus(CorpusSpec(file_count=1000, seed=4), str(tmp_path))
    assert len(manifest.files) == 1000
    assert _reachable(str(tmp_path)) == set(manifest.paths())


def test_corpus_orphans_match_reachability(tmp_path):
    manifest = generate_corpus(CorpusSpec(file_count=1000, seed=1, orphan_fraction=0.88), str(tmp_path))
    reachable = _reachable(str(tmp_path))
    assert reachable == set(manifest.reachable())
    assert set(manifest.orphans()) == set(manifest.paths()) - reachable
    assert abs(len(reachable) / 1000 - 0.12) < 0.01


def test_corpus_is_deterministic(tmp_path):
    spec = CorpusSpec(file_count=150, seed=7, orphan_fraction=0.3, dynamic_fraction=0.05)
    a = generate_corpus(spec, str(tmp_path / "a"))
    b = generate_corpus(spec, str(tmp_path / "b"))
    assert a.files == b.files
    assert _files(str(tmp_path / "a")) == _files(str(tmp_path / "b"))
    c = generate_corpus(CorpusSpec(file_count=150, seed=8), str(tmp_path / "c"))
    assert c.files != a.files


def test_corpus_dynamic_files_are_unlinked(tmp_path):
    manifest = generate_corpus(CorpusSpec(file_count=200, seed=2, dynamic_fraction=0.1), str(tmp_path))
    dynamic = [f for f in manifest.files if f.kind == "dynamic"]
    assert len(dynamic) == 20 and all(f.orphan and f.path.endswith(".php") for f in dynamic)


def test_corpus_manifest_round_trip(tmp_path):
    manifest = generate_corpus(CorpusSpec(file_count=30, seed=3), str(tmp_path / "c"))
    manifest.save(str(tmp_path / "m.json"))
    assert Manifest.load(str(tmp_path / "m.json")) == manifest


def test_corpus_validation(tmp_path):
    with pytest.raises(CorpusError):
        CorpusSpec(file_count=0)
    with pytest.raises(CorpusError):
        CorpusSpec(file_count=5, orphan_fraction=1.5)
    (tmp_path / "x").write_text("occupied")
    with pytest.raises(CorpusError):
        generate_corpus(CorpusSpec(file_count=5), str(tmp_path))


@pytest.mark.parametrize("fraction,expected", [(0.0, 0), (0.25, 250), (1.0, 1000)])
def test_touch_fraction(tmp_path, fraction, expected):
    manifest = generate_corpus(CorpusSpec(file_count=1000, seed=0, size_distribution=(1, 16, "uniform")),
                               str(tmp_path))
    touched = touch_fraction(manifest, fraction, TOUCH_MTIME, seed=5)
    assert len(touched) == len(set(touched)) == expected
    stamp = to_timestamp(TOUCH_MTIME)
    newer = {p for p in manifest.paths() if int(os.stat(os.path.join(str(tmp_path), p)).st_mtime) == stamp}
    assert newer == set(touched)
    with pytest.raises(ValueError):
        touch_fraction(manifest, 0.5, manifest.spec.baseline_mtime, seed=0)


# crawler and runs

def test_extract_links():
    html = b'<a href="b.html#top">b</a><img src="../i.png"><a href="?q=1">q</a><a>none</a>'
    assert extract_links(html, "http://h/d/a.html") == ["http://h/d/b.html", "http://h/i.png", "http://h/d/a.html"]


@pytest.fixture
def corpus(tmp_path):
    manifest = generate_corpus(CorpusSpec(file_count=120, seed=11, orphan_fraction=0.5), str(tmp_path / "docroot"))
    return manifest


def test_crawl_counts(tmp_path, corpus):
    mirror = str(tmp_path / "mirror")
    with InProcessService(corpus.root, str(tmp_path / "svc")) as svc:
        base = run_crawl(svc, "manifest", mirror, manifest=corpus)
        assert (base.requests_head, base.requests_get, base.files_transferred) == (0, 120, 120)
        nothing = run_crawl(svc, "manifest", mirror, manifest=corpus, phase="update")
        assert (nothing.requests_head, nothing.requests_get, nothing.files_transferred) == (120, 0, 0)
    assert _files(mirror) == _files(corpus.root)

    touched = touch_fraction(corpus, 0.25, TOUCH_MTIME, seed=1)
    with InProcessService(corpus.root, str(tmp_path / "svc2")) as svc:
        upd = run_crawl(svc, "manifest", mirror, manifest=corpus, phase="update")
    assert (upd.requests_head, upd.requests_get) == (120, 30)
    assert sorted(upd.details["transferred"]) == sorted(svc.base_url + "/" + p for p in touched)


def test_index_seeded_crawl_sees_reachable_set(tmp_path, corpus):
    with InProcessService(corpus.root, str(tmp_path / "svc")) as svc:
        report = run_crawl(svc, "index", str(tmp_path / "mirror"))
        urls, _, _ = harvest_identifiers(svc.endpoint_url)
    crawled = {u[len(svc.base_url) + 1:] for u in report.details["transferred"]}
    assert crawled == set(corpus.reachable())
    harvested = {u[len(svc.base_url) + 1:] for u in urls}
    assert harvested - crawled == set(corpus.orphans())


def test_harvest_counts(tmp_path, corpus):
    with InProcessService(corpus.root, str(tmp_path / "svc"), page_size_identifiers=50,
                          page_size_records=25, byvalue_threshold=4096) as svc:
        ids = run_harvest(svc, "ListIdentifiers", page_size=50)
        recs = run_harvest(svc, "ListRecords", mirror_dir=str(tmp_path / "mirror"))
        with pytest.raises(ValueError):
            run_harvest(svc, "ListIdentifiers", page_size=7)
    assert ids.requests_oai == math.ceil(120 / 50) and ids.requests_get == 0
    assert recs.requests_oai == math.ceil(120 / 25)
    assert recs.requests_get == sum(1 for f in corpus.files if f.size > 4096)
    assert set(ids.details["identifiers"]) == set(recs.details["identifiers"])
    assert _files(str(tmp_path / "mirror")) == _files(corpus.root)


def test_reconcile_detects_mismatch():
    report = RunReport(tool="crawler", phase="baseline", requests_get=2, bytes=10)
    entries = [("GET", "/a", 200, 4), ("GET", "/b", 200, 6), ("GET", "/oai?verb=Identify", 200, 0)]
    counts = count_log(entries, "/oai")
    assert counts == LogCounts(head=0, get=2, oai=1, bytes=10)
    with pytest.raises(ReconciliationError, match="requests_oai"):
        reconcile(report, counts)
    report.requests_oai = 1
    reconcile(report, counts)


def test_sweep_counts(tmp_path):
    manifest = generate_corpus(CorpusSpec(file_count=100, seed=2), str(tmp_path / "docroot"))
    sizes = [1, 10, 50, 100]
    ids = sweep_page_sizes(manifest.root, "ListIdentifiers", sizes, str(tmp_path / "w"), repeats=2,
                           service_cls=InProcessService)
    assert [r.requests_oai for r in ids] == [math.ceil(100 / s) for s in sizes]
    assert all(r.phase == "sweep" and len(r.details["wall_times"]) == 2 for r in ids)
    recs = sweep_page_sizes(manifest.root, "ListRecords", sizes, str(tmp_path / "w2"), repeats=1,
                            service_cls=InProcessService)
    assert recs[-1].requests_oai == 1
    mean = sum(r.bytes for r in recs) / len(recs)
    assert all(abs(r.bytes - mean) / mean < 0.10 for r in recs), [r.bytes for r in recs]


# report

def _reports():
    return [
        RunReport("crawler", "baseline", seed_mode="manifest", records=10, requests_get=10, bytes=100,
                  wall_time=1.5, files_transferred=10),
        RunReport("crawler", "update", seed_mode="manifest", records=10, requests_head=10, requests_get=3,
                  bytes=30, wall_time=0.5, files_transferred=3),
        RunReport("harvester", "baseline", verb="ListIdentifiers", page_size=500, records=10, requests_oai=1,
                  bytes=999, wall_time=0.1),
        RunReport("harvester", "update", verb="ListIdentifiers", page_size=500, records=3, requests_oai=1,
                  bytes=333, wall_time=0.05),
        RunReport("harvester", "sweep", verb="ListRecords", page_size=50, records=10, requests_oai=1,
                  bytes=4000, wall_time=0.2),
    ]


def test_report_csv_round_trip(tmp_path):
    path = str(tmp_path / "r.csv")
    write_csv(_reports(), path)
    assert read_csv(path) == _reports()
    assert open(path).readline().strip().split(",") == list(COLUMNS)


def test_report_empty(tmp_path):
    path = str(tmp_path / "r.csv")
    assert emit_report([], path) == ""
    assert open(path).read().strip() == ",".join(COLUMNS)


def test_report_summary_grid():
    text = summary(_reports())
    lines = text.splitlines()
    assert lines[0] == "Requests by tool and phase"
    assert "crawler/manifest" in lines[1] and "harvester/ListIdentifiers" in lines[1]
    assert lines[2].startswith("baseline") and lines[3].startswith("update")
    assert "10 HEAD + 3 GET" in lines[3]
    assert "Page-size sweep" in text


def test_cli_gen_touch_report(tmp_path, capsys):
    out = str(tmp_path / "corpus")
    assert bench_main(["gen", "--out", out, "--files", "40", "--seed", "3"]) == 0
    manifest_path = out + ".manifest.json"
    assert len(Manifest.load(manifest_path).files) == 40
    capsys.readouterr()
    assert bench_main(["touch", "--manifest", manifest_path, "--fraction", "0.25"]) == 0
    assert len(capsys.readouterr().out.split()) == 10
    assert sum(f.mtime.startswith("2002") for f in Manifest.load(manifest_path).files) == 10
    write_csv(_reports(), str(tmp_path / "a.csv"))
    assert bench_main(["report", str(tmp_path / "a.csv"), "--out", str(tmp_path / "all.csv")]) == 0
    assert len(read_csv(str(tmp_path / "all.csv"))) == 5
    assert (tmp_path / "all.txt").read_text().startswith("Requests by tool and phase")
