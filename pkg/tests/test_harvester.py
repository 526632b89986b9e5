from __future__ import annotations

import filecmp
import json
import os
import random
import subprocess
import sys
import threading

import pytest
import requests

from fsoai.harvester import (
    HarvestMetrics,
    HarvestState,
    OaiClient,
    StaleRepositoryError,
    StateError,
    harvest_identifiers,
    harvest_records,
    load_state,
    main,
    mirror_path,
    parse_page,
    save_state,
    write_metrics,
)

from .conftest import Y2002, touch, write_tree


def _corpus(root, n=40, seed=0, big_every=0):
    rng = random.Random(seed)
    files = {}
    for i in range(n):
        size = 5000 if big_every and i % big_every == 0 else rng.randint(0, 600)
        files[f"d{i % 4}/f{i:03d}.{rng.choice(['txt', 'html', 'bin'])}"] = rng.randbytes(size)
    write_tree(root, files)
    return files


def _tree(root):
    out = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            full = os.path.join(dirpath, name)
            out[os.path.relpath(full, root).replace(os.sep, "/")] = full
    return out


def test_identifiers_match_scan(tmp_path, serve_dir):
    _corpus(tmp_path, 200)
    server = serve_dir(tmp_path, page_size_identifiers=30)
    urls, metrics, first_date = harvest_identifiers(server.endpoint_url)
    assert urls == [r.url for r in server.service.snapshot.records]
    assert metrics.http_requests == 7 and metrics.pages == 7 and metrics.records_received == 200
    assert first_date and first_date.endswith("Z")


def test_identifiers_selective(tmp_path, serve_dir):
    files = _corpus(tmp_path, 100)
    touched = sorted(random.Random(3).sample(sorted(files), 25))
    for rel in touched:
        touch(tmp_path / rel, Y2002)
    server = serve_dir(tmp_path)
    urls, _, _ = harvest_identifiers(server.endpoint_url, from_="2001-01-01")
    assert sorted(urls) == sorted(server.base_url + "/" + rel for rel in touched)
    urls, _, _ = harvest_identifiers(server.endpoint_url, until="2001-01-01")
    assert len(urls) == 75
    urls, _, _ = harvest_identifiers(server.endpoint_url, set_spec="mime:text")
    assert urls and all(u.endswith((".txt", ".html")) for u in urls)


def test_empty_repository(tmp_path, serve_dir, capsys):
    server = serve_dir(tmp_path)
    urls, metrics, _ = harvest_identifiers(server.endpoint_url)
    assert urls == [] and metrics.records_received == 0 and metrics.http_requests == 1
    assert main(["identifiers", "--base-url", server.endpoint_url]) == 0
    assert capsys.readouterr().out == ""


def test_records_mirror_equals_docroot(tmp_path, serve_dir):
    docroot, mirror = tmp_path / "root", tmp_path / "mirror"
    _corpus(docroot, 60, big_every=7)
    write_tree(docroot, {"hidden.php": b"<?php secret ?>"})
    server = serve_dir(docroot, page_size_records=8, byvalue_threshold=1024)
    result = harvest_records(server.endpoint_url, None, str(mirror))
    assert result.errors == []
    assert result.by_ref_fetches == 9
    expected = {k: v for k, v in _tree(docroot).items() if not k.endswith(".php")}
    got = _tree(mirror)
    assert sorted(got) == sorted(expected)
    for rel in expected:
        assert filecmp.cmp(expected[rel], got[rel], shallow=False), rel
        assert int(os.stat(got[rel]).st_mtime) == int(os.stat(expected[rel]).st_mtime)

    # a second full harvest rewrites nothing
    again = harvest_records(server.endpoint_url, None, str(mirror))
    assert again.updated == [] and again.by_ref_fetches == 0


def test_incremental_rewrites_only_touched(tmp_path, serve_dir):
    docroot, mirror = tmp_path / "root", tmp_path / "mirror"
    files = _corpus(docroot, 80)
    server = serve_dir(docroot)
    harvest_records(server.endpoint_url, None, str(mirror))
    touched = sorted(random.Random(9).sample(sorted(files), 20))
    for rel in touched:
        touch(docroot / rel, Y2002)
    server.service.refresh()
    result = harvest_records(server.endpoint_url, "2001-01-01", str(mirror))
    assert sorted(result.updated) == sorted(str(mirror / rel) for rel in touched)
    assert result.metrics.http_requests == 1
    for rel in touched:
        assert os.stat(mirror / rel).st_mtime == os.stat(docroot / rel).st_mtime


def test_by_ref_only_record_matches_live_get(tmp_path, serve_dir):
    docroot, mirror = tmp_path / "root", tmp_path / "mirror"
    write_tree(docroot, {"big.bin": os.urandom(4096)})
    server = serve_dir(docroot, byvalue_threshold=100)
    result = harvest_records(server.endpoint_url, None, str(mirror))
    assert result.by_ref_fetches == 1
    live = requests.get(server.base_url + "/big.bin", timeout=5).content
    assert (mirror / "big.bin").read_bytes() == live


def test_restart_after_stale_token(tmp_path, serve_dir):
    docroot = tmp_path / "root"
    _corpus(docroot, 30)
    server = serve_dir(docroot, page_size_identifiers=7)
    victim = sorted(p for p in docroot.rglob("*") if p.is_file())[0]
    done = []

    def on_page(page):
        if not done:
            done.append(True)
            touch(victim, Y2002)
            server.service.refresh()

    urls, metrics, _ = harvest_identifiers(server.endpoint_url, on_page=on_page)
    assert sorted(urls) == sorted(r.url for r in server.service.snapshot.records)
    assert len(urls) == len(set(urls)) == 30
    # first chain: 1 page + the rejected token request; second chain: 5 pages
    assert metrics.http_requests == 7


def test_gives_up_when_repository_keeps_changing(tmp_path, serve_dir):
    docroot = tmp_path / "root"
    _corpus(docroot, 30)
    server = serve_dir(docroot, page_size_identifiers=7)
    files = sorted(p for p in docroot.rglob("*") if p.is_file())
    stamps = iter(range(1, 100))

    def on_page(page):
        touch(files[0], Y2002.replace(second=next(stamps)))
        server.service.refresh()

    with pytest.raises(StaleRepositoryError):
        harvest_identifiers(server.endpoint_url, on_page=on_page)


def test_retries_on_503(tmp_path, serve_dir):
    write_tree(tmp_path, {"a.txt": b"a"})
    server = serve_dir(tmp_path, max_inflight=1)
    gate, entered = threading.Event(), threading.Event()
    original = server.service.oai_bytes

    def slow(params):
        entered.set()
        gate.wait(10)
        return original(params)

    server.service.oai_bytes = slow
    blocker = threading.Thread(target=requests.get, args=(server.endpoint_url,),
                               kwargs={"params": {"verb": "Identify"}, "timeout": 10})
    blocker.start()
    assert entered.wait(5)
    threading.Timer(0.3, gate.set).start()
    client = OaiClient(server.endpoint_url, backoff=0.1)
    resp = client.fetch(server.base_url + "/a.txt")
    blocker.join()
    assert resp.status_code == 200 and resp.content == b"a"
    assert client.metrics.http_requests == 2


def test_mirror_path_confinement(tmp_path):
    m = str(tmp_path)
    assert mirror_path(m, "http://h/a/b.txt", "http://h") == os.path.join(m, "a", "b.txt")
    assert mirror_path(m, "http://h/a%20b.txt", "http://h/") == os.path.join(m, "a b.txt")
    for bad in ("http://other/a.txt", "http://h/../x", "http://h/a/%2e%2e/x", "http://h/", "http://h/a%2Fb"):
        assert mirror_path(m, bad, "http://h") is None, bad


def test_parse_page_error():
    xml = (b'<OAI-PMH xmlns="http://www.openarchives.org/OAI/2.0/"><responseDate>2005-01-01T00:00:00Z'
           b'</responseDate><request>x</request><error code="badVerb">nope</error></OAI-PMH>')
    page = parse_page(xml)
    assert page.error == ("badVerb", "nope") and page.response_date == "2005-01-01T00:00:00Z"


# state

def test_state_round_trip(tmp_path):
    path = str(tmp_path / "state.json")
    assert load_state(path) is None
    state = HarvestState("http://h/oai", "2001-01-01", "2005-01-01T00:00:00Z", 12, "oai_didl")
    save_state(path, state)
    assert load_state(path) == state


@pytest.mark.parametrize("content", ['{"base_url": "x"', "[]", '{"base_url": "x"}', ""])
def test_state_corrupt(tmp_path, content):
    path = tmp_path / "state.json"
    path.write_text(content)
    with pytest.raises(StateError, match="--baseline"):
        load_state(str(path))


def test_metrics_csv(tmp_path):
    path = str(tmp_path / "m.csv")
    write_metrics(path, HarvestMetrics(3, 100, 10, 0.5, 2))
    write_metrics(path, HarvestMetrics(1, 10, 0, 0.1, 0))
    lines = open(path).read().splitlines()
    assert lines[0] == "http_requests,bytes_received,records_received,wall_time,pages"
    assert len(lines) == 3


def test_cli_incremental_with_state(tmp_path, serve_dir):
    docroot, mirror = tmp_path / "root", tmp_path / "mirror"
    _corpus(docroot, 20)
    server = serve_dir(docroot)
    state = tmp_path / "state.json"
    cmd = [sys.executable, "-m", "fsoai.harvester", "records", "--base-url", server.endpoint_url,
           "--mirror", str(mirror), "--state", str(state), "--metrics", str(tmp_path / "m.csv")]
    assert subprocess.run(cmd, capture_output=True).returncode == 0
    saved = json.loads(state.read_text())
    assert saved["records_seen"] == 20 and saved["last_response_date"].startswith("20")
    assert len(_tree(mirror)) == 20

    # nothing changed since the saved responseDate: the next run sees no records
    assert subprocess.run(cmd, capture_output=True).returncode == 0
    assert json.loads(state.read_text())["records_seen"] == 0

    state.write_text("{trunc")
    proc = subprocess.run(cmd, capture_output=True, text=True)
    assert proc.returncode == 2 and "--baseline" in proc.stderr
    proc = subprocess.run(cmd + ["--baseline"], capture_output=True, text=True)
    assert proc.returncode == 0


def test_cli_identifiers_and_usage(tmp_path, serve_dir, capsys):
    write_tree(tmp_path, {"a.txt": b"a", "b.txt": b"b"})
    server = serve_dir(tmp_path)
    assert main(["identifiers", "--base-url", server.endpoint_url]) == 0
    assert capsys.readouterr().out.split() == [server.base_url + "/a.txt", server.base_url + "/b.txt"]
    assert main(["records", "--base-url", server.endpoint_url]) == 2
    with pytest.raises(SystemExit):
        main(["identifiers", "--base-url", server.endpoint_url, "--from", "yesterday"])
    assert main(["identifiers", "--base-url", server.base_url + "/nothing-here"]) == 3
