from __future__ import annotations

import os
from datetime import datetime, timezone

import pytest

from fsoai.config import parse_config
from fsoai.repo import DocRootConfig
from fsoai.service import start_server
from fsoai.timeutil import to_timestamp

Y2000 = datetime(2000, 1, 1, tzinfo=timezone.utc)
Y2002 = datetime(2002, 1, 1, tzinfo=timezone.utc)


def write_tree(root, files: dict, mtime: datetime = Y2000) -> None:
    """files maps relative path -> bytes (or (bytes, datetime))."""
    for rel, spec in files.items():
        data, when = spec if isinstance(spec, tuple) else (spec, mtime)
        full = os.path.join(str(root), *rel.split("/"))
        os.makedirs(os.path.dirname(full), exist_ok=True)
        with open(full, "wb") as fh:
            fh.write(data)
        stamp = to_timestamp(when)
        os.utime(full, (stamp, stamp))


def touch(path, when: datetime) -> None:
    stamp = to_timestamp(when)
    os.utime(str(path), (stamp, stamp))


def docroot_config(root, base_url="http://example.org", **kw) -> DocRootConfig:
    return DocRootConfig(root_path=str(root), base_url=base_url, **kw)


def service_config(root, **overrides):
    lines = [f"docroot = {root}", "listen_address = 127.0.0.1:0", "token_secret = test"]
    lines += [f"{k} = {v}" for k, v in overrides.items()]
    return parse_config("\n".join(lines), env={})


@pytest.fixture
def serve_dir():
    """Start an in-process server on a directory; all servers stop at teardown."""
    running = []

    def start(root, **overrides):
        server = start_server(service_config(root, **overrides))
        running.append(server)
        return server

    yield start
    for server in running:
        server.stop()


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
