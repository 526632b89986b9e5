"""Service configuration: a flat ``key = value`` file, one key per line.

Example::

    docroot = /srv/htdocs
    listen_address = 127.0.0.1:8080
    page_size_records = 50
    alias = /A /srv/htdocs/B

``alias`` may repeat; list-valued keys take comma-separated values.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace

from .metadata import DEFAULT_BYVALUE_THRESHOLD
from .repo import DEFAULT_EXCLUDED_EXTENSIONS, DocRootConfig

LISTEN_ENV = "FSOAI_LISTEN"

_INT_FIELDS = {
    "page_size_records": 1,
    "page_size_identifiers": 1,
    "byvalue_threshold": 0,
    "token_ttl": 1,
    "max_inflight": 1,
}
_STR_FIELDS = ("admin_email", "repository_name", "endpoint_path", "access_log", "token_secret")
_KNOWN = {
    "docroot", "base_url", "listen_address", "rescan_interval",
    "excluded_extensions", "excluded_path_patterns", "alias",
    *_INT_FIELDS, *_STR_FIELDS,
}


class ConfigError(Exception):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ServiceConfig:
    docroot: DocRootConfig
    listen_address: str = "127.0.0.1:8080"
    page_size_records: int = 50
    page_size_identifiers: int = 500
    byvalue_threshold: int = DEFAULT_BYVALUE_THRESHOLD
    token_ttl: int = 86400
    admin_email: str = "admin@localhost"
    repository_name: str = "Filesystem OAI-PMH repository"
    rescan_interval: float | None = None
    endpoint_path: str = "/oai"
    access_log: str | None = None
    token_secret: str | None = None
    max_inflight: int = 64
    # True when base_url was not configured and should follow the bound address
    derived_base_url: bool = field(default=False, compare=False)

    def __post_init__(self):
        for name, minimum in _INT_FIELDS.items():
            value = getattr(self, name)
            if not isinstance(value, int) or value < minimum:
                raise ConfigError(name, f"must be an integer >= {minimum}, got {value!r}")
        if self.rescan_interval is not None and self.rescan_interval <= 0:
            raise ConfigError("rescan_interval", "must be positive")
        if not self.endpoint_path.startswith("/"):
            raise ConfigError("endpoint_path", "must start with '/'")
        host_port(self.listen_address)

    @property
    def base_url(self) -> str:
        return self.docroot.base_url

    @property
    def endpoint_url(self) -> str:
        return self.base_url + self.endpoint_path

    @property
    def secret(self) -> bytes:
        if self.token_secret:
            return self.token_secret.encode("utf-8")
        seed = f"{self.repository_name}\0{os.path.abspath(self.docroot.root_path)}"
        return hashlib.sha256(seed.encode("utf-8")).digest()

    def with_base_url(self, base_url: str) -> "ServiceConfig":
        return replace(self, docroot=replace(self.docroot, base_url=base_url))


def host_port(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError("listen_address", f"expected host:port, got {address!r}")
    return host or "127.0.0.1", int(port)


def _split_list(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def parse_config(text: str, *, env: dict | None = None) -> ServiceConfig:
    env = os.environ if env is None else env
    values: dict[str, str] = {}
    aliases: list[tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        if key not in _KNOWN:
            raise ConfigError(key, "unknown key")
        if key == "alias":
            parts = value.split(None, 1)
            if len(parts) != 2:
                raise ConfigError("alias", f"expected '<url-prefix> <directory>', got {value!r}")
            aliases.append((parts[0], parts[1]))
            continue
        if key in values:
            raise ConfigError(key, "given more than once")
        values[key] = value

    if "docroot" not in values:
        raise ConfigError("docroot", "required")
    listen = env.get(LISTEN_ENV) or values.get("listen_address", "127.0.0.1:8080")
    endpoint = values.get("endpoint_path", "/oai")

    kwargs: dict = {"listen_address": listen}
    for name in _INT_FIELDS:
        if name in values:
            try:
                kwargs[name] = int(values[name])
            except ValueError:
                raise ConfigError(name, f"not an integer: {values[name]!r}") from None
    for name in _STR_FIELDS:
        if name in values:
            kwargs[name] = values[name]
    if "rescan_interval" in values:
        try:
            kwargs["rescan_interval"] = float(values["rescan_interval"])
        except ValueError:
            raise ConfigError("rescan_interval", f"not a number: {values['rescan_interval']!r}") from None

    base_url = values.get("base_url")
    derived = base_url is None
    if derived:
        host, port = host_port(listen)
        base_url = f"http://{host}:{port}"

    stem = endpoint.strip("/")
    docroot = DocRootConfig(
        root_path=values["docroot"],
        base_url=base_url,
        excluded_extensions=(
            _split_list(values["excluded_extensions"])
            if "excluded_extensions" in values else DEFAULT_EXCLUDED_EXTENSIONS
        ),
        excluded_path_patterns=(
            _split_list(values["excluded_path_patterns"])
            if "excluded_path_patterns" in values else (stem, stem + "/*")
        ),
        alias_table=tuple(aliases),
    )
    return ServiceConfig(docroot=docroot, derived_base_url=derived, **kwargs)


def load_config(path: str, *, env: dict | None = None) -> ServiceConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    return parse_config(text, env=env)


def dump_config(cfg: ServiceConfig) -> str:
    lines = [f"docroot = {cfg.docroot.root_path}"]
    if not cfg.derived_base_url:
        lines.append(f"base_url = {cfg.base_url}")
    lines.append(f"listen_address = {cfg.listen_address}")
    for name in _INT_FIELDS:
        lines.append(f"{name} = {getattr(cfg, name)}")
    for name in _STR_FIELDS:
        value = getattr(cfg, name)
        if value is not None:
            lines.append(f"{name} = {value}")
    if cfg.rescan_interval is not None:
        lines.append(f"rescan_interval = {cfg.rescan_interval!r}")
    lines.append("excluded_extensions = " + ",".join(cfg.docroot.excluded_extensions))
    lines.append("excluded_path_patterns = " + ",".join(cfg.docroot.excluded_path_patterns))
    for prefix, target in cfg.docroot.alias_table:
        lines.append(f"alias = {prefix} {target}")
    return "\n".join(lines) + "\n"
