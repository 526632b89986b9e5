"""Metadata formats: oai_dc, http_header and an MPEG-21 DIDL complex object.

The DIDL document wraps one web resource in a single Item: a descriptor
holding its URL, a descriptor holding the HTTP headers a GET would return,
and a Component whose Resources carry the datastream by reference and,
below a size threshold, by value (base64).
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import posixpath
from dataclasses import dataclass
from datetime import datetime
from functools import lru_cache
from importlib import resources

from lxml import etree

from . import SERVER_TOKEN
from .repo import ResourceRecord
from .timeutil import http_date, parse_http_date

XSI_NS = "http://www.w3.org/2001/XMLSchema-instance"
OAI_DC_NS = "http://www.openarchives.org/OAI/2.0/oai_dc/"
OAI_DC_SCHEMA = "http://www.openarchives.org/OAI/2.0/oai_dc.xsd"
DC_NS = "http://purl.org/dc/elements/1.1/"
DIDL_NS = "urn:mpeg:mpeg21:2002:02-DIDL-NS"
DIDL_SCHEMA = "http://purl.lanl.gov/STB-RL/schemas/2004-11/DIDL.xsd"
DII_NS = "urn:mpeg:mpeg21:2002:01-DII-NS"
HTTP_HEADER_NS = "http://purl.lanl.gov/STB-RL/schemas/2004-08/HTTP-HEADER"
HTTP_HEADER_SCHEMA = "http://purl.lanl.gov/STB-RL/schemas/2004-08/HTTP-HEADER.xsd"

DEFAULT_BYVALUE_THRESHOLD = 1 << 20

# metadataPrefix -> (schema location, namespace)
FORMATS = {
    "oai_dc": (OAI_DC_SCHEMA, OAI_DC_NS),
    "http_header": (HTTP_HEADER_SCHEMA, HTTP_HEADER_NS),
    "oai_didl": (DIDL_SCHEMA, DIDL_NS),
}

# Element order inside an http_header block; names mirror the HTTP fields.
HEADER_FIELDS = ("Content-Type", "Content-Length", "Last-Modified", "Server", "Digest")


class DidlError(Exception):
    """Base class for DIDL encode/decode failures."""


class DidlParseError(DidlError):
    pass


class DidlStructureError(DidlError):
    pass


class DidlContentError(DidlError):
    pass


class IntegrityError(DidlError):
    pass


@dataclass(frozen=True)
class HttpHeaderBlock:
    content_type: str
    content_length: int
    last_modified: datetime
    server: str
    digest_header: str | None = None

    def as_http(self) -> dict[str, str]:
        """The block as HTTP header name/value strings."""
        out = {
            "Content-Type": self.content_type,
            "Content-Length": str(self.content_length),
            "Last-Modified": http_date(self.last_modified),
            "Server": self.server,
        }
        if self.digest_header is not None:
            out["Digest"] = self.digest_header
        return out

    @classmethod
    def from_http(cls, headers) -> "HttpHeaderBlock":
        last_modified = parse_http_date(headers["Last-Modified"])
        if last_modified is None:
            raise ValueError(f"bad Last-Modified: {headers['Last-Modified']!r}")
        return cls(
            content_type=headers["Content-Type"],
            content_length=int(headers["Content-Length"]),
            last_modified=last_modified,
            server=headers["Server"],
            digest_header=headers.get("Digest"),
        )

    def sha256_hex(self) -> str | None:
        if not self.digest_header or not self.digest_header.upper().startswith("SHA-256="):
            return None
        try:
            return base64.b64decode(self.digest_header[8:], validate=True).hex()
        except (binascii.Error, ValueError):
            return None


@dataclass(frozen=True)
class DidlDocument:
    identifier: str
    headers: HttpHeaderBlock
    by_ref: str
    by_value: bytes | None
    media_type: str


def digest_header_value(hex_digest: str) -> str:
    """RFC 3230 instance digest, e.g. ``SHA-256=<base64>``."""
    return "SHA-256=" + base64.b64encode(bytes.fromhex(hex_digest)).decode("ascii")


def header_block_for(rec: ResourceRecord) -> HttpHeaderBlock:
    return HttpHeaderBlock(
        content_type=rec.media_type,
        content_length=rec.size_bytes,
        last_modified=rec.datestamp,
        server=SERVER_TOKEN,
        digest_header=digest_header_value(rec.digest),
    )


def _q(ns: str, name: str) -> str:
    return f"{{{ns}}}{name}"


def encode_dc(rec: ResourceRecord) -> etree._Element:
    root = etree.Element(
        _q(OAI_DC_NS, "dc"),
        nsmap={"oai_dc": OAI_DC_NS, "dc": DC_NS, "xsi": XSI_NS},
    )
    root.set(_q(XSI_NS, "schemaLocation"), f"{OAI_DC_NS} {OAI_DC_SCHEMA}")
    for name, value in (
        ("title", posixpath.basename(rec.rel_path)),
        ("identifier", rec.url),
        ("date", rec.datestamp_str),
        ("format", rec.media_type),
    ):
        etree.SubElement(root, _q(DC_NS, name)).text = value
    return root


def _header_element(block: HttpHeaderBlock, nsmap=None) -> etree._Element:
    root = etree.Element(_q(HTTP_HEADER_NS, "header"), nsmap=nsmap or {"hh": HTTP_HEADER_NS})
    values = block.as_http()
    for name in HEADER_FIELDS:
        if name in values:
            etree.SubElement(root, _q(HTTP_HEADER_NS, name)).text = values[name]
    return root


def encode_http_header(rec: ResourceRecord) -> etree._Element:
    el = _header_element(
        header_block_for(rec), nsmap={"hh": HTTP_HEADER_NS, "xsi": XSI_NS}
    )
    el.set(_q(XSI_NS, "schemaLocation"), f"{HTTP_HEADER_NS} {HTTP_HEADER_SCHEMA}")
    return el


def decode_http_header(el: etree._Element) -> HttpHeaderBlock:
    values = {}
    for child in el:
        if not isinstance(child.tag, str):
            continue
        values[etree.QName(child).localname] = child.text or ""
    missing = [f for f in HEADER_FIELDS[:4] if f not in values]
    if missing:
        raise DidlStructureError(f"http header block lacks {', '.join(missing)}")
    try:
        return HttpHeaderBlock.from_http(values)
    except ValueError as exc:
        raise DidlStructureError(str(exc)) from exc


def encode_didl(
    rec: ResourceRecord,
    content: bytes | None,
    threshold: int = DEFAULT_BYVALUE_THRESHOLD,
) -> etree._Element:
    """Build the DIDL document for ``rec``.

    ``content`` may be None, which yields a by-reference-only document.
    Raises IntegrityError when ``content`` does not match the record.
    """
    if content is not None:
        if len(content) != rec.size_bytes or hashlib.sha256(content).hexdigest() != rec.digest:
            raise IntegrityError(f"content of {rec.url} does not match its recorded digest")

    didl = etree.Element(
        _q(DIDL_NS, "DIDL"),
        nsmap={"didl": DIDL_NS, "dii": DII_NS, "hh": HTTP_HEADER_NS, "xsi": XSI_NS},
    )
    didl.set(_q(XSI_NS, "schemaLocation"), f"{DIDL_NS} {DIDL_SCHEMA}")
    item = etree.SubElement(didl, _q(DIDL_NS, "Item"))

    stmt = etree.SubElement(etree.SubElement(item, _q(DIDL_NS, "Descriptor")), _q(DIDL_NS, "Statement"))
    stmt.set("mimeType", "application/xml")
    etree.SubElement(stmt, _q(DII_NS, "Identifier")).text = rec.url

    stmt = etree.SubElement(etree.SubElement(item, _q(DIDL_NS, "Descriptor")), _q(DIDL_NS, "Statement"))
    stmt.set("mimeType", "application/xml")
    stmt.append(_header_element(header_block_for(rec)))

    component = etree.SubElement(item, _q(DIDL_NS, "Component"))
    res = etree.SubElement(component, _q(DIDL_NS, "Resource"))
    res.set("mimeType", rec.media_type)
    res.set("ref", rec.url)
    if content is not None and rec.size_bytes <= threshold:
        res = etree.SubElement(component, _q(DIDL_NS, "Resource"))
        res.set("mimeType", rec.media_type)
        res.set("encoding", "base64")
        res.text = base64.b64encode(content).decode("ascii")
    return didl


def _strict_b64decode(text: str) -> bytes:
    compact = "".join(text.split())
    try:
        data = base64.b64decode(compact, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise DidlContentError(f"invalid base64 content: {exc}") from exc
    # non-canonical padding bits would otherwise decode silently
    if base64.b64encode(data).decode("ascii") != compact:
        raise DidlContentError("non-canonical base64 content")
    return data


def decode_didl(xml) -> DidlDocument:
    """Decode a DIDL document given as bytes/str or as an already parsed element."""
    if isinstance(xml, (bytes, str)):
        parser = etree.XMLParser(resolve_entities=False, no_network=True, huge_tree=True)
        try:
            root = etree.fromstring(xml.encode("utf-8") if isinstance(xml, str) else xml, parser)
        except etree.XMLSyntaxError as exc:
            raise DidlParseError(str(exc)) from exc
    else:
        root = xml

    if root.tag != _q(DIDL_NS, "DIDL"):
        found = root.find(f".//{_q(DIDL_NS, 'DIDL')}")
        if found is None:
            raise DidlStructureError("no DIDL element")
        root = found

    items = root.findall(_q(DIDL_NS, "Item"))
    if len(items) != 1:
        raise DidlStructureError(f"expected exactly one top-level Item, found {len(items)}")
    item = items[0]

    identifier = None
    headers = None
    for stmt in item.iterfind(f"{_q(DIDL_NS, 'Descriptor')}/{_q(DIDL_NS, 'Statement')}"):
        ident = stmt.find(_q(DII_NS, "Identifier"))
        if ident is not None:
            identifier = (ident.text or "").strip()
        hdr = stmt.find(_q(HTTP_HEADER_NS, "header"))
        if hdr is not None:
            headers = decode_http_header(hdr)
    if not identifier:
        raise DidlStructureError("missing identifier descriptor")
    if headers is None:
        raise DidlStructureError("missing http header descriptor")

    component = item.find(_q(DIDL_NS, "Component"))
    if component is None:
        raise DidlStructureError("Item has no Component")

    by_ref = None
    by_value = None
    media_type = None
    for res in component.iterfind(_q(DIDL_NS, "Resource")):
        media_type = media_type or res.get("mimeType")
        if res.get("ref") is not None:
            by_ref = res.get("ref")
        elif res.get("encoding") == "base64":
            by_value = _strict_b64decode(res.text or "")
    if by_ref is None:
        raise DidlStructureError("Component has no by-reference Resource")
    if by_ref != identifier:
        raise DidlStructureError("by-reference URL differs from the identifier")

    if by_value is not None:
        if len(by_value) != headers.content_length:
            raise IntegrityError(
                f"by-value length {len(by_value)} != declared {headers.content_length}"
            )
        expected = headers.sha256_hex()
        if expected is not None and hashlib.sha256(by_value).hexdigest() != expected:
            raise IntegrityError("by-value content does not match the declared digest")

    return DidlDocument(
        identifier=identifier,
        headers=headers,
        by_ref=by_ref,
        by_value=by_value,
        media_type=media_type or headers.content_type,
    )


def encode_metadata(prefix: str, rec: ResourceRecord, content: bytes | None, threshold: int):
    if prefix == "oai_dc":
        return encode_dc(rec)
    if prefix == "http_header":
        return encode_http_header(rec)
    if prefix == "oai_didl":
        return encode_didl(rec, content, threshold)
    raise KeyError(prefix)


@lru_cache(maxsize=None)
def oai_dc_schema() -> etree.XMLSchema:
    path = resources.files("fsoai") / "schemas" / "oai_dc.xsd"
    with resources.as_file(path) as p:
        return etree.XMLSchema(etree.parse(str(p)))


def validate_oai_dc(el: etree._Element) -> None:
    """Raise etree.DocumentInvalid if ``el`` is not a valid oai_dc record."""
    oai_dc_schema().assertValid(etree.ElementTree(el))
