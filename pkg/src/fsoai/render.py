"""Serialize OaiResponse values as OAI-PMH 2.0 XML (UTF-8, byte-deterministic)."""

from __future__ import annotations

import copy

from lxml import etree

from .protocol import (
    HeadersBody,
    IdentifyBody,
    MetadataFormatsBody,
    OaiResponse,
    PageToken,
    RecordBody,
    RecordsBody,
    SetsBody,
)
from .repo import ResourceRecord
from .timeutil import format_datestamp

OAI_NS = "http://www.openarchives.org/OAI/2.0/"
OAI_SCHEMA = "http://www.openarchives.org/OAI/2.0/OAI-PMH.xsd"
XSI_NS = "http://www.w3.org/2001/XMLSchema-instance"


def _el(parent, name: str, text: str | None = None, **attrs) -> etree._Element:
    el = etree.SubElement(parent, f"{{{OAI_NS}}}{name}")
    for key, value in attrs.items():
        el.set(key, value)
    if text is not None:
        el.text = text
    return el


def _header(parent, rec: ResourceRecord) -> None:
    h = _el(parent, "header")
    _el(h, "identifier", rec.identifier)
    _el(h, "datestamp", rec.datestamp_str)
    _el(h, "setSpec", rec.set_spec)


def _token(parent, token: PageToken | None) -> None:
    if token is None:
        return
    _el(
        parent,
        "resumptionToken",
        token.value,
        completeListSize=str(token.complete_list_size),
        cursor=str(token.cursor),
    )


def _record(parent, rec: ResourceRecord, metadata) -> None:
    r = _el(parent, "record")
    _header(r, rec)
    # copy: one response may be rendered more than once
    _el(r, "metadata").append(copy.deepcopy(metadata))


def render_response(resp: OaiResponse) -> bytes:
    root = etree.Element(f"{{{OAI_NS}}}OAI-PMH", nsmap={None: OAI_NS, "xsi": XSI_NS})
    root.set(f"{{{XSI_NS}}}schemaLocation", f"{OAI_NS} {OAI_SCHEMA}")
    _el(root, "responseDate", format_datestamp(resp.response_date))

    req_el = _el(root, "request", resp.base_url)
    if resp.request is not None and (resp.error is None or resp.error.code not in ("badVerb", "badArgument")):
        req_el.set("verb", resp.request.verb)
        for name, value in resp.request.raw:
            req_el.set(name, value)

    if resp.error is not None:
        _el(root, "error", resp.error.message, code=resp.error.code)
        return _serialize(root)

    body = resp.body
    verb_el = _el(root, resp.request.verb)
    if isinstance(body, IdentifyBody):
        _el(verb_el, "repositoryName", body.repository_name)
        _el(verb_el, "baseURL", body.base_url)
        _el(verb_el, "protocolVersion", body.protocol_version)
        _el(verb_el, "adminEmail", body.admin_email)
        _el(verb_el, "earliestDatestamp", format_datestamp(body.earliest_datestamp))
        _el(verb_el, "deletedRecord", body.deleted_record)
        _el(verb_el, "granularity", body.granularity)
    elif isinstance(body, MetadataFormatsBody):
        for prefix, schema, ns in body.formats:
            f = _el(verb_el, "metadataFormat")
            _el(f, "metadataPrefix", prefix)
            _el(f, "schema", schema)
            _el(f, "metadataNamespace", ns)
    elif isinstance(body, SetsBody):
        for spec, name in body.sets:
            s = _el(verb_el, "set")
            _el(s, "setSpec", spec)
            _el(s, "setName", name)
    elif isinstance(body, HeadersBody):
        for rec in body.records:
            _header(verb_el, rec)
        _token(verb_el, body.token)
    elif isinstance(body, RecordsBody):
        for rec, metadata in body.records:
            _record(verb_el, rec, metadata)
        _token(verb_el, body.token)
    elif isinstance(body, RecordBody):
        _record(verb_el, body.record, body.metadata)
    else:
        raise TypeError(f"unknown response body {type(body).__name__}")
    return _serialize(root)


def _serialize(root) -> bytes:
    return etree.tostring(root, xml_declaration=True, encoding="UTF-8")
