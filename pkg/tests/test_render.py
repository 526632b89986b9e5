from __future__ import annotations

from datetime import datetime, timezone

from lxml import etree

from fsoai.config import ServiceConfig
from fsoai.harvester import parse_page
from fsoai.protocol import OaiError, OaiResponse, handle
from fsoai.render import OAI_NS, render_response
from fsoai.repo import scan

from .conftest import docroot_config, write_tree

NS = {"o": OAI_NS}
FIXED = datetime(2005, 1, 1, tzinfo=timezone.utc)


def _setup(tmp_path, n=12, **kw):
    write_tree(tmp_path, {f"d/f{i:02d}.txt": f"file {i}".encode() for i in range(n)})
    cfg = ServiceConfig(docroot=docroot_config(tmp_path, base_url="http://h"), token_secret="t", **kw)
    return cfg, scan(cfg.docroot)


def _render(params, snap, cfg):
    resp = handle(params, snap, cfg)
    return render_response(OaiResponse(resp.base_url, resp.request, resp.body, resp.error, FIXED))


def test_error_rendering_has_one_error_and_bare_request():
    resp = OaiResponse("http://h/oai", None, error=OaiError("badVerb", "no such verb"))
    root = etree.fromstring(render_response(resp))
    errors = root.findall("o:error", NS)
    assert len(errors) == 1 and errors[0].get("code") == "badVerb"
    assert root.find("o:request", NS).attrib == {}
    assert root.find("o:request", NS).text == "http://h/oai"


def test_echo_kept_for_other_errors(tmp_path):
    cfg, snap = _setup(tmp_path)
    root = etree.fromstring(_render([("verb", "ListIdentifiers"), ("metadataPrefix", "marc")], snap, cfg))
    assert root.find("o:error", NS).get("code") == "cannotDisseminateFormat"
    assert dict(root.find("o:request", NS).attrib) == {"verb": "ListIdentifiers", "metadataPrefix": "marc"}


def test_render_is_deterministic(tmp_path):
    cfg, snap = _setup(tmp_path)
    resp = handle([("verb", "ListRecords"), ("metadataPrefix", "oai_didl")], snap, cfg)
    assert render_response(resp) == render_response(resp)


def test_document_shape(tmp_path):
    cfg, snap = _setup(tmp_path)
    xml = _render([("verb", "Identify")], snap, cfg)
    assert xml.startswith(b"<?xml version='1.0' encoding='UTF-8'?>")
    root = etree.fromstring(xml)
    assert root.tag == f"{{{OAI_NS}}}OAI-PMH"
    assert [etree.QName(c).localname for c in root] == ["responseDate", "request", "Identify"]
    assert root.findtext("o:responseDate", namespaces=NS) == "2005-01-01T00:00:00Z"
    ident = root.find("o:Identify", NS)
    assert [etree.QName(c).localname for c in ident] == [
        "repositoryName", "baseURL", "protocolVersion", "adminEmail",
        "earliestDatestamp", "deletedRecord", "granularity",
    ]


def test_list_records_round_trip_through_harvester_parser(tmp_path):
    cfg, snap = _setup(tmp_path, page_size_records=5)
    params = [("verb", "ListRecords"), ("metadataPrefix", "oai_dc")]
    seen = []
    while True:
        page = parse_page(_render(params, snap, cfg))
        assert page.error is None
        seen += [(h.identifier, h.datestamp, h.set_specs) for h in page.headers]
        assert all(md is not None for md in page.metadata)
        if not page.token:
            assert page.cursor == 10 and page.complete_list_size == 12
            break
        params = [("verb", "ListRecords"), ("resumptionToken", page.token)]
    assert seen == [(r.identifier, r.datestamp_str, ("mime:text:plain",)) for r in snap.records]


def test_empty_token_on_last_page(tmp_path):
    cfg, snap = _setup(tmp_path, page_size_identifiers=10)
    first = etree.fromstring(_render([("verb", "ListIdentifiers"), ("metadataPrefix", "oai_dc")], snap, cfg))
    tok = first.find("o:ListIdentifiers/o:resumptionToken", NS)
    assert tok.text and tok.get("cursor") == "0" and tok.get("completeListSize") == "12"
    last = etree.fromstring(_render([("verb", "ListIdentifiers"), ("resumptionToken", tok.text)], snap, cfg))
    tok = last.find("o:ListIdentifiers/o:resumptionToken", NS)
    assert tok is not None and tok.text is None and tok.get("cursor") == "10"
