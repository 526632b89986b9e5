"""OAI-PMH 2.0 request handling over a RepositorySnapshot.

parse_request validates arguments against the per-verb legality table,
dispatch answers a validated request, and protocol failures travel in-band
as OaiError values rather than exceptions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Sequence, Union

from lxml import etree

from .config import ServiceConfig
from .metadata import FORMATS, DidlError, encode_didl, encode_metadata
from .repo import RepositorySnapshot, ResourceRecord, filter_records, is_valid_set_spec
from .timeutil import granularity_of, parse_datestamp, utcnow
from .tokens import ResumptionToken, TokenCodec, TokenError

log = logging.getLogger(__name__)

VERBS = ("Identify", "ListMetadataFormats", "ListSets", "ListIdentifiers", "ListRecords", "GetRecord")

ERROR_CODES = frozenset({
    "badVerb",
    "badArgument",
    "badResumptionToken",
    "cannotDisseminateFormat",
    "idDoesNotExist",
    "noRecordsMatch",
    "noSetHierarchy",
    "noMetadataFormats",
})

# verb -> (required, optional, exclusive)
LEGAL_ARGUMENTS = {
    "Identify": ((), (), ()),
    "ListMetadataFormats": ((), ("identifier",), ()),
    "ListSets": ((), (), ("resumptionToken",)),
    "ListIdentifiers": (("metadataPrefix",), ("from", "until", "set"), ("resumptionToken",)),
    "ListRecords": (("metadataPrefix",), ("from", "until", "set"), ("resumptionToken",)),
    "GetRecord": (("identifier", "metadataPrefix"), (), ()),
}

# echo order of request attributes
ARGUMENT_ORDER = ("identifier", "metadataPrefix", "from", "until", "set", "resumptionToken")


@dataclass(frozen=True)
class OaiError:
    code: str
    message: str = ""

    def __post_init__(self):
        if self.code not in ERROR_CODES:
            raise ValueError(f"not an OAI-PMH error code: {self.code}")


@dataclass(frozen=True)
class OaiRequest:
    verb: str
    identifier: str | None = None
    metadata_prefix: str | None = None
    from_: datetime | None = None
    until: datetime | None = None
    set_spec: str | None = None
    resumption_token: str | None = None
    # validated raw argument strings, used for the request echo and tokens
    raw: tuple[tuple[str, str], ...] = ()

    def arg(self, name: str) -> str | None:
        for key, value in self.raw:
            if key == name:
                return value
        return None


@dataclass(frozen=True)
class PageToken:
    """What goes into a resumptionToken element: value is None on the last page."""

    value: str | None
    cursor: int
    complete_list_size: int


@dataclass(frozen=True)
class IdentifyBody:
    repository_name: str
    base_url: str
    protocol_version: str
    earliest_datestamp: datetime
    deleted_record: str
    granularity: str
    admin_email: str


@dataclass(frozen=True)
class MetadataFormatsBody:
    formats: tuple[tuple[str, str, str], ...]  # (prefix, schema, namespace)


@dataclass(frozen=True)
class SetsBody:
    sets: tuple[tuple[str, str], ...]  # (setSpec, setName)


@dataclass(frozen=True)
class HeadersBody:
    records: tuple[ResourceRecord, ...]
    token: PageToken | None = None


@dataclass(frozen=True)
class RecordsBody:
    records: tuple[tuple[ResourceRecord, etree._Element], ...]
    token: PageToken | None = None


@dataclass(frozen=True)
class RecordBody:
    record: ResourceRecord
    metadata: etree._Element


Body = Union[IdentifyBody, MetadataFormatsBody, SetsBody, HeadersBody, RecordsBody, RecordBody]


@dataclass(frozen=True)
class OaiResponse:
    base_url: str
    request: OaiRequest | None
    body: Body | None = None
    error: OaiError | None = None
    response_date: datetime = field(default_factory=utcnow)

    def __post_init__(self):
        if (self.body is None) == (self.error is None):
            raise ValueError("exactly one of body/error must be set")


def parse_request(params: Iterable[tuple[str, str]]) -> OaiRequest | OaiError:
    params = list(params)
    verbs = [v for k, v in params if k == "verb"]
    if not verbs:
        return OaiError("badVerb", "missing verb argument")
    if len(verbs) > 1:
        return OaiError("badVerb", "verb argument repeated")
    verb = verbs[0]
    if verb not in LEGAL_ARGUMENTS:
        return OaiError("badVerb", f"illegal verb {verb!r}")

    required, optional, exclusive = LEGAL_ARGUMENTS[verb]
    allowed = set(required) | set(optional) | set(exclusive)
    args: dict[str, str] = {}
    for key, value in params:
        if key == "verb":
            continue
        if key not in allowed:
            return OaiError("badArgument", f"illegal argument {key!r} for {verb}")
        if key in args:
            return OaiError("badArgument", f"argument {key!r} repeated")
        if value == "":
            return OaiError("badArgument", f"empty value for {key!r}")
        args[key] = value

    excl = [k for k in exclusive if k in args]
    if excl:
        if len(args) > 1:
            return OaiError("badArgument", f"{excl[0]} is an exclusive argument")
    else:
        missing = [k for k in required if k not in args]
        if missing:
            return OaiError("badArgument", f"missing required argument {missing[0]!r}")

    from_ = until = None
    if "from" in args or "until" in args:
        grans = {granularity_of(args[k]) for k in ("from", "until") if k in args}
        if None in grans:
            return OaiError("badArgument", "dates must be YYYY-MM-DD or YYYY-MM-DDThh:mm:ssZ")
        if len(grans) > 1:
            return OaiError("badArgument", "from and until have different granularities")
        try:
            if "from" in args:
                from_ = parse_datestamp(args["from"])
            if "until" in args:
                until = parse_datestamp(args["until"], end_of_day=True)
        except ValueError as exc:
            return OaiError("badArgument", str(exc))
        if from_ is not None and until is not None and from_ > until:
            return OaiError("badArgument", "from is later than until")
    if "set" in args and not is_valid_set_spec(args["set"]):
        return OaiError("badArgument", f"malformed setSpec {args['set']!r}")

    return OaiRequest(
        verb=verb,
        identifier=args.get("identifier"),
        metadata_prefix=args.get("metadataPrefix"),
        from_=from_,
        until=until,
        set_spec=args.get("set"),
        resumption_token=args.get("resumptionToken"),
        raw=tuple((k, args[k]) for k in ARGUMENT_ORDER if k in args),
    )


def resume(
    token_string: str, snap: RepositorySnapshot, codec: TokenCodec, verb: str | None = None
) -> tuple[OaiRequest, ResumptionToken] | OaiError:
    """Decode a token into the query it continues plus its cursor."""
    try:
        token = codec.decode(token_string)
    except TokenError as exc:
        return OaiError("badResumptionToken", str(exc))
    if verb is not None and token.verb != verb:
        return OaiError("badResumptionToken", "token was issued for a different verb")
    if token.snapshot_id != snap.snapshot_id:
        return OaiError("badResumptionToken", "repository changed since the token was issued")
    raw = [("metadataPrefix", token.metadata_prefix)]
    for name, value in (("from", token.from_), ("until", token.until), ("set", token.set_spec)):
        if value is not None:
            raw.append((name, value))
    original = parse_request([("verb", token.verb), *raw])
    if isinstance(original, OaiError):
        return OaiError("badResumptionToken", "token carries an invalid query")
    return original, token


def paginate(
    matching: Sequence[ResourceRecord],
    req: OaiRequest,
    snap: RepositorySnapshot,
    page_size: int,
    codec: TokenCodec,
    cursor: int = 0,
) -> tuple[list[ResourceRecord], PageToken | None]:
    if page_size < 1:
        raise ValueError("page_size must be >= 1")
    total = len(matching)
    page = list(matching[cursor: cursor + page_size])
    nxt = cursor + page_size
    if nxt < total:
        token = codec.issue(
            verb=req.verb,
            metadata_prefix=req.metadata_prefix,
            from_=req.arg("from"),
            until=req.arg("until"),
            set_spec=req.arg("set"),
            snapshot_id=snap.snapshot_id,
            cursor=nxt,
            complete_list_size=total,
        )
        return page, PageToken(codec.encode(token), cursor, total)
    if cursor > 0:
        # last page of a multi-page list: empty token element
        return page, PageToken(None, cursor, total)
    return page, None


def _metadata_for(prefix: str, rec: ResourceRecord, snap: RepositorySnapshot, cfg: ServiceConfig):
    if prefix != "oai_didl":
        return encode_metadata(prefix, rec, None, cfg.byvalue_threshold)
    content = None
    if rec.size_bytes <= cfg.byvalue_threshold:
        try:
            content = snap.read_content(rec)
        except OSError as exc:
            log.warning("cannot read %s, emitting by-reference only: %s", rec.rel_path, exc)
    try:
        return encode_didl(rec, content, cfg.byvalue_threshold)
    except DidlError as exc:
        log.warning("%s changed on disk since the scan, emitting by-reference only: %s", rec.rel_path, exc)
        return encode_didl(rec, None, cfg.byvalue_threshold)


def _set_name(spec: str) -> str:
    parts = spec.split(":")
    if len(parts) == 1:
        return "Resources by media type"
    if len(parts) == 2:
        return f"{parts[1]}/*"
    return "/".join(parts[1:])


def dispatch(req: OaiRequest, snap: RepositorySnapshot, cfg: ServiceConfig, codec: TokenCodec | None = None) -> OaiResponse:
    codec = codec or TokenCodec(cfg.secret, cfg.token_ttl)
    base = cfg.endpoint_url

    def fail(code, message=""):
        return OaiResponse(base, req, error=OaiError(code, message))

    if req.verb == "Identify":
        return OaiResponse(base, req, body=IdentifyBody(
            repository_name=cfg.repository_name,
            base_url=base,
            protocol_version="2.0",
            earliest_datestamp=snap.earliest_datestamp,
            deleted_record="no",
            granularity="YYYY-MM-DDThh:mm:ssZ",
            admin_email=cfg.admin_email,
        ))

    if req.verb == "ListMetadataFormats":
        if req.identifier is not None and snap.get(req.identifier) is None:
            return fail("idDoesNotExist", f"no item {req.identifier}")
        formats = tuple((p, schema, ns) for p, (schema, ns) in FORMATS.items())
        return OaiResponse(base, req, body=MetadataFormatsBody(formats))

    if req.verb == "ListSets":
        if req.resumption_token is not None:
            return fail("badResumptionToken", "ListSets is never paginated")
        return OaiResponse(base, req, body=SetsBody(tuple((s, _set_name(s)) for s in snap.set_specs())))

    if req.verb == "GetRecord":
        rec = snap.get(req.identifier)
        if rec is None:
            return fail("idDoesNotExist", f"no item {req.identifier}")
        if req.metadata_prefix not in FORMATS:
            return fail("cannotDisseminateFormat", f"unsupported metadataPrefix {req.metadata_prefix!r}")
        return OaiResponse(base, req, body=RecordBody(rec, _metadata_for(req.metadata_prefix, rec, snap, cfg)))

    # ListIdentifiers / ListRecords
    cursor = 0
    query = req
    expected_total = None
    if req.resumption_token is not None:
        resumed = resume(req.resumption_token, snap, codec, req.verb)
        if isinstance(resumed, OaiError):
            return OaiResponse(base, req, error=resumed)
        query, token = resumed
        cursor, expected_total = token.cursor, token.complete_list_size
    elif req.metadata_prefix not in FORMATS:
        return fail("cannotDisseminateFormat", f"unsupported metadataPrefix {req.metadata_prefix!r}")

    matching = filter_records(snap, query.from_, query.until, query.set_spec)
    if expected_total is not None and len(matching) != expected_total:
        return fail("badResumptionToken", "result list changed since the token was issued")
    if not matching:
        return fail("noRecordsMatch", "no records match the request")

    size = cfg.page_size_records if req.verb == "ListRecords" else cfg.page_size_identifiers
    page, page_token = paginate(matching, query, snap, size, codec, cursor)
    if req.verb == "ListIdentifiers":
        return OaiResponse(base, req, body=HeadersBody(tuple(page), page_token))
    items = tuple((rec, _metadata_for(query.metadata_prefix, rec, snap, cfg)) for rec in page)
    return OaiResponse(base, req, body=RecordsBody(items, page_token))


def handle(params: Iterable[tuple[str, str]], snap: RepositorySnapshot, cfg: ServiceConfig,
           codec: TokenCodec | None = None) -> OaiResponse:
    """parse_request + dispatch; badVerb/badArgument responses echo no arguments."""
    req = parse_request(params)
    if isinstance(req, OaiError):
        return OaiResponse(cfg.endpoint_url, None, error=req)
    return dispatch(req, snap, cfg, codec)

