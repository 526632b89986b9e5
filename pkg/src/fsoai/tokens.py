"""Stateless resumptionTokens.

A token is ``<base64url(json payload)>.<mac>``.  The payload carries the
original query, the snapshot it was cut from, the cursor and the complete
list size; the MAC (keyed SHA-256) makes any client-side edit detectable.
No server-side session state is kept, so tokens survive restarts as long as
the snapshot is unchanged.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import hmac
import json
import time
from dataclasses import dataclass


class TokenError(ValueError):
    pass


@dataclass(frozen=True)
class ResumptionToken:
    verb: str
    metadata_prefix: str
    from_: str | None
    until: str | None
    set_spec: str | None
    snapshot_id: str
    cursor: int
    complete_list_size: int
    issued_at: int

    @property
    def query_digest(self) -> str:
        return query_digest(self.verb, self.metadata_prefix, self.from_, self.until, self.set_spec)


def query_digest(verb, metadata_prefix, from_, until, set_spec) -> str:
    raw = "\x1f".join(v or "" for v in (verb, metadata_prefix, from_, until, set_spec))
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16]


def _b64(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _unb64(text: str) -> bytes:
    pad = "=" * (-len(text) % 4)
    return base64.urlsafe_b64decode(text + pad)


def _mac(key: bytes, body: str) -> str:
    return hmac.new(key, body.encode("ascii"), hashlib.sha256).hexdigest()[:24]


class TokenCodec:
    def __init__(self, secret: bytes | str, ttl: int = 86400, clock=time.time):
        self.key = secret.encode("utf-8") if isinstance(secret, str) else secret
        self.ttl = ttl
        self.clock = clock

    def issue(
        self,
        *,
        verb: str,
        metadata_prefix: str,
        from_: str | None,
        until: str | None,
        set_spec: str | None,
        snapshot_id: str,
        cursor: int,
        complete_list_size: int,
    ) -> ResumptionToken:
        return ResumptionToken(
            verb=verb,
            metadata_prefix=metadata_prefix,
            from_=from_,
            until=until,
            set_spec=set_spec,
            snapshot_id=snapshot_id,
            cursor=cursor,
            complete_list_size=complete_list_size,
            issued_at=int(self.clock()),
        )

    def encode(self, token: ResumptionToken) -> str:
        payload = {
            "v": token.verb,
            "p": token.metadata_prefix,
            "f": token.from_,
            "u": token.until,
            "s": token.set_spec,
            "q": token.query_digest,
            "i": token.snapshot_id,
            "c": token.cursor,
            "n": token.complete_list_size,
            "t": token.issued_at,
        }
        body = _b64(json.dumps(payload, separators=(",", ":"), sort_keys=True).encode("utf-8"))
        return f"{body}.{_mac(self.key, body)}"

    def decode(self, text: str) -> ResumptionToken:
        """Verify and unpack a token string. Raises TokenError on any defect."""
        body, sep, mac = text.partition(".")
        if not sep or not body or not mac:
            raise TokenError("malformed token")
        try:
            expected = _mac(self.key, body)
        except UnicodeEncodeError:
            raise TokenError("malformed token") from None
        if not hmac.compare_digest(expected, mac):
            raise TokenError("token failed integrity check")
        try:
            payload = json.loads(_unb64(body))
            token = ResumptionToken(
                verb=payload["v"],
                metadata_prefix=payload["p"],
                from_=payload["f"],
                until=payload["u"],
                set_spec=payload["s"],
                snapshot_id=payload["i"],
                cursor=int(payload["c"]),
                complete_list_size=int(payload["n"]),
                issued_at=int(payload["t"]),
            )
        except (binascii.Error, ValueError, KeyError, TypeError) as exc:
            raise TokenError(f"undecodable token: {exc}") from None
        if payload.get("q") != token.query_digest:
            raise TokenError("query digest mismatch")
        if not 0 <= token.cursor < token.complete_list_size:
            raise TokenError("cursor out of range")
        if self.clock() - token.issued_at > self.ttl:
            raise TokenError("token expired")
        return token
