"""Single sign-on between one identity provider and its service providers.

The IDP authenticates users (password, optionally a hardware-token proof)
and issues short-lived assertions signed with a pairwise shared MAC key.
The gateway side verifies signature, audience, validity window and nonce
freshness, then binds the login to a new gateway session.  Authentication
lives entirely on the IDP; authorisation and audit stay in the gateway.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import html
import secrets
import struct
import threading
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING
from urllib.parse import urlencode

from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, RedirectResponse

from .errors import MalformedAssertion, UnknownServiceProvider
from .model import METHOD_PASSWORD, METHOD_TOKEN, PasswordHash

if TYPE_CHECKING:
    from .clock import Clock
    from .store import IdbFacade

KEY_BYTES = 32
NONCE_BYTES = 16
SIGNATURE_BYTES = 32

REJECT_BAD_SIGNATURE = "bad_signature"
REJECT_WRONG_AUDIENCE = "wrong_audience"
REJECT_EXPIRED = "expired"
REJECT_NOT_YET_VALID = "not_yet_valid"
REJECT_REPLAYED = "replayed"
REJECT_MALFORMED = "malformed"

# one verification's worth of work for the unknown-user path
_DUMMY_HASH = PasswordHash.create("gate-dummy-credential")


# --- circle of trust ---------------------------------------------------------

@dataclass(frozen=True)
class SpEntry:
    shared_key: bytes
    return_url: str

    def __post_init__(self):
        if len(self.shared_key) != KEY_BYTES:
            raise ValueError(f"shared key must be {KEY_BYTES} bytes")


@dataclass
class CircleOfTrust:
    idp_id: str
    sp_entries: dict[str, SpEntry]


# --- assertions ----------------------------------------------------------------

@dataclass(frozen=True)
class Assertion:
    issuer: str
    subject: str
    audience: str
    methods: frozenset[str]
    issued_at: int
    expires_at: int
    nonce: bytes
    signature: bytes


def _canonical_fields(assertion: Assertion) -> list[bytes]:
    return [
        assertion.issuer.encode(),
        assertion.subject.encode(),
        assertion.audience.encode(),
        ",".join(sorted(assertion.methods)).encode(),
        str(assertion.issued_at).encode(),
        str(assertion.expires_at).encode(),
        assertion.nonce.hex().encode(),
    ]


def canonical_bytes(assertion: Assertion) -> bytes:
    """Signing input: each field length-prefixed (4-byte big-endian), in order."""
    return b"".join(
        struct.pack(">I", len(fld)) + fld for fld in _canonical_fields(assertion)
    )


def sign_assertion(assertion: Assertion, shared_key: bytes) -> bytes:
    return hmac.new(shared_key, canonical_bytes(assertion), hashlib.sha256).digest()


def encode_assertion(assertion: Assertion) -> str:
    """Wire form: base64url(canonical serialization + 32-byte signature)."""
    return base64.urlsafe_b64encode(
        canonical_bytes(assertion) + assertion.signature
    ).decode()


def _take_field(data: bytes, offset: int) -> tuple[bytes, int]:
    if offset + 4 > len(data):
        raise MalformedAssertion("truncated length prefix")
    (length,) = struct.unpack(">I", data[offset : offset + 4])
    end = offset + 4 + length
    if end > len(data):
        raise MalformedAssertion("truncated field")
    return data[offset + 4 : end], end


def decode_assertion(wire: str) -> Assertion:
    try:
        data = base64.urlsafe_b64decode(wire.encode())
    except Exception as exc:
        raise MalformedAssertion("bad base64") from exc
    # exactly one wire form per assertion: reject alternate-alphabet,
    # padding-bit and whitespace aliases of the same payload
    if base64.urlsafe_b64encode(data).decode() != wire:
        raise MalformedAssertion("non-canonical encoding")
    fields = []
    offset = 0
    for _ in range(7):
        fld, offset = _take_field(data, offset)
        fields.append(fld)
    signature = data[offset:]
    if len(signature) != SIGNATURE_BYTES:
        raise MalformedAssertion("bad signature length")
    try:
        issuer, subject, audience = (f.decode() for f in fields[:3])
        methods = frozenset(m for m in fields[3].decode().split(",") if m)
        issued_raw, expires_raw = fields[4].decode(), fields[5].decode()
        if not issued_raw.isdigit() or not expires_raw.isdigit():
            raise MalformedAssertion("bad timestamp")
        nonce = bytes.fromhex(fields[6].decode())
    except MalformedAssertion:
        raise
    except Exception as exc:
        raise MalformedAssertion("bad field encoding") from exc
    if len(nonce) != NONCE_BYTES:
        raise MalformedAssertion("bad nonce length")
    assertion = Assertion(
        issuer=issuer,
        subject=subject,
        audience=audience,
        methods=methods,
        issued_at=int(issued_raw),
        expires_at=int(expires_raw),
        nonce=nonce,
        signature=signature,
    )
    # fields must already be in signing form (sorted methods, lowercase hex,
    # no redundant digits) so equal assertions have equal wire bytes
    if canonical_bytes(assertion) != data[:offset]:
        raise MalformedAssertion("non-canonical field encoding")
    return assertion


def issue_assertion(
    cot: CircleOfTrust,
    subject: str,
    sp_id: str,
    methods: frozenset[str],
    now: float,
    ttl_seconds: int,
) -> Assertion:
    entry = cot.sp_entries.get(sp_id)
    if entry is None:
        raise UnknownServiceProvider(sp_id)
    if not methods:
        raise ValueError("assertion needs at least one method")
    unsigned = Assertion(
        issuer=cot.idp_id,
        subject=subject,
        audience=sp_id,
        methods=frozenset(methods),
        issued_at=int(now),
        expires_at=int(now) + int(ttl_seconds),
        nonce=secrets.token_bytes(NONCE_BYTES),
        signature=b"",
    )
    return replace(unsigned, signature=sign_assertion(unsigned, entry.shared_key))


# --- verification -----------------------------------------------------------------

class ReplayCache:
    """Remembers nonces until their assertion would have expired anyway."""

    def __init__(self):
        self._lock = threading.Lock()
        self._seen: dict[bytes, int] = {}

    def check_and_insert(self, nonce: bytes, expires_at: int, now: float) -> bool:
        """Atomically record the nonce; False means it was already present."""
        with self._lock:
            for old, expiry in list(self._seen.items()):
                if expiry <= now:
                    del self._seen[old]
            if nonce in self._seen:
                return False
            self._seen[nonce] = expires_at
            return True


@dataclass(frozen=True)
class VerifyOutcome:
    ok: bool
    subject: str | None = None
    methods: frozenset[str] = frozenset()
    issued_at: int | None = None
    reason: str | None = None


def verify_assertion(
    sp_id: str,
    shared_key: bytes,
    assertion: Assertion,
    now: float,
    replay: ReplayCache | None = None,
) -> VerifyOutcome:
    """Accept iff signed for us, inside [issued_at, expires_at), never seen.

    The nonce is only consumed once every other check has passed, so a
    rejected presentation does not burn a later legitimate one.
    """
    expected = sign_assertion(assertion, shared_key)
    if not hmac.compare_digest(expected, assertion.signature):
        return VerifyOutcome(False, reason=REJECT_BAD_SIGNATURE)
    if assertion.audience != sp_id:
        return VerifyOutcome(False, reason=REJECT_WRONG_AUDIENCE)
    if assertion.issued_at > now:
        return VerifyOutcome(False, reason=REJECT_NOT_YET_VALID)
    if now >= assertion.expires_at:
        return VerifyOutcome(False, reason=REJECT_EXPIRED)
    if replay is not None and not replay.check_and_insert(
        assertion.nonce, assertion.expires_at, now
    ):
        return VerifyOutcome(False, reason=REJECT_REPLAYED)
    return VerifyOutcome(
        True,
        subject=assertion.subject,
        methods=assertion.methods,
        issued_at=assertion.issued_at,
    )


# --- authentication -----------------------------------------------------------

@dataclass(frozen=True)
class AuthResult:
    ok: bool
    user_id: str | None = None
    federated_name: str | None = None
    methods: frozenset[str] = frozenset()


def authenticate(
    idb: "IdbFacade",
    federated_name: str,
    password: str,
    token_proof: tuple[str, str] | None = None,
) -> AuthResult:
    """Password is the mandatory first factor; the token only adds a method.

    An unknown user and a wrong password return the same failure value,
    and both burn one hash verification, to resist user enumeration.
    """
    credential = idb.credential(federated_name)
    if credential is None:
        _DUMMY_HASH.verify(password)
        return AuthResult(False)
    if not credential.password.verify(password):
        return AuthResult(False)
    methods = {METHOD_PASSWORD}
    binding = credential.token_binding
    if (
        token_proof is not None
        and binding is not None
        and tuple(token_proof) == (binding.firmcode, binding.usercode)
    ):
        methods.add(METHOD_TOKEN)
    return AuthResult(
        True,
        user_id=credential.user_id,
        federated_name=credential.federated_name,
        methods=frozenset(methods),
    )


# --- service-provider side ----------------------------------------------------

class ServiceProvider:
    """Gateway-side SSO state: resume tokens and the replay cache."""

    def __init__(
        self,
        sp_id: str,
        shared_key: bytes,
        idp_login_url: str,
        clock: "Clock",
        resume_ttl: float = 600.0,
    ):
        if len(shared_key) != KEY_BYTES:
            raise ValueError(f"shared key must be {KEY_BYTES} bytes")
        self.sp_id = sp_id
        self._shared_key = shared_key
        self.idp_login_url = idp_login_url
        self._clock = clock
        self._resume_ttl = resume_ttl
        self._replay = ReplayCache()
        self._lock = threading.Lock()
        self._resume: dict[str, tuple[str, float]] = {}

    def begin_sso(self, target: str) -> str:
        """Store the original target under a fresh single-use resume token."""
        now = self._clock.time()
        token = secrets.token_urlsafe(16)
        with self._lock:
            for old, (_, created) in list(self._resume.items()):
                if now - created > self._resume_ttl:
                    del self._resume[old]
            self._resume[token] = (target, now)
        query = urlencode({"sp": self.sp_id, "resume": token})
        return f"{self.idp_login_url}?{query}"

    def consume_resume(self, token: str) -> str | None:
        now = self._clock.time()
        with self._lock:
            entry = self._resume.pop(token, None)
        if entry is None:
            return None
        target, created = entry
        if now - created > self._resume_ttl:
            return None
        return target

    def verify(self, wire_assertion: str) -> VerifyOutcome:
        try:
            assertion = decode_assertion(wire_assertion)
        except MalformedAssertion:
            return VerifyOutcome(False, reason=REJECT_MALFORMED)
        return verify_assertion(
            self.sp_id, self._shared_key, assertion, self._clock.time(), self._replay
        )


# --- identity provider ----------------------------------------------------------

_LOGIN_FORM = """<!doctype html>
<html>
<head><title>Sign in</title></head>
<body>
<h1>Sign in</h1>
{error}
<form method="post" action="/idp/login">
  <input type="hidden" name="sp" value="{sp}">
  <input type="hidden" name="resume" value="{resume}">
  <label>User <input type="text" name="user"></label>
  <label>Password <input type="password" name="password"></label>
  <fieldset>
    <legend>Hardware token (optional)</legend>
    <label>Firm code <input type="text" name="firmcode"></label>
    <label>User code <input type="text" name="usercode"></label>
  </fieldset>
  <button type="submit">Sign in</button>
</form>
</body>
</html>
"""


class IdentityProvider:
    """Authenticates users and issues assertions for registered SPs."""

    def __init__(
        self,
        cot: CircleOfTrust,
        idb: "IdbFacade",
        clock: "Clock",
        assertion_ttl: int = 300,
    ):
        self.cot = cot
        self._idb = idb
        self._clock = clock
        self.assertion_ttl = assertion_ttl

    def login_form(self, sp: str, resume: str, error: str | None = None) -> str:
        banner = f"<p>{html.escape(error)}</p>" if error else ""
        return _LOGIN_FORM.format(
            error=banner, sp=html.escape(sp, quote=True), resume=html.escape(resume, quote=True)
        )

    def handle_login(
        self,
        user: str,
        password: str,
        firmcode: str,
        usercode: str,
        sp: str,
        resume: str,
    ) -> tuple[str, str]:
        """Returns ("redirect", url) on success, ("error", html) otherwise."""
        token_proof = (firmcode, usercode) if firmcode and usercode else None
        result = authenticate(self._idb, user, password, token_proof)
        if not result.ok:
            return ("error", self.login_form(sp, resume, "Sign-in failed."))
        entry = self.cot.sp_entries.get(sp)
        if entry is None:
            raise UnknownServiceProvider(sp)
        assertion = issue_assertion(
            self.cot,
            result.federated_name,
            sp,
            result.methods,
            self._clock.time(),
            self.assertion_ttl,
        )
        query = urlencode({"assertion": encode_assertion(assertion), "resume": resume})
        return ("redirect", f"{entry.return_url}?{query}")


def build_idp_app(idp: IdentityProvider):
    """Minimal HTTP frontend for the IDP (login form + assertion hand-off)."""
    app = FastAPI(title="gate-idp", docs_url=None, redoc_url=None, openapi_url=None)

    @app.get("/idp/login")
    async def login_page(request: Request) -> HTMLResponse:
        sp = request.query_params.get("sp", "")
        resume = request.query_params.get("resume", "")
        return HTMLResponse(idp.login_form(sp, resume))

    @app.post("/idp/login")
    async def login_submit(request: Request):
        form = await request.form()
        try:
            kind, payload = idp.handle_login(
                user=str(form.get("user", "")),
                password=str(form.get("password", "")),
                firmcode=str(form.get("firmcode", "")),
                usercode=str(form.get("usercode", "")),
                sp=str(form.get("sp", "")),
                resume=str(form.get("resume", "")),
            )
        except UnknownServiceProvider:
            return HTMLResponse("<h1>Unknown service provider</h1>", status_code=400)
        if kind == "redirect":
            return RedirectResponse(payload, status_code=302)
        return HTMLResponse(payload, status_code=401)

    return app
