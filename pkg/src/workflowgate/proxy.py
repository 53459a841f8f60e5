"""The gateway itself.

A reverse proxy that owns every GET/POST bound for the host application:
it authenticates the caller via single sign-on, asks the reference monitor
whether some recorded workflow explains the request, forwards approved
requests upstream with server-held upstream cookies and injected
credentials, and rewrites HTML responses (presence beacon, origin links).
The host application runs unmodified and never sees an unapproved request.
"""

from __future__ import annotations

import html as html_mod
from dataclasses import dataclass, field
from http.cookies import SimpleCookie
from typing import TYPE_CHECKING, Mapping
from urllib.parse import parse_qs

import httpx
from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, PlainTextResponse, RedirectResponse, Response

from .errors import (
    RecordingNotActive,
    UnknownRecording,
    UnknownRole,
    UnknownSession,
    UpstreamLoginFailed,
    UpstreamUnreachable,
)
from .federation import ServiceProvider
from .model import PageId, extract_params, required_auth_methods
from .monitor import Decision, MonitorRequest, evaluate
from .presence import (
    END_LOGOUT,
    END_REAUTH_REQUIRED,
    PresenceConfig,
    heartbeat,
    terminate_session,
)
from .session import new_session
from .store import (
    AUDIT_ALLOW,
    AUDIT_DENY,
    AUDIT_LOGIN,
    AUDIT_LOGOUT,
    AUDIT_SSO_ISSUED,
    AUDIT_SSO_REJECTED,
    AUDIT_TRAINING,
    AcdbFacade,
    AuditLog,
    Registry,
    SessionStore,
)
from .training import RecordingBook, is_internal_path

if TYPE_CHECKING:
    from .clock import Clock
    from .model import HostStateOracle
    from .store import UserBinding

_HOP_BY_HOP = {
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
}

_REQUEST_DROP = _HOP_BY_HOP | {"host", "cookie", "content-length", "authorization"}
_RESPONSE_DROP = _HOP_BY_HOP | {"set-cookie", "content-length", "content-encoding"}


# --- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class RewriteConfig:
    inject_beacon: bool = True
    rewrite_origin_links: bool = True


@dataclass(frozen=True)
class UpstreamLoginConfig:
    """How to sign in to the host application on the user's behalf."""

    page: PageId
    user_field: str = "username"
    secret_field: str = "password"
    failure_marker: str | None = None


@dataclass(frozen=True)
class GatewayConfig:
    upstream_origin: str
    sp_id: str
    idp_login_url: str
    listen_address: str = "127.0.0.1:8800"
    base_page: PageId | None = None
    max_assertion_age: float = 28_800.0
    session_cookie_name: str = "gate_session"
    upstream_login: UpstreamLoginConfig | None = None
    rewrite: RewriteConfig = field(default_factory=RewriteConfig)
    presence: PresenceConfig = field(default_factory=PresenceConfig)

    def __post_init__(self):
        if not self.upstream_origin.startswith(("http://", "https://")):
            raise ValueError("upstream_origin must be an absolute http(s) origin")
        object.__setattr__(self, "upstream_origin", self.upstream_origin.rstrip("/"))
        if self.max_assertion_age <= 0:
            raise ValueError("max_assertion_age must be positive")


# --- HTML rewriting --------------------------------------------------------------

def beacon_script(period_seconds: float) -> bytes:
    """Client-side presence reporter; the token flag is a window global the
    deployment's token driver (or the test harness) maintains."""
    period_ms = max(int(period_seconds * 1000), 250)
    script = """
<script>
(function () {
  var active = false;
  ["keydown", "mousedown", "mousemove", "scroll", "touchstart"].forEach(function (name) {
    window.addEventListener(name, function () { active = true; }, {passive: true});
  });
  function tick() {
    var token = window.__GATE_TOKEN_PRESENT !== false;
    var body = "active=" + (active ? "1" : "0") + "&token=" + (token ? "1" : "0");
    active = false;
    fetch("/__gate/beacon", {
      method: "POST",
      credentials: "same-origin",
      headers: {"Content-Type": "application/x-www-form-urlencoded"},
      body: body
    }).then(function (resp) {
      if (resp.status === 410) { clearInterval(timer); }
    }).catch(function () {});
  }
  var timer = setInterval(tick, %PERIOD%);
})();
</script>
""".replace("%PERIOD%", str(period_ms))
    return script.encode()


def rewrite_html(
    body: bytes,
    *,
    upstream_origin: str,
    gateway_origin: str,
    rewrite: RewriteConfig,
    beacon_period: float,
) -> bytes:
    """Rewrite an upstream HTML body for delivery through the gateway."""
    out = body
    if rewrite.rewrite_origin_links:
        out = out.replace(upstream_origin.encode(), gateway_origin.encode())
    if rewrite.inject_beacon:
        script = beacon_script(beacon_period)
        cut = out.lower().rfind(b"</body>")
        if cut >= 0:
            out = out[:cut] + script + out[cut:]
        else:
            out = out + script
    return out


# --- error pages -----------------------------------------------------------------

def _render_page(
    status: int,
    title: str,
    detail: str,
    *,
    marker: str | None = None,
    retry: bool = False,
    fallback: PageId | None = None,
) -> HTMLResponse:
    lines = ["<!doctype html>", "<html>", f"<head><title>{html_mod.escape(title)}</title></head>", "<body>"]
    if marker:
        lines.append(f"<!-- {marker} -->")
    lines.append(f"<h1>{html_mod.escape(title)}</h1>")
    lines.append(f"<p>{html_mod.escape(detail)}</p>")
    if retry:
        lines.append('<p><a href="javascript:history.back()">Go back and retry</a></p>')
    if fallback is not None:
        href = html_mod.escape(fallback.path, quote=True)
        lines.append(f'<p><a href="{href}">Continue at {html_mod.escape(fallback.path)}</a></p>')
    lines.extend(["</body>", "</html>"])
    return HTMLResponse("\n".join(lines) + "\n", status_code=status)


def deny_page(decision: Decision) -> HTMLResponse:
    return _render_page(
        403,
        "Request denied",
        "This step is not part of any workflow available to you right now.",
        marker=f"gate:deny reason={decision.reason}",
        retry=True,
        fallback=decision.fallback,
    )


# --- the gateway ------------------------------------------------------------------

class Gateway:
    """Request pipeline and shared runtime state for one protected upstream."""

    def __init__(
        self,
        config: GatewayConfig,
        *,
        registry: Registry,
        sessions: SessionStore,
        audit: AuditLog,
        recordings: RecordingBook,
        clock: "Clock",
        upstream_client: httpx.Client,
        shared_key: bytes,
        oracle: "HostStateOracle | None" = None,
    ):
        self.config = config
        self.registry = registry
        self.acdb = AcdbFacade(registry)
        self.sessions = sessions
        self.audit = audit
        self.recordings = recordings
        self.clock = clock
        self.upstream = upstream_client
        self.oracle = oracle
        self.sp = ServiceProvider(
            sp_id=config.sp_id,
            shared_key=shared_key,
            idp_login_url=config.idp_login_url,
            clock=clock,
        )
        # monitor invocations; the audit-completeness check compares against this
        self.monitor_decisions = 0

    # --- main pipeline ---

    def intercept(
        self,
        method: str,
        path: str,
        query: str,
        headers: Mapping[str, str],
        cookies: Mapping[str, str],
        body: bytes,
        gateway_origin: str,
    ) -> Response:
        now = self.clock.time()
        if is_internal_path(path):
            return _render_page(404, "Not found", "No such gateway endpoint.")
        if method not in ("GET", "POST"):
            return _render_page(405, "Method not allowed", "Only GET and POST pass the gateway.")
        page = PageId.of(method, path)
        target = path + (f"?{query}" if query else "")

        session = self._live_session(cookies, now)
        if session is None:
            return self._sso_redirect(target, page, now)
        binding = self.acdb.binding_by_id(session.user_id)
        if binding is None:
            terminate_session(self.sessions, self.audit, session.id, "user_removed", now)
            return self._sso_redirect(target, page, now)

        params = extract_params(method, query, headers.get("content-type"), body)

        recording = self.recordings.active()
        if recording is not None and recording.trainer == session.federated_name:
            return self._training_forward(
                recording, session.id, binding, method, target, page, params, headers, body, now, gateway_origin
            )

        policy = self.acdb.policy()
        request = MonitorRequest(page, params)
        with self.sessions.lease(session.id) as lease:
            if lease.session.terminated:
                return self._sso_redirect(target, page, now)
            decision = evaluate(
                lease.session, request, policy, self.oracle, binding,
                base_page=self.config.base_page, now=now,
            )
            self.monitor_decisions += 1
            if not decision.is_allow:
                lease.rollback()
                self.audit.append(
                    at=now, decision=AUDIT_DENY, user_id=binding.user_id,
                    session_id=session.id, page=page.label(),
                    reason=decision.reason or "", params=params,
                )
                return deny_page(decision)
            try:
                upstream_response = self._forward(
                    method, target, headers, body, lease.session.upstream_cookies
                )
            except UpstreamUnreachable as exc:
                lease.rollback()
                self.audit.append(
                    at=now, decision=AUDIT_ALLOW, user_id=binding.user_id,
                    session_id=session.id, page=page.label(),
                    reason="upstream_unreachable", params=params,
                )
                return _render_page(
                    502, "Upstream unavailable", f"The application did not answer: {exc}.",
                    marker="gate:upstream-error",
                )
            self._absorb_cookies(lease.session, upstream_response)
            lease.session.last_activity_at = now
            lease.commit()
        self.audit.append(
            at=now, decision=AUDIT_ALLOW, user_id=binding.user_id,
            session_id=session.id, page=page.label(), reason="", params=params,
        )
        return self._respond(upstream_response, gateway_origin)

    def _training_forward(
        self, recording, session_id, binding, method, target, page, params, headers, body, now, gateway_origin
    ) -> Response:
        """Trainer traffic bypasses the monitor and is captured as steps."""
        with self.sessions.lease(session_id) as lease:
            try:
                upstream_response = self._forward(
                    method, target, headers, body, lease.session.upstream_cookies
                )
            except UpstreamUnreachable as exc:
                lease.rollback()
                return _render_page(
                    502, "Upstream unavailable", f"The application did not answer: {exc}.",
                    marker="gate:upstream-error",
                )
            self._absorb_cookies(lease.session, upstream_response)
            lease.session.last_activity_at = now
            lease.commit()
        try:
            self.recordings.capture(recording.id, page, params, now)
        except (RecordingNotActive, UnknownRecording):
            pass  # stopped between dispatch and capture; the forward stands
        self.audit.append(
            at=now, decision=AUDIT_TRAINING, user_id=binding.user_id,
            session_id=session_id, page=page.label(),
            reason=f"recording={recording.id}", params=params,
        )
        return self._respond(upstream_response, gateway_origin)

    # --- session resolution and SSO ---

    def _live_session(self, cookies: Mapping[str, str], now: float):
        session_id = cookies.get(self.config.session_cookie_name)
        if not session_id:
            return None
        session = self.sessions.get(session_id)
        if session is None or session.terminated:
            return None
        if now - session.assertion_issued_at > self.config.max_assertion_age:
            terminate_session(self.sessions, self.audit, session_id, END_REAUTH_REQUIRED, now)
            return None
        return session

    def _sso_redirect(self, target: str, page: PageId | None, now: float) -> Response:
        url = self.sp.begin_sso(target)
        self.audit.append(
            at=now, decision=AUDIT_SSO_ISSUED,
            page=page.label() if page else "-", reason="login_required",
        )
        return RedirectResponse(url, status_code=302)

    def sso_return(self, wire_assertion: str, resume: str) -> Response:
        now = self.clock.time()
        outcome = self.sp.verify(wire_assertion)
        if not outcome.ok:
            return self._reject_sso(outcome.reason, now)
        target = self.sp.consume_resume(resume)
        if target is None or not target.startswith("/"):
            return self._reject_sso("unknown_resume_token", now)
        binding = self.acdb.binding(outcome.subject)
        if binding is None:
            return self._reject_sso("unknown_subject", now)
        try:
            required = required_auth_methods(binding, self.acdb.policy())
        except UnknownRole:
            return self._reject_sso("unknown_role", now)
        if not required <= outcome.methods:
            return self._reject_sso("insufficient_auth_methods", now, user_id=binding.user_id)

        if self.config.upstream_login is not None:
            try:
                jar = self.upstream_login(binding)
            except UpstreamLoginFailed as exc:
                self.audit.append(
                    at=now, decision=AUDIT_SSO_REJECTED, user_id=binding.user_id,
                    page="-", reason="upstream_login_failed",
                )
                return _render_page(
                    502, "Upstream sign-in failed", str(exc), marker="gate:upstream-error"
                )
        else:
            jar = {}

        session = new_session(
            binding.user_id, binding.federated_name, outcome.methods, outcome.issued_at, now
        )
        session.upstream_cookies = jar
        self.sessions.create(session)
        self.audit.append(
            at=now, decision=AUDIT_LOGIN, user_id=binding.user_id,
            session_id=session.id, page="-", reason=",".join(sorted(outcome.methods)),
        )
        response = RedirectResponse(target, status_code=302)
        response.set_cookie(
            self.config.session_cookie_name, session.id,
            httponly=True, samesite="lax", path="/",
        )
        return response

    def _reject_sso(self, reason: str, now: float, user_id: str = "-") -> Response:
        self.audit.append(
            at=now, decision=AUDIT_SSO_REJECTED, user_id=user_id, page="-", reason=reason
        )
        return _render_page(
            403, "Sign-on rejected", "The sign-on response was not accepted.",
            marker=f"gate:sso-rejected reason={reason}",
        )

    # --- presence endpoints ---

    def beacon(self, cookies: Mapping[str, str], form: Mapping[str, str]) -> Response:
        session_id = cookies.get(self.config.session_cookie_name)
        if not session_id:
            return PlainTextResponse("gone", status_code=410)
        try:
            state = heartbeat(
                self.sessions,
                session_id,
                user_active=form.get("active") == "1",
                token_present=form.get("token") == "1",
                now=self.clock.time(),
                config=self.config.presence,
            )
        except UnknownSession:
            return PlainTextResponse("gone", status_code=410)
        return PlainTextResponse("green" if state.status == "green" else "red")

    def logout(self, cookies: Mapping[str, str]) -> Response:
        now = self.clock.time()
        session_id = cookies.get(self.config.session_cookie_name)
        if session_id:
            terminate_session(
                self.sessions, self.audit, session_id, END_LOGOUT, now, decision=AUDIT_LOGOUT
            )
        response = _render_page(200, "Signed out", "Your session has ended.")
        response.delete_cookie(self.config.session_cookie_name, path="/")
        return response

    def sweep(self) -> list[str]:
        from .presence import sweep as presence_sweep

        return presence_sweep(self.sessions, self.audit, self.clock.time(), self.config.presence)

    # --- upstream plumbing ---

    def upstream_login(self, binding: "UserBinding") -> dict[str, str]:
        """Sign in to the host app with the user's stored upstream account."""
        login = self.config.upstream_login
        credentials = binding.upstream_credentials
        if credentials is None:
            raise UpstreamLoginFailed(f"{binding.user_id}: no upstream credentials on file")
        try:
            response = self.upstream.request(
                login.page.method,
                login.page.path,
                data={
                    login.user_field: credentials.username,
                    login.secret_field: credentials.secret,
                },
                headers={"cookie": ""},
                follow_redirects=False,
            )
        except httpx.HTTPError as exc:
            raise UpstreamLoginFailed(f"login request failed: {exc}") from exc
        finally:
            self.upstream.cookies.clear()
        if response.status_code >= 400:
            raise UpstreamLoginFailed(f"login page returned {response.status_code}")
        if login.failure_marker and login.failure_marker in response.text:
            raise UpstreamLoginFailed("login page reported failure")
        jar: dict[str, str] = {}
        _absorb_set_cookies(jar, response)
        if not jar:
            raise UpstreamLoginFailed("login did not establish an upstream session")
        return jar

    def _forward(
        self,
        method: str,
        target: str,
        headers: Mapping[str, str],
        body: bytes,
        jar: Mapping[str, str],
    ) -> httpx.Response:
        out = {}
        for name, value in headers.items():
            if name.lower() in _REQUEST_DROP:
                continue
            out[name] = value
        # the client's cookies never travel upstream; the server-held jar does
        out["cookie"] = "; ".join(f"{n}={v}" for n, v in sorted(jar.items()))
        try:
            response = self.upstream.request(
                method, target, content=body, headers=out, follow_redirects=False
            )
        except httpx.HTTPError as exc:
            raise UpstreamUnreachable(str(exc)) from exc
        finally:
            self.upstream.cookies.clear()
        return response

    def _absorb_cookies(self, session, response: httpx.Response) -> None:
        _absorb_set_cookies(session.upstream_cookies, response)

    def _respond(self, upstream_response: httpx.Response, gateway_origin: str) -> Response:
        headers_out: dict[str, str] = {}
        for name, value in upstream_response.headers.items():
            lname = name.lower()
            if lname in _RESPONSE_DROP:
                continue
            if lname == "location" and self.config.rewrite.rewrite_origin_links:
                value = value.replace(self.config.upstream_origin, gateway_origin)
            headers_out[name] = value
        content = upstream_response.content
        content_type = upstream_response.headers.get("content-type", "")
        if content_type.lower().startswith("text/html"):
            content = rewrite_html(
                content,
                upstream_origin=self.config.upstream_origin,
                gateway_origin=gateway_origin,
                rewrite=self.config.rewrite,
                beacon_period=self.config.presence.beacon_period,
            )
        return Response(
            content=content,
            status_code=upstream_response.status_code,
            headers=headers_out,
        )


def _absorb_set_cookies(jar: dict[str, str], response: httpx.Response) -> None:
    for raw in response.headers.get_list("set-cookie"):
        parsed = SimpleCookie()
        try:
            parsed.load(raw)
        except Exception:
            continue
        for name, morsel in parsed.items():
            if morsel.value:
                jar[name] = morsel.value
            else:
                jar.pop(name, None)


# --- HTTP app ----------------------------------------------------------------------

def build_gateway_app(gateway: Gateway, admin_router=None, ui_dir=None) -> FastAPI:
    from starlette.concurrency import run_in_threadpool

    app = FastAPI(title="workflow-gate", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.gateway = gateway

    def _origin(request: Request) -> str:
        host = request.headers.get("host") or gateway.config.listen_address
        return f"http://{host}"

    @app.get("/__gate/sso/return")
    async def sso_return(request: Request) -> Response:
        return await run_in_threadpool(
            gateway.sso_return,
            request.query_params.get("assertion", ""),
            request.query_params.get("resume", ""),
        )

    @app.post("/__gate/beacon")
    async def beacon(request: Request) -> Response:
        raw = (await request.body()).decode("utf-8", errors="replace")
        form = {name: values[-1] for name, values in parse_qs(raw, keep_blank_values=True).items()}
        return await run_in_threadpool(gateway.beacon, request.cookies, form)

    @app.post("/__gate/logout")
    async def logout(request: Request) -> Response:
        return await run_in_threadpool(gateway.logout, request.cookies)

    if admin_router is not None:
        app.include_router(admin_router)

    if ui_dir is not None:
        from starlette.staticfiles import StaticFiles

        app.mount("/admin/ui", StaticFiles(directory=ui_dir, html=True), name="admin-ui")

    @app.api_route("/{path:path}", methods=["GET", "POST"])
    async def catchall(request: Request, path: str) -> Response:
        body = await request.body()
        return await run_in_threadpool(
            gateway.intercept,
            request.method,
            "/" + path,
            request.url.query,
            request.headers,
            request.cookies,
            body,
            _origin(request),
        )

    return app
