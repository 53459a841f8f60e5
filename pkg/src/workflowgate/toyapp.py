"""Bundled demo host application.

A deliberately ordinary little shop: its own form login and cookie, a
search page, item detail pages, and a sell action.  It knows nothing
about the gateway sitting in front of it; tests use it as the upstream
end-to-end fixture and inspect `app.state.hits` to prove that nothing
reaches it without the gateway's consent.
"""

from __future__ import annotations

import html
import secrets

from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, RedirectResponse

DEFAULT_ACCOUNTS = {"alice-app": "s3cret", "bob-app": "hunter2"}

CATALOG = [
    {"sku": "A-7", "name": "Widget"},
    {"sku": "B-2", "name": "Gadget"},
    {"sku": "C-9", "name": "Sprocket"},
]


def _page(title: str, body: str, origin: str) -> HTMLResponse:
    return HTMLResponse(
        "<!doctype html>\n<html>\n<head><title>"
        + html.escape(title)
        + "</title></head>\n<body>\n<h1>"
        + html.escape(title)
        + "</h1>\n"
        + body
        + f'\n<p><a href="{origin}/">home</a></p>\n</body>\n</html>\n'
    )


def build_toy_app(accounts: dict[str, str] | None = None) -> FastAPI:
    app = FastAPI(title="toyshop", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.hits = []
    app.state.accounts = dict(accounts or DEFAULT_ACCOUNTS)
    app.state.sessions = {}

    def origin(request: Request) -> str:
        host = request.headers.get("host", "localhost")
        return f"http://{host}"

    def record_hit(request: Request) -> None:
        app.state.hits.append((request.method, request.url.path))

    def current_user(request: Request) -> str | None:
        sid = request.cookies.get("app_sid")
        return app.state.sessions.get(sid) if sid else None

    @app.get("/")
    async def home(request: Request) -> HTMLResponse:
        record_hit(request)
        user = current_user(request)
        if user is None:
            body = (
                '<form method="post" action="/login">'
                '<input name="username"><input name="password" type="password">'
                "<button>Log in</button></form>"
            )
            return _page("Toy Shop", body, origin(request))
        body = (
            f"<p>Signed in as {html.escape(user)}.</p>"
            f'<p><a href="{origin(request)}/search">search the catalog</a></p>'
        )
        return _page("Toy Shop", body, origin(request))

    @app.post("/login")
    async def login(request: Request):
        record_hit(request)
        form = await request.form()
        username = str(form.get("username", ""))
        password = str(form.get("password", ""))
        if app.state.accounts.get(username) != password:
            return _page("Login failed", "<p>Bad credentials.</p>", origin(request))
        sid = secrets.token_hex(8)
        app.state.sessions[sid] = username
        response = RedirectResponse(f"{origin(request)}/", status_code=303)
        response.set_cookie("app_sid", sid, httponly=True)
        return response

    def require_login(request: Request) -> HTMLResponse | None:
        if current_user(request) is None:
            return _page("Not signed in", "<p>Please log in first.</p>", origin(request))
        return None

    @app.get("/search")
    async def search_form(request: Request) -> HTMLResponse:
        record_hit(request)
        guard = require_login(request)
        if guard is not None:
            return guard
        body = (
            '<form method="post" action="/search">'
            '<input name="q"><button>Search</button></form>'
        )
        return _page("Search", body, origin(request))

    @app.post("/search")
    async def search(request: Request) -> HTMLResponse:
        record_hit(request)
        guard = require_login(request)
        if guard is not None:
            return guard
        form = await request.form()
        q = str(form.get("q", "")).lower()
        rows = [
            f'<li><a href="{origin(request)}/detail?id={item["sku"]}">'
            f'{html.escape(item["name"])} ({item["sku"]})</a></li>'
            for item in CATALOG
            if q in item["name"].lower() or q in item["sku"].lower()
        ]
        return _page("Results", "<ul>" + "".join(rows) + "</ul>", origin(request))

    @app.get("/detail")
    async def detail(request: Request) -> HTMLResponse:
        record_hit(request)
        guard = require_login(request)
        if guard is not None:
            return guard
        sku = request.query_params.get("id", "")
        item = next((it for it in CATALOG if it["sku"] == sku), None)
        if item is None:
            return _page("Unknown item", "<p>No such item.</p>", origin(request))
        body = (
            f'<p>{html.escape(item["name"])}, stock keeping unit {item["sku"]}</p>'
            f'<form method="post" action="/sell">'
            f'<input type="hidden" name="sku" value="{item["sku"]}">'
            "<button>Sell one</button></form>"
        )
        return _page(item["name"], body, origin(request))

    @app.post("/sell")
    async def sell(request: Request) -> HTMLResponse:
        record_hit(request)
        guard = require_login(request)
        if guard is not None:
            return guard
        form = await request.form()
        sku = str(form.get("sku", ""))
        return _page("Sold", f"<p>Sold one unit of {html.escape(sku)}.</p>", origin(request))

    return app
