"""Command-line interface.

`gate serve` runs the gateway (plus a co-hosted IDP and the presence
sweeper) from one TOML config file; `gate toyapp` runs the bundled demo
upstream.  Every other verb is a thin HTTP client for the admin API, so
the CLI can drive a gateway running anywhere.
"""

from __future__ import annotations

import secrets
import sys
import threading
from dataclasses import dataclass
from pathlib import Path

import click
import httpx

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .clock import SystemClock
from .federation import CircleOfTrust, IdentityProvider, SpEntry, build_idp_app
from .model import PageId
from .presence import PresenceConfig
from .proxy import Gateway, GatewayConfig, RewriteConfig, UpstreamLoginConfig, build_gateway_app
from .store import IdbFacade, MemoryHostOracle, SessionStore, open_stores
from .training import RecordingBook


# --- config file -----------------------------------------------------------------

@dataclass
class AppConfig:
    gateway: GatewayConfig
    shared_key: bytes
    admin_token: str
    data_dir: Path | None
    oracle_path: Path | None
    idp_enabled: bool
    idp_id: str
    idp_listen: str
    assertion_ttl: int
    ui_dir: Path | None


def _presence_from(doc: dict) -> PresenceConfig:
    defaults = PresenceConfig()
    return PresenceConfig(
        beacon_period=float(doc.get("beacon_period", defaults.beacon_period)),
        activity_window=float(doc.get("activity_window", defaults.activity_window)),
        inactivity_timeout=float(doc.get("inactivity_timeout", defaults.inactivity_timeout)),
        token_grace=float(doc.get("token_grace", defaults.token_grace)),
        beacon_timeout=float(doc.get("beacon_timeout", defaults.beacon_timeout)),
        sweep_period=float(doc.get("sweep_period", defaults.sweep_period)),
    )


def load_config(path: Path, admin_token_env: str | None) -> AppConfig:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)

    gw = doc.get("gateway", {})
    upstream = gw.get("upstream_origin")
    if not upstream:
        raise click.ClickException("config: [gateway].upstream_origin is required")
    shared_key_hex = gw.get("shared_key_hex")
    if not shared_key_hex:
        raise click.ClickException("config: [gateway].shared_key_hex is required")
    try:
        shared_key = bytes.fromhex(shared_key_hex)
    except ValueError:
        raise click.ClickException("config: shared_key_hex is not hex")

    upstream_login = None
    if "upstream_login" in doc:
        ul = doc["upstream_login"]
        upstream_login = UpstreamLoginConfig(
            page=PageId.parse(ul.get("page", "POST /login")),
            user_field=ul.get("user_field", "username"),
            secret_field=ul.get("secret_field", "password"),
            failure_marker=ul.get("failure_marker"),
        )

    rewrite_doc = doc.get("rewrite", {})
    rewrite = RewriteConfig(
        inject_beacon=bool(rewrite_doc.get("inject_beacon", True)),
        rewrite_origin_links=bool(rewrite_doc.get("rewrite_origin_links", True)),
    )

    idp_doc = doc.get("idp", {})
    idp_enabled = bool(idp_doc.get("enabled", True))
    idp_listen = idp_doc.get("listen", "127.0.0.1:8801")
    idp_login_url = gw.get("idp_login_url", f"http://{idp_listen}/idp/login")

    base_page = gw.get("base_page")
    config = GatewayConfig(
        upstream_origin=upstream,
        sp_id=gw.get("sp_id", "gate"),
        idp_login_url=idp_login_url,
        listen_address=gw.get("listen", "127.0.0.1:8800"),
        base_page=PageId.parse(base_page) if base_page else None,
        max_assertion_age=float(gw.get("max_assertion_age", 28_800)),
        session_cookie_name=gw.get("session_cookie_name", "gate_session"),
        upstream_login=upstream_login,
        rewrite=rewrite,
        presence=_presence_from(doc.get("presence", {})),
    )

    admin_token = admin_token_env or doc.get("admin", {}).get("token", "")
    data_dir = doc.get("storage", {}).get("data_dir")
    oracle_path = doc.get("oracle", {}).get("fixture")
    ui_dir = doc.get("admin", {}).get("ui_dir")
    return AppConfig(
        gateway=config,
        shared_key=shared_key,
        admin_token=admin_token,
        data_dir=Path(data_dir) if data_dir else None,
        oracle_path=Path(oracle_path) if oracle_path else None,
        idp_enabled=idp_enabled,
        idp_id=idp_doc.get("id", "idp"),
        idp_listen=idp_listen,
        assertion_ttl=int(idp_doc.get("assertion_ttl", 300)),
        ui_dir=Path(ui_dir) if ui_dir else None,
    )


def _split_listen(listen: str) -> tuple[str, int]:
    host, _, port = listen.rpartition(":")
    return host or "127.0.0.1", int(port)


# --- admin API client ---------------------------------------------------------------

class AdminClient:
    def __init__(self, base_url: str, token: str):
        if not token:
            raise click.ClickException(
                "admin token required (set GATE_ADMIN_TOKEN or pass --token)"
            )
        self._http = httpx.Client(
            base_url=base_url.rstrip("/") + "/admin/api/v1",
            headers={"Authorization": f"Bearer {token}"},
            timeout=10.0,
        )

    def request(self, method: str, path: str, **kwargs):
        try:
            response = self._http.request(method, path, **kwargs)
        except httpx.HTTPError as exc:
            raise click.ClickException(f"gateway unreachable: {exc}")
        if response.status_code >= 400:
            raise click.ClickException(f"{response.status_code}: {response.text}")
        return response


def _client(ctx: click.Context) -> AdminClient:
    return AdminClient(ctx.obj["url"], ctx.obj["token"])


# --- commands -----------------------------------------------------------------------

@click.group()
@click.option("--url", default="http://127.0.0.1:8800", envvar="GATE_URL", show_default=True,
              help="Gateway base URL for client verbs.")
@click.option("--token", default="", envvar="GATE_ADMIN_TOKEN",
              help="Admin API token (env GATE_ADMIN_TOKEN).")
@click.pass_context
def main(ctx: click.Context, url: str, token: str) -> None:
    """Workflow gateway: record workflows once, then allow nothing else."""
    ctx.ensure_object(dict)
    ctx.obj["url"] = url
    ctx.obj["token"] = token


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.pass_context
def serve(ctx: click.Context, config_path: Path) -> None:
    """Run the gateway (and, unless disabled, a co-hosted IDP)."""
    import uvicorn

    app_config = load_config(config_path, ctx.obj.get("token") or None)
    admin_token = app_config.admin_token
    if not admin_token:
        admin_token = secrets.token_hex(16)
        click.echo(f"admin token (generated for this run): {admin_token}", err=True)

    registry, audit = open_stores(app_config.data_dir)
    oracle = None
    if app_config.oracle_path is not None:
        if app_config.oracle_path.is_dir():
            oracle = MemoryHostOracle.from_fixture_dir(app_config.oracle_path)
        else:
            oracle = MemoryHostOracle.from_fixture_file(app_config.oracle_path)

    clock = SystemClock()
    sessions = SessionStore()
    recordings = RecordingBook()
    upstream = httpx.Client(
        base_url=app_config.gateway.upstream_origin, trust_env=False, timeout=30.0
    )
    gateway = Gateway(
        app_config.gateway,
        registry=registry,
        sessions=sessions,
        audit=audit,
        recordings=recordings,
        clock=clock,
        upstream_client=upstream,
        shared_key=app_config.shared_key,
        oracle=oracle,
    )
    from .admin import build_admin_router

    ui_dir = app_config.ui_dir if app_config.ui_dir and app_config.ui_dir.is_dir() else None
    app = build_gateway_app(
        gateway, admin_router=build_admin_router(gateway, admin_token), ui_dir=ui_dir
    )

    stop = threading.Event()

    def sweeper() -> None:
        while not stop.wait(app_config.gateway.presence.sweep_period):
            gateway.sweep()

    threading.Thread(target=sweeper, daemon=True, name="gate-sweeper").start()

    if app_config.idp_enabled:
        cot = CircleOfTrust(
            idp_id=app_config.idp_id,
            sp_entries={
                app_config.gateway.sp_id: SpEntry(
                    shared_key=app_config.shared_key,
                    return_url=f"http://{app_config.gateway.listen_address}/__gate/sso/return",
                )
            },
        )
        idp = IdentityProvider(
            cot, IdbFacade(registry), clock, assertion_ttl=app_config.assertion_ttl
        )
        idp_app = build_idp_app(idp)
        idp_host, idp_port = _split_listen(app_config.idp_listen)
        idp_server = uvicorn.Server(
            uvicorn.Config(idp_app, host=idp_host, port=idp_port, log_level="warning")
        )
        threading.Thread(target=idp_server.run, daemon=True, name="gate-idp").start()
        click.echo(f"idp listening on http://{app_config.idp_listen}/idp/login", err=True)

    host, port = _split_listen(app_config.gateway.listen_address)
    click.echo(f"gateway listening on http://{host}:{port}", err=True)
    try:
        uvicorn.run(app, host=host, port=port, log_level="info")
    finally:
        stop.set()
        audit.close()


@main.command()
@click.option("--listen", default="127.0.0.1:9000", show_default=True)
@click.option(
    "--account",
    "accounts",
    multiple=True,
    metavar="NAME:SECRET",
    help="Extra login account (repeatable); defaults stay available.",
)
def toyapp(listen: str, accounts: tuple[str, ...]) -> None:
    """Run the bundled demo host application."""
    import uvicorn

    from .toyapp import DEFAULT_ACCOUNTS, build_toy_app

    table = dict(DEFAULT_ACCOUNTS)
    for entry in accounts:
        name, sep, secret = entry.partition(":")
        if not sep or not name:
            raise click.ClickException(f"bad --account {entry!r}, expected NAME:SECRET")
        table[name] = secret
    host, port = _split_listen(listen)
    uvicorn.run(build_toy_app(table), host=host, port=port, log_level="info")


# --- recordings ---

@main.group()
def record() -> None:
    """Control training recordings."""


@record.command("start")
@click.argument("name")
@click.option("--trainer", required=True, help="Federated name whose session trains.")
@click.pass_context
def record_start(ctx: click.Context, name: str, trainer: str) -> None:
    doc = _client(ctx).request("POST", "/recordings", json={"name": name, "trainer": trainer}).json()
    click.echo(f"recording {doc['id']} started (trainer {doc['trainer']})")


@record.command("stop")
@click.argument("recording_id")
@click.pass_context
def record_stop(ctx: click.Context, recording_id: str) -> None:
    doc = _client(ctx).request("POST", f"/recordings/{recording_id}/stop").json()
    click.echo(f"recording {doc['id']} stopped with {doc['next_cursor']} steps")


@record.command("promote")
@click.argument("recording_id")
@click.option("--role", required=True)
@click.option("--workflow-id", default=None)
@click.pass_context
def record_promote(ctx: click.Context, recording_id: str, role: str, workflow_id: str | None) -> None:
    payload = {"role": role}
    if workflow_id:
        payload["workflow_id"] = workflow_id
    doc = _client(ctx).request("POST", f"/recordings/{recording_id}/promote", json=payload).json()
    click.echo(f"workflow {doc['workflow']['id']} added to role {doc['role']}")


# --- users ---

@main.group()
def user() -> None:
    """Manage users."""


@user.command("add")
@click.argument("user_id")
@click.option("--federated-name", required=True)
@click.option("--password", required=True)
@click.option("--role", "roles", multiple=True, required=True)
@click.option("--idp", default="idp", show_default=True)
@click.option("--firmcode", default=None)
@click.option("--usercode", default=None)
@click.option("--upstream-user", default=None)
@click.option("--upstream-secret", default=None)
@click.pass_context
def user_add(ctx, user_id, federated_name, password, roles, idp, firmcode, usercode,
             upstream_user, upstream_secret) -> None:
    payload = {
        "id": user_id,
        "federated_name": federated_name,
        "password": password,
        "role_ids": list(roles),
        "idp": idp,
    }
    if firmcode and usercode:
        payload["token"] = {"firmcode": firmcode, "usercode": usercode}
    if upstream_user and upstream_secret:
        payload["upstream"] = {"username": upstream_user, "secret": upstream_secret}
    _client(ctx).request("POST", "/users", json=payload)
    click.echo(f"user {user_id} created")


@user.command("list")
@click.pass_context
def user_list(ctx: click.Context) -> None:
    doc = _client(ctx).request("GET", "/users").json()
    for entry in doc["users"]:
        roles = ",".join(entry["role_ids"])
        click.echo(f"{entry['id']}\t{entry['federated_name']}\t{roles}")


# --- roles ---

@main.group()
def role() -> None:
    """Manage roles."""


@role.command("add")
@click.argument("role_id")
@click.option("--name", default=None)
@click.option("--workflow", "workflows", multiple=True)
@click.option("--auth", "auth_methods", multiple=True, default=("password",), show_default=True)
@click.pass_context
def role_add(ctx, role_id, name, workflows, auth_methods) -> None:
    payload = {
        "id": role_id,
        "name": name or role_id,
        "workflow_ids": list(workflows),
        "required_auth": list(auth_methods),
    }
    _client(ctx).request("POST", "/roles", json=payload)
    click.echo(f"role {role_id} created")


@role.command("list")
@click.pass_context
def role_list(ctx: click.Context) -> None:
    doc = _client(ctx).request("GET", "/roles").json()
    for entry in doc["roles"]:
        wfs = ",".join(entry["workflow_ids"]) or "-"
        click.echo(f"{entry['id']}\t{wfs}\t{','.join(entry['required_auth'])}")


# --- policy transfer ---

@main.command("export")
@click.option("-o", "--output", type=click.Path(path_type=Path), default=None)
@click.pass_context
def export_cmd(ctx: click.Context, output: Path | None) -> None:
    """Download the policy database as XML."""
    data = _client(ctx).request("GET", "/export").content
    if output is None:
        sys.stdout.buffer.write(data)
    else:
        output.write_bytes(data)
        click.echo(f"wrote {output}")


@main.command("import")
@click.argument("file", type=click.Path(exists=True, path_type=Path))
@click.pass_context
def import_cmd(ctx: click.Context, file: Path) -> None:
    """Upload a policy database XML document."""
    doc = _client(ctx).request(
        "POST", "/import", content=file.read_bytes(),
        headers={"Content-Type": "application/xml"},
    ).json()
    click.echo(
        f"imported {doc['workflows']} workflows, {doc['roles']} roles, "
        f"{doc['exclusions']} exclusions, {doc['users']} users"
    )


# --- audit ---

@main.group()
def audit() -> None:
    """Inspect the audit trail."""


@audit.command("tail")
@click.option("-n", "count", default=20, show_default=True)
@click.option("--user", default=None)
@click.pass_context
def audit_tail(ctx: click.Context, count: int, user: str | None) -> None:
    params = {}
    if user:
        params["user"] = user
    doc = _client(ctx).request("GET", "/audit", params=params).json()
    for rec in doc["records"][-count:]:
        reason = f" {rec['reason']}" if rec["reason"] else ""
        click.echo(
            f"{rec['seq']}\t{rec['at']:.3f}\t{rec['user_id']}\t{rec['session_prefix']}\t"
            f"{rec['decision']}\t{rec['page']}{reason}"
        )


if __name__ == "__main__":
    main()
