"""End-to-end harness: toy upstream, gateway, IDP, admin client, browser."""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

import pytest
from starlette.testclient import TestClient

sys.path.insert(0, str(Path(__file__).parent))

from helpers import Browser, page  # noqa: E402

from workflowgate.clock import ManualClock
from workflowgate.federation import (
    CircleOfTrust,
    IdentityProvider,
    SpEntry,
    build_idp_app,
)
from workflowgate.model import (
    ParamRule,
    PasswordHash,
    Policy,
    Role,
    SetFilter,
    SetQueryDef,
    TokenBinding,
    Transition,
    UpstreamCredentials,
    User,
    Workflow,
)
from workflowgate.admin import build_admin_router
from workflowgate.proxy import (
    Gateway,
    GatewayConfig,
    UpstreamLoginConfig,
    build_gateway_app,
)
from workflowgate.store import (
    AuditLog,
    IdbFacade,
    MemoryHostOracle,
    Registry,
    SessionStore,
)
from workflowgate.toyapp import build_toy_app
from workflowgate.training import RecordingBook

GATE = "http://gate.internal"
IDP = "http://idp.internal"
SHOP = "http://shop.internal"

ADMIN_TOKEN = "test-admin-token"
SHARED_KEY = bytes(range(32))

FIXTURES = Path(__file__).parent / "fixtures"

# carol holds a token; dave has no upstream account on the toy shop
ACCOUNTS = {
    "alice-app": "s3cret",
    "bob-app": "hunter2",
    "carol-app": "letmein",
    "trent-app": "train3r",
}

PASSWORDS = {
    "alice": "alice-pw",
    "bob": "bob-pw",
    "carol": "carol-pw",
    "dave": "dave-pw",
    "trent": "trent-pw",
}

CAROL_TOKEN = ("88", "4321")


def shop_workflow() -> Workflow:
    """Browse, search, inspect, sell, return home; sell gated by host stock."""
    sell_rule = ParamRule.set_query(
        SetQueryDef("stock", "sku", (SetFilter("in_stock", value="1"),))
    )
    transitions = (
        Transition(0, "s0", "s1", page("GET /"), {}),
        Transition(1, "s1", "s2", page("GET /search"), {}),
        Transition(2, "s2", "s3", page("POST /search"), {"q": ParamRule.any()}),
        Transition(3, "s3", "s4", page("GET /detail"), {"id": ParamRule.regex(r"[A-Z]-[0-9]")}),
        Transition(4, "s4", "s5", page("POST /sell"), {"sku": sell_rule}),
        Transition(5, "s5", "s1", page("GET /"), {}),
    )
    return Workflow(
        id="wf-shop",
        name="shop visit",
        states=frozenset(f"s{i}" for i in range(6)),
        start_state="s0",
        start_page=page("GET /"),
        transitions=transitions,
    )


def vault_workflow() -> Workflow:
    transitions = (
        Transition(0, "s0", "s1", page("GET /search"), {}),
        Transition(1, "s1", "s2", page("POST /search"), {"q": ParamRule.literal("vault")}),
    )
    return Workflow(
        id="wf-vault",
        name="vault check",
        states=frozenset({"s0", "s1", "s2"}),
        start_state="s0",
        start_page=page("GET /search"),
        transitions=transitions,
    )


def base_policy() -> Policy:
    return Policy(
        workflows={"wf-shop": shop_workflow(), "wf-vault": vault_workflow()},
        roles={
            "shopper": Role("shopper", "Shopper", frozenset({"wf-shop"}), frozenset({"password"})),
            "vault": Role("vault", "Vault", frozenset({"wf-vault"}), frozenset({"password", "token"})),
            "trainee": Role("trainee", "Trainee", frozenset(), frozenset({"password"})),
        },
    )


def base_users() -> dict[str, User]:
    def user(uid, name, roles, upstream, token=None):
        return User(
            id=uid,
            federated_name=name,
            role_ids=frozenset(roles),
            idp_id="idp",
            password=PasswordHash.create(PASSWORDS[name]),
            token_binding=token,
            upstream_credentials=upstream,
        )

    return {
        "u-alice": user("u-alice", "alice", {"shopper"}, UpstreamCredentials("alice-app", "s3cret")),
        "u-bob": user("u-bob", "bob", {"shopper"}, UpstreamCredentials("bob-app", "hunter2")),
        "u-carol": user(
            "u-carol", "carol", {"vault"}, UpstreamCredentials("carol-app", "letmein"),
            token=TokenBinding(*CAROL_TOKEN),
        ),
        "u-dave": user("u-dave", "dave", {"shopper"}, None),
        "u-trent": user("u-trent", "trent", {"trainee"}, UpstreamCredentials("trent-app", "train3r")),
    }


@dataclass
class Harness:
    clock: ManualClock
    toy_app: object
    gateway: Gateway
    app: object
    idp_app: object
    idp: IdentityProvider
    registry: Registry
    sessions: SessionStore
    audit: AuditLog
    recordings: RecordingBook
    oracle: MemoryHostOracle
    admin: TestClient

    def make_browser(self) -> Browser:
        return Browser({GATE: self.app, IDP: self.idp_app})

    def login(
        self,
        browser: Browser,
        username: str,
        password: str | None = None,
        firmcode: str = "",
        usercode: str = "",
        path: str = "/",
        follow: bool = True,
    ):
        """Full SSO dance; returns the final response (page or rejection)."""
        first = browser.get(GATE + path, follow=False)
        assert first.status_code == 302, first.status_code
        location = first.headers["location"]
        assert location.startswith(IDP), location
        query = parse_qs(urlsplit(location).query)
        return browser.post(
            IDP + "/idp/login",
            data={
                "user": username,
                "password": PASSWORDS[username] if password is None else password,
                "firmcode": firmcode,
                "usercode": usercode,
                "sp": query["sp"][0],
                "resume": query["resume"][0],
            },
            follow=follow,
        )

    def session_id(self, browser: Browser) -> str | None:
        return browser.clients[GATE].cookies.get("gate_session")

    def upstream_hits(self) -> list[tuple[str, str]]:
        return list(self.toy_app.state.hits)


def make_harness(
    policy: Policy | None = None,
    users: dict[str, User] | None = None,
    with_upstream_login: bool = True,
) -> Harness:
    clock = ManualClock()
    toy_app = build_toy_app(ACCOUNTS)
    upstream = TestClient(toy_app, base_url=SHOP)
    registry = Registry(
        policy if policy is not None else base_policy(),
        users if users is not None else base_users(),
    )
    sessions = SessionStore()
    audit = AuditLog()
    recordings = RecordingBook()
    oracle = MemoryHostOracle.from_fixture_file(FIXTURES / "stock.tsv")
    config = GatewayConfig(
        upstream_origin=SHOP,
        sp_id="gate",
        idp_login_url=IDP + "/idp/login",
        upstream_login=UpstreamLoginConfig(page=page("POST /login")) if with_upstream_login else None,
    )
    gateway = Gateway(
        config,
        registry=registry,
        sessions=sessions,
        audit=audit,
        recordings=recordings,
        clock=clock,
        upstream_client=upstream,
        shared_key=SHARED_KEY,
        oracle=oracle,
    )
    app = build_gateway_app(gateway, admin_router=build_admin_router(gateway, ADMIN_TOKEN))
    cot = CircleOfTrust(
        idp_id="idp",
        sp_entries={"gate": SpEntry(shared_key=SHARED_KEY, return_url=GATE + "/__gate/sso/return")},
    )
    idp = IdentityProvider(cot, IdbFacade(registry), clock, assertion_ttl=300)
    idp_app = build_idp_app(idp)
    admin = TestClient(app, base_url=GATE)
    admin.headers.update({"Authorization": f"Bearer {ADMIN_TOKEN}"})
    return Harness(
        clock=clock,
        toy_app=toy_app,
        gateway=gateway,
        app=app,
        idp_app=idp_app,
        idp=idp,
        registry=registry,
        sessions=sessions,
        audit=audit,
        recordings=recordings,
        oracle=oracle,
        admin=admin,
    )


@pytest.fixture
def harness() -> Harness:
    return make_harness()


@pytest.fixture
def harness_no_upstream_login() -> Harness:
    return make_harness(with_upstream_login=False)
