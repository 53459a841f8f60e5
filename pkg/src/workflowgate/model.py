"""Policy data model: pages, parameter rules, workflows, roles, users.

Everything in this module is a plain value.  Mutation, persistence and
concurrency live in the store; decisions live in the monitor.  The XML
codec in `training` and the admin API both serialise exactly these types,
so their invariants are checked here, once.
"""

from __future__ import annotations

import hashlib
import hmac
import re
import secrets
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence
from urllib.parse import parse_qs, unquote

from .errors import (
    InvalidRegex,
    InvalidSetQuery,
    OracleUnavailable,
    UnknownRole,
)

HTTP_METHODS = ("GET", "POST")

RULE_LITERAL = "literal"
RULE_REGEX = "regex"
RULE_SET = "set"
RULE_ANY = "any"
RULE_KINDS = (RULE_LITERAL, RULE_REGEX, RULE_SET, RULE_ANY)

METHOD_PASSWORD = "password"
METHOD_TOKEN = "token"
AUTH_METHODS = (METHOD_PASSWORD, METHOD_TOKEN)

# columns/tables in set queries; also used for state ids
_IDENTIFIER_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
# workflow/role/user/exclusion ids; must survive XML attrs and URL segments
_ENTITY_ID_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9_.-]*\Z")

_PBKDF2_ITERATIONS = 60_000


def is_identifier(text: str) -> bool:
    return bool(_IDENTIFIER_RE.match(text))


def is_entity_id(text: str) -> bool:
    return bool(_ENTITY_ID_RE.match(text))


# --- pages ----------------------------------------------------------------

def normalize_path(raw: str) -> str:
    """Canonical URL path: no query/fragment, percent-decoded, no trailing /.

    Decoding runs to a fixpoint so that double-encoded paths cannot alias a
    policy page (normalize is idempotent by construction).
    """
    path = raw.split("?", 1)[0].split("#", 1)[0]
    for _ in range(8):
        decoded = unquote(path)
        if decoded == path:
            break
        path = decoded
    if not path.startswith("/"):
        path = "/" + path
    while len(path) > 1 and path.endswith("/"):
        path = path[:-1]
    return path


@dataclass(frozen=True, order=True)
class PageId:
    """A request target: HTTP method plus canonical URL path."""

    method: str
    path: str

    def __post_init__(self):
        if self.method not in HTTP_METHODS:
            raise ValueError(f"unsupported method {self.method!r}")
        object.__setattr__(self, "path", normalize_path(self.path))

    @classmethod
    def of(cls, method: str, raw_path: str) -> "PageId":
        return cls(method.upper(), raw_path)

    @classmethod
    def parse(cls, label: str) -> "PageId":
        method, _, path = label.partition(" ")
        if not path:
            raise ValueError(f"bad page label {label!r}")
        return cls(method.upper(), path)

    def label(self) -> str:
        return f"{self.method} {self.path}"


# --- parameter rules --------------------------------------------------------

@dataclass(frozen=True)
class SetFilter:
    """One conjunct of a set query: column equals a literal or a request param."""

    column: str
    value: str | None = None
    param: str | None = None

    def __post_init__(self):
        if not is_identifier(self.column):
            raise InvalidSetQuery(f"bad filter column {self.column!r}")
        if (self.value is None) == (self.param is None):
            raise InvalidSetQuery("filter needs exactly one of value/param")


@dataclass(frozen=True)
class SetQueryDef:
    """Conjunctive equality query: SELECT column FROM table WHERE filters."""

    table: str
    column: str
    filters: tuple[SetFilter, ...] = ()

    def __post_init__(self):
        if not is_identifier(self.table):
            raise InvalidSetQuery(f"bad table {self.table!r}")
        if not is_identifier(self.column):
            raise InvalidSetQuery(f"bad column {self.column!r}")
        object.__setattr__(self, "filters", tuple(self.filters))


@dataclass(frozen=True)
class ParamRule:
    """Constraint on a single request parameter.

    literal: byte-exact match.  regex: full-match (implicitly anchored).
    set: value must be in the result of a host-state query.  any: always
    matches, but the parameter must still be present.
    """

    kind: str
    value: str | None = None
    pattern: str | None = None
    query: SetQueryDef | None = None

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.kind == RULE_LITERAL and self.value is None:
            raise ValueError("literal rule needs a value")
        if self.kind == RULE_REGEX:
            if self.pattern is None:
                raise InvalidRegex("regex rule needs a pattern")
            try:
                re.compile(self.pattern)
            except re.error as exc:
                raise InvalidRegex(f"{self.pattern!r}: {exc}") from exc
        if self.kind == RULE_SET and self.query is None:
            raise InvalidSetQuery("set rule needs a query")

    @classmethod
    def literal(cls, value: str) -> "ParamRule":
        return cls(RULE_LITERAL, value=value)

    @classmethod
    def regex(cls, pattern: str) -> "ParamRule":
        return cls(RULE_REGEX, pattern=pattern)

    @classmethod
    def set_query(cls, query: SetQueryDef) -> "ParamRule":
        return cls(RULE_SET, query=query)

    @classmethod
    def any(cls) -> "ParamRule":
        return cls(RULE_ANY)


class HostStateOracle(Protocol):
    """Read-only window onto host application state for set queries."""

    def select(
        self, table: str, column: str, filters: Sequence[tuple[str, str]]
    ) -> list[str]: ...


def eval_param_rule(
    rule: ParamRule,
    value: str,
    request_params: Mapping[str, Sequence[str]],
    oracle: HostStateOracle | None,
) -> bool:
    """Decide whether one parameter value satisfies one rule.

    Param-references inside set filters resolve against the full request;
    a missing or multi-valued referenced param fails the rule (closed).
    OracleUnavailable propagates so the monitor can deny explicitly.
    """
    if rule.kind == RULE_ANY:
        return True
    if rule.kind == RULE_LITERAL:
        return value == rule.value
    if rule.kind == RULE_REGEX:
        return re.fullmatch(rule.pattern, value) is not None
    # set query
    if oracle is None:
        raise OracleUnavailable("no host-state oracle configured")
    query = rule.query
    resolved: list[tuple[str, str]] = []
    for flt in query.filters:
        if flt.value is not None:
            resolved.append((flt.column, flt.value))
            continue
        referenced = request_params.get(flt.param, ())
        if len(referenced) != 1:
            return False
        resolved.append((flt.column, referenced[0]))
    matches = oracle.select(query.table, query.column, resolved)
    return value in matches


# --- workflows ---------------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    """One guarded edge of a workflow FSM."""

    id: int
    from_state: str
    to_state: str
    page: PageId
    params: Mapping[str, ParamRule] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "params", dict(self.params))
        for name in self.params:
            if not name:
                raise ValueError("empty parameter name")

    def signature(self) -> tuple:
        """Hashable identity barring the transition id (for dedup)."""
        return (
            self.from_state,
            self.to_state,
            self.page,
            tuple(sorted(self.params.items())),
        )


@dataclass(frozen=True)
class Workflow:
    id: str
    name: str
    states: frozenset[str]
    start_state: str
    start_page: PageId
    transitions: tuple[Transition, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "states", frozenset(self.states))
        object.__setattr__(self, "transitions", tuple(self.transitions))

    def transition_by_id(self, transition_id: int) -> Transition | None:
        for t in self.transitions:
            if t.id == transition_id:
                return t
        return None


def make_workflow(
    workflow_id: str,
    name: str,
    states: Iterable[str],
    start_state: str,
    start_page: PageId,
    transitions: Iterable[Transition],
) -> Workflow:
    """Build a workflow, collapsing transitions that are exact duplicates."""
    seen: dict[tuple, Transition] = {}
    kept: list[Transition] = []
    for t in transitions:
        sig = t.signature()
        if sig in seen:
            continue
        seen[sig] = t
        kept.append(t)
    return Workflow(workflow_id, name, frozenset(states), start_state, start_page, tuple(kept))


# --- principals ----------------------------------------------------------------

@dataclass(frozen=True)
class Role:
    id: str
    name: str
    workflow_ids: frozenset[str]
    required_auth: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "workflow_ids", frozenset(self.workflow_ids))
        object.__setattr__(self, "required_auth", frozenset(self.required_auth))


@dataclass(frozen=True)
class PasswordHash:
    """PBKDF2-HMAC-SHA256 password record; constant-time verification."""

    salt: bytes
    digest: bytes

    @classmethod
    def create(cls, password: str) -> "PasswordHash":
        salt = secrets.token_bytes(16)
        digest = hashlib.pbkdf2_hmac("sha256", password.encode(), salt, _PBKDF2_ITERATIONS)
        return cls(salt, digest)

    def verify(self, password: str) -> bool:
        candidate = hashlib.pbkdf2_hmac("sha256", password.encode(), self.salt, _PBKDF2_ITERATIONS)
        return hmac.compare_digest(candidate, self.digest)


@dataclass(frozen=True)
class TokenBinding:
    """Identifies the hardware token expected as a second factor."""

    firmcode: str
    usercode: str


@dataclass(frozen=True)
class UpstreamCredentials:
    """Host-application account the gateway signs in with on the user's behalf."""

    username: str
    secret: str


@dataclass(frozen=True)
class User:
    id: str
    federated_name: str
    role_ids: frozenset[str]
    idp_id: str
    password: PasswordHash
    token_binding: TokenBinding | None = None
    upstream_credentials: UpstreamCredentials | None = None

    def __post_init__(self):
        object.__setattr__(self, "role_ids", frozenset(self.role_ids))


@dataclass(frozen=True)
class ExclusionSet:
    """Workflows that must not be mixed within one session (conflict wall)."""

    id: str
    workflow_ids: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "workflow_ids", frozenset(self.workflow_ids))


@dataclass
class Policy:
    workflows: dict[str, Workflow] = field(default_factory=dict)
    roles: dict[str, Role] = field(default_factory=dict)
    exclusions: dict[str, ExclusionSet] = field(default_factory=dict)


# --- derived views ----------------------------------------------------------

def allowed_workflows(user, policy: Policy) -> frozenset[str]:
    """Union of workflow ids over the user's roles.  UnknownRole on dangling refs."""
    out: set[str] = set()
    for role_id in sorted(user.role_ids):
        role = policy.roles.get(role_id)
        if role is None:
            raise UnknownRole(role_id)
        out |= role.workflow_ids
    return frozenset(out)


def required_auth_methods(user, policy: Policy) -> frozenset[str]:
    """Union of required auth methods over the user's roles."""
    out: set[str] = set()
    for role_id in sorted(user.role_ids):
        role = policy.roles.get(role_id)
        if role is None:
            raise UnknownRole(role_id)
        out |= role.required_auth
    return frozenset(out)


# --- policy validation ----------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    detail: str


def _check_workflow(wf: Workflow, out: list[Violation]) -> None:
    if not is_entity_id(wf.id):
        out.append(Violation("bad_identifier", wf.id, "workflow id"))
    for state in wf.states:
        if not is_identifier(state):
            out.append(Violation("bad_identifier", wf.id, f"state {state!r}"))
    if wf.start_state not in wf.states:
        out.append(Violation("unknown_start_state", wf.id, wf.start_state))
    seen_ids: set[int] = set()
    start_pages: list[PageId] = []
    for t in wf.transitions:
        if t.id in seen_ids:
            out.append(Violation("duplicate_transition_id", wf.id, str(t.id)))
        seen_ids.add(t.id)
        for endpoint in (t.from_state, t.to_state):
            if endpoint not in wf.states:
                out.append(Violation("unknown_state", wf.id, f"transition {t.id}: {endpoint!r}"))
        if t.from_state == wf.start_state:
            start_pages.append(t.page)
    if not start_pages:
        out.append(Violation("start_page_mismatch", wf.id, "no transitions out of start state"))
    elif all(p != wf.start_page for p in start_pages):
        out.append(Violation("start_page_mismatch", wf.id, wf.start_page.label()))
    # two start transitions on the same page with identical rules are ambiguous
    seen_sigs: set[tuple] = set()
    for t in wf.transitions:
        if t.from_state != wf.start_state:
            continue
        sig = t.signature()[2:]
        if sig in seen_sigs:
            out.append(Violation("duplicate_start_transition", wf.id, t.page.label()))
        seen_sigs.add(sig)


def validate_policy(policy: Policy, users: Mapping[str, User] | None = None) -> list[Violation]:
    """All structural violations of a policy (empty list means acceptable).

    Referential integrity, FSM well-formedness and reachability of every
    workflow from some role.  User checks run only when users are given.
    """
    out: list[Violation] = []
    for wf in policy.workflows.values():
        _check_workflow(wf, out)

    referenced: set[str] = set()
    for role in policy.roles.values():
        if not is_entity_id(role.id):
            out.append(Violation("bad_identifier", role.id, "role id"))
        if not role.required_auth:
            out.append(Violation("empty_required_auth", role.id, "role requires no auth method"))
        for method in role.required_auth:
            if method not in AUTH_METHODS:
                out.append(Violation("bad_auth_method", role.id, method))
        for wf_id in role.workflow_ids:
            if wf_id not in policy.workflows:
                out.append(Violation("dangling_workflow_ref", role.id, wf_id))
            referenced.add(wf_id)

    for wf_id in policy.workflows:
        if wf_id not in referenced:
            out.append(Violation("unreachable_workflow", wf_id, "not granted by any role"))

    for ex in policy.exclusions.values():
        if not is_entity_id(ex.id):
            out.append(Violation("bad_identifier", ex.id, "exclusion id"))
        if len(ex.workflow_ids) < 2:
            out.append(Violation("exclusion_too_small", ex.id, "needs at least two workflows"))
        for wf_id in ex.workflow_ids:
            if wf_id not in policy.workflows:
                out.append(Violation("dangling_workflow_ref", ex.id, wf_id))

    if users is not None:
        for user in users.values():
            if not is_entity_id(user.id):
                out.append(Violation("bad_identifier", user.id, "user id"))
            if not user.role_ids:
                out.append(Violation("no_roles", user.id, "user has no roles"))
            for role_id in user.role_ids:
                if role_id not in policy.roles:
                    out.append(Violation("dangling_role_ref", user.id, role_id))
    return out


# --- request parameters ---------------------------------------------------------

FORM_URLENCODED = "application/x-www-form-urlencoded"


def extract_params(
    method: str,
    query: str,
    content_type: str | None,
    body: bytes,
) -> dict[str, tuple[str, ...]]:
    """Merge query-string and urlencoded-body parameters, multi-value aware."""
    merged: dict[str, list[str]] = {}
    for name, values in parse_qs(query or "", keep_blank_values=True).items():
        merged.setdefault(name, []).extend(values)
    base_type = (content_type or "").split(";", 1)[0].strip().lower()
    if method == "POST" and body and base_type in ("", FORM_URLENCODED):
        decoded = body.decode("utf-8", errors="replace")
        for name, values in parse_qs(decoded, keep_blank_values=True).items():
            merged.setdefault(name, []).extend(values)
    return {name: tuple(values) for name, values in merged.items()}
