"""Training phase and policy persistence.

Recording turns a real click-through into an ordered step list; building
turns the steps into a linear workflow whose parameter rules start as
exact literals (deny-by-default: the administrator widens rules in the
editor, never the recorder).  The whole policy database travels as one
versioned XML document with deterministic byte output.
"""

from __future__ import annotations

import re
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .errors import (
    DanglingReference,
    EmptyRecording,
    InvalidRegex,
    InvalidSetQuery,
    RecordingAlreadyActive,
    RecordingNotActive,
    RecordingNotStopped,
    SchemaViolation,
    UnknownRecording,
    UnknownTransition,
)
from .model import (
    ExclusionSet,
    PageId,
    ParamRule,
    PasswordHash,
    Policy,
    Role,
    RULE_ANY,
    RULE_LITERAL,
    RULE_REGEX,
    RULE_SET,
    SetFilter,
    SetQueryDef,
    TokenBinding,
    Transition,
    UpstreamCredentials,
    User,
    Workflow,
    make_workflow,
    validate_policy,
)

RECORDING = "recording"
STOPPED = "stopped"

_INTERNAL_PREFIXES = ("/__gate", "/admin")


def is_internal_path(path: str) -> bool:
    """Gateway-owned namespace; never captured, never proxied upstream."""
    for prefix in _INTERNAL_PREFIXES:
        if path == prefix or path.startswith(prefix + "/"):
            return True
    return False


# --- recordings ----------------------------------------------------------------

@dataclass
class RecordedStep:
    page: PageId
    params: dict[str, tuple[str, ...]]
    captured_at: float


@dataclass
class Recording:
    id: str
    name: str
    trainer: str | None
    state: str = RECORDING
    steps: list[RecordedStep] = field(default_factory=list)


class RecordingBook:
    """All recordings, at most one of them live at a time."""

    def __init__(self):
        self._lock = threading.Lock()
        self._items: dict[str, Recording] = {}
        self._counter = 0

    def start(self, name: str, trainer: str | None = None) -> Recording:
        with self._lock:
            for rec in self._items.values():
                if rec.state == RECORDING:
                    raise RecordingAlreadyActive(rec.id)
            self._counter += 1
            rec = Recording(id=f"rec-{self._counter}", name=name, trainer=trainer)
            self._items[rec.id] = rec
            return rec

    def stop(self, recording_id: str) -> Recording:
        with self._lock:
            rec = self._items.get(recording_id)
            if rec is None:
                raise UnknownRecording(recording_id)
            rec.state = STOPPED
            return rec

    def get(self, recording_id: str) -> Recording:
        with self._lock:
            rec = self._items.get(recording_id)
            if rec is None:
                raise UnknownRecording(recording_id)
            return rec

    def all(self) -> list[Recording]:
        with self._lock:
            return list(self._items.values())

    def active(self) -> Recording | None:
        with self._lock:
            for rec in self._items.values():
                if rec.state == RECORDING:
                    return rec
            return None

    def capture(
        self,
        recording_id: str,
        page: PageId,
        params: Mapping[str, Sequence[str]],
        at: float,
    ) -> Recording:
        with self._lock:
            rec = self._items.get(recording_id)
            if rec is None:
                raise UnknownRecording(recording_id)
            if rec.state != RECORDING:
                raise RecordingNotActive(recording_id)
            if is_internal_path(page.path):
                return rec
            rec.steps.append(
                RecordedStep(page, {n: tuple(v) for n, v in params.items()}, at)
            )
            return rec


# --- draft construction ----------------------------------------------------------

def _canonical_step(step: RecordedStep) -> tuple:
    return (step.page, tuple(sorted((n, tuple(sorted(v))) for n, v in step.params.items())))


def _initial_rule(values: Sequence[str]) -> ParamRule:
    distinct = sorted(set(values))
    if len(distinct) == 1:
        return ParamRule.literal(distinct[0])
    # multi-valued parameter: exact alternation keeps the replay guarantee
    return ParamRule.regex("|".join(re.escape(v) for v in distinct))


@dataclass
class WorkflowDraft:
    workflow: Workflow
    origin_recording: str


def build_workflow(
    recording: Recording, workflow_id: str, name: str | None = None
) -> WorkflowDraft:
    """Linear FSM from a recording: one transition per (collapsed) step."""
    if recording.state != STOPPED:
        raise RecordingNotStopped(recording.id)
    collapsed: list[RecordedStep] = []
    for step in recording.steps:
        if collapsed and _canonical_step(collapsed[-1]) == _canonical_step(step):
            continue
        collapsed.append(step)
    if not collapsed:
        raise EmptyRecording(recording.id)

    transitions = []
    for index, step in enumerate(collapsed):
        rules = {pname: _initial_rule(values) for pname, values in step.params.items()}
        transitions.append(
            Transition(
                id=index,
                from_state=f"s{index}",
                to_state=f"s{index + 1}",
                page=step.page,
                params=rules,
            )
        )
    workflow = make_workflow(
        workflow_id,
        name or recording.name,
        [f"s{i}" for i in range(len(collapsed) + 1)],
        "s0",
        collapsed[0].page,
        transitions,
    )
    return WorkflowDraft(workflow=workflow, origin_recording=recording.id)


def replace_rule(
    workflow: Workflow, transition_id: int, param_name: str, rule: ParamRule
) -> Workflow:
    """Workflow with one parameter rule swapped; everything else unchanged."""
    target = workflow.transition_by_id(transition_id)
    if target is None:
        raise UnknownTransition(f"{workflow.id}: transition {transition_id}")
    params = dict(target.params)
    params[param_name] = rule
    updated = Transition(target.id, target.from_state, target.to_state, target.page, params)
    transitions = tuple(updated if t.id == transition_id else t for t in workflow.transitions)
    return replace(workflow, transitions=transitions)


def edit_rule(
    draft: WorkflowDraft, transition_id: int, param_name: str, rule: ParamRule
) -> WorkflowDraft:
    return replace(
        draft, workflow=replace_rule(draft.workflow, transition_id, param_name, rule)
    )


# --- XML codec ---------------------------------------------------------------------

_SCHEMA_VERSION = "1"


def _page_attr(page: PageId) -> str:
    return page.label()


def _parse_page(label: str, path: str) -> PageId:
    try:
        return PageId.parse(label)
    except ValueError as exc:
        raise SchemaViolation(path, f"bad page {label!r}") from exc


def _rule_element(parent: ET.Element, name: str, rule: ParamRule) -> None:
    el = ET.SubElement(parent, "param", {"name": name, "kind": rule.kind})
    if rule.kind == RULE_LITERAL:
        el.set("value", rule.value)
    elif rule.kind == RULE_REGEX:
        el.set("value", rule.pattern)
    elif rule.kind == RULE_SET:
        query = ET.SubElement(
            el, "set", {"table": rule.query.table, "column": rule.query.column}
        )
        for flt in rule.query.filters:
            attrs = {"column": flt.column}
            if flt.value is not None:
                attrs["value"] = flt.value
            else:
                attrs["param"] = flt.param
            ET.SubElement(query, "filter", attrs)


def export_xml(policy: Policy, users: Mapping[str, User]) -> bytes:
    """Single deterministic document holding the whole policy database."""
    root = ET.Element("gatedb", {"version": _SCHEMA_VERSION})

    workflows_el = ET.SubElement(root, "workflows")
    for wf_id in sorted(policy.workflows):
        wf = policy.workflows[wf_id]
        wf_el = ET.SubElement(
            workflows_el,
            "workflow",
            {
                "id": wf.id,
                "name": wf.name,
                "start-state": wf.start_state,
                "start-page": _page_attr(wf.start_page),
            },
        )
        for state in sorted(wf.states):
            ET.SubElement(wf_el, "state", {"id": state})
        for t in sorted(wf.transitions, key=lambda t: t.id):
            t_el = ET.SubElement(
                wf_el,
                "transition",
                {
                    "id": str(t.id),
                    "from": t.from_state,
                    "to": t.to_state,
                    "page": _page_attr(t.page),
                },
            )
            for pname in sorted(t.params):
                _rule_element(t_el, pname, t.params[pname])

    roles_el = ET.SubElement(root, "roles")
    for role_id in sorted(policy.roles):
        role = policy.roles[role_id]
        role_el = ET.SubElement(roles_el, "role", {"id": role.id, "name": role.name})
        for wf_id in sorted(role.workflow_ids):
            ET.SubElement(role_el, "workflow-ref", {"id": wf_id})
        for method in sorted(role.required_auth):
            ET.SubElement(role_el, "auth", {"method": method})

    exclusions_el = ET.SubElement(root, "exclusions")
    for ex_id in sorted(policy.exclusions):
        ex = policy.exclusions[ex_id]
        ex_el = ET.SubElement(exclusions_el, "exclusion", {"id": ex.id})
        for wf_id in sorted(ex.workflow_ids):
            ET.SubElement(ex_el, "workflow-ref", {"id": wf_id})

    users_el = ET.SubElement(root, "users")
    for user_id in sorted(users):
        user = users[user_id]
        user_el = ET.SubElement(
            users_el,
            "user",
            {"id": user.id, "federated-name": user.federated_name, "idp": user.idp_id},
        )
        ET.SubElement(
            user_el,
            "password",
            {"hash": user.password.digest.hex(), "salt": user.password.salt.hex()},
        )
        if user.token_binding is not None:
            ET.SubElement(
                user_el,
                "token",
                {
                    "firmcode": user.token_binding.firmcode,
                    "usercode": user.token_binding.usercode,
                },
            )
        if user.upstream_credentials is not None:
            ET.SubElement(
                user_el,
                "upstream",
                {
                    "username": user.upstream_credentials.username,
                    "secret": user.upstream_credentials.secret,
                },
            )
        for role_id in sorted(user.role_ids):
            ET.SubElement(user_el, "role-ref", {"id": role_id})

    tree = ET.ElementTree(root)
    ET.indent(tree, "  ")
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


def _attr(el: ET.Element, name: str, path: str) -> str:
    value = el.get(name)
    if value is None:
        raise SchemaViolation(path, f"missing attribute {name!r}")
    return value


def _hex_attr(el: ET.Element, name: str, path: str) -> bytes:
    raw = _attr(el, name, path)
    try:
        return bytes.fromhex(raw)
    except ValueError as exc:
        raise SchemaViolation(path, f"attribute {name!r} is not hex") from exc


def _parse_rule(el: ET.Element, path: str) -> ParamRule:
    kind = _attr(el, "kind", path)
    try:
        if kind == RULE_LITERAL:
            return ParamRule.literal(_attr(el, "value", path))
        if kind == RULE_REGEX:
            return ParamRule.regex(_attr(el, "value", path))
        if kind == RULE_ANY:
            return ParamRule.any()
        if kind == RULE_SET:
            queries = el.findall("set")
            if len(queries) != 1:
                raise SchemaViolation(path, "set rule needs exactly one <set> child")
            q_el = queries[0]
            filters = []
            for i, f_el in enumerate(q_el.findall("filter")):
                f_path = f"{path}/set/filter[{i}]"
                filters.append(
                    SetFilter(
                        column=_attr(f_el, "column", f_path),
                        value=f_el.get("value"),
                        param=f_el.get("param"),
                    )
                )
            return ParamRule.set_query(
                SetQueryDef(
                    table=_attr(q_el, "table", path + "/set"),
                    column=_attr(q_el, "column", path + "/set"),
                    filters=tuple(filters),
                )
            )
    except (InvalidRegex, InvalidSetQuery) as exc:
        raise SchemaViolation(path, str(exc)) from exc
    raise SchemaViolation(path, f"unknown rule kind {kind!r}")


def _parse_workflow(el: ET.Element, path: str) -> Workflow:
    states = [ _attr(s, "id", f"{path}/state[{i}]") for i, s in enumerate(el.findall("state")) ]
    transitions = []
    for i, t_el in enumerate(el.findall("transition")):
        t_path = f"{path}/transition[{i}]"
        raw_id = _attr(t_el, "id", t_path)
        try:
            t_id = int(raw_id)
        except ValueError as exc:
            raise SchemaViolation(t_path, f"bad transition id {raw_id!r}") from exc
        params = {}
        for j, p_el in enumerate(t_el.findall("param")):
            p_path = f"{t_path}/param[{j}]"
            pname = _attr(p_el, "name", p_path)
            if pname in params:
                raise SchemaViolation(p_path, f"duplicate param {pname!r}")
            params[pname] = _parse_rule(p_el, p_path)
        transitions.append(
            Transition(
                id=t_id,
                from_state=_attr(t_el, "from", t_path),
                to_state=_attr(t_el, "to", t_path),
                page=_parse_page(_attr(t_el, "page", t_path), t_path),
                params=params,
            )
        )
    return Workflow(
        id=_attr(el, "id", path),
        name=_attr(el, "name", path),
        states=frozenset(states),
        start_state=_attr(el, "start-state", path),
        start_page=_parse_page(_attr(el, "start-page", path), path),
        transitions=tuple(transitions),
    )


def _parse_user(el: ET.Element, path: str) -> User:
    password_els = el.findall("password")
    if len(password_els) != 1:
        raise SchemaViolation(path, "user needs exactly one <password> child")
    p_el = password_els[0]
    password = PasswordHash(
        salt=_hex_attr(p_el, "salt", path + "/password"),
        digest=_hex_attr(p_el, "hash", path + "/password"),
    )
    token = None
    token_els = el.findall("token")
    if token_els:
        token = TokenBinding(
            firmcode=_attr(token_els[0], "firmcode", path + "/token"),
            usercode=_attr(token_els[0], "usercode", path + "/token"),
        )
    upstream = None
    upstream_els = el.findall("upstream")
    if upstream_els:
        upstream = UpstreamCredentials(
            username=_attr(upstream_els[0], "username", path + "/upstream"),
            secret=_attr(upstream_els[0], "secret", path + "/upstream"),
        )
    return User(
        id=_attr(el, "id", path),
        federated_name=_attr(el, "federated-name", path),
        role_ids=frozenset(
            _attr(r, "id", f"{path}/role-ref[{i}]") for i, r in enumerate(el.findall("role-ref"))
        ),
        idp_id=_attr(el, "idp", path),
        password=password,
        token_binding=token,
        upstream_credentials=upstream,
    )


_DANGLING_CODES = {
    "dangling_workflow_ref",
    "dangling_role_ref",
    "unknown_state",
    "unknown_start_state",
}


def import_xml(data: bytes) -> tuple[Policy, dict[str, User]]:
    """Parse and validate a policy document; rejects atomically on any flaw."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise SchemaViolation("/", f"not well-formed: {exc}") from exc
    if root.tag != "gatedb":
        raise SchemaViolation("/", f"unexpected root element {root.tag!r}")
    if root.get("version") != _SCHEMA_VERSION:
        raise SchemaViolation("/gatedb", f"unsupported version {root.get('version')!r}")

    policy = Policy()
    for i, wf_el in enumerate(root.iterfind("workflows/workflow")):
        wf = _parse_workflow(wf_el, f"/gatedb/workflows/workflow[{i}]")
        if wf.id in policy.workflows:
            raise SchemaViolation(
                f"/gatedb/workflows/workflow[{i}]", f"duplicate workflow id {wf.id!r}"
            )
        policy.workflows[wf.id] = wf

    for i, role_el in enumerate(root.iterfind("roles/role")):
        path = f"/gatedb/roles/role[{i}]"
        role = Role(
            id=_attr(role_el, "id", path),
            name=_attr(role_el, "name", path),
            workflow_ids=frozenset(
                _attr(w, "id", f"{path}/workflow-ref[{j}]")
                for j, w in enumerate(role_el.findall("workflow-ref"))
            ),
            required_auth=frozenset(
                _attr(a, "method", f"{path}/auth[{j}]")
                for j, a in enumerate(role_el.findall("auth"))
            ),
        )
        if role.id in policy.roles:
            raise SchemaViolation(path, f"duplicate role id {role.id!r}")
        policy.roles[role.id] = role

    for i, ex_el in enumerate(root.iterfind("exclusions/exclusion")):
        path = f"/gatedb/exclusions/exclusion[{i}]"
        exclusion = ExclusionSet(
            id=_attr(ex_el, "id", path),
            workflow_ids=frozenset(
                _attr(w, "id", f"{path}/workflow-ref[{j}]")
                for j, w in enumerate(ex_el.findall("workflow-ref"))
            ),
        )
        if exclusion.id in policy.exclusions:
            raise SchemaViolation(path, f"duplicate exclusion id {exclusion.id!r}")
        policy.exclusions[exclusion.id] = exclusion

    users: dict[str, User] = {}
    for i, user_el in enumerate(root.iterfind("users/user")):
        path = f"/gatedb/users/user[{i}]"
        user = _parse_user(user_el, path)
        if user.id in users:
            raise SchemaViolation(path, f"duplicate user id {user.id!r}")
        users[user.id] = user

    violations = validate_policy(policy, users)
    dangling = [v for v in violations if v.code in _DANGLING_CODES]
    if dangling:
        v = dangling[0]
        raise DanglingReference(f"{v.code}: {v.subject} -> {v.detail}")
    if violations:
        v = violations[0]
        raise SchemaViolation("/gatedb", f"{v.code}: {v.subject} ({v.detail})")
    return policy, users
