"""Shared test fixtures: independent oracles, random generators, a browser.

The matching/path logic here is deliberately written from scratch (plain
recursion, brute-force row scans) so it can serve as an independent
check against the production monitor rather than echoing it.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass

from starlette.testclient import TestClient

from workflowgate.model import (
    ExclusionSet,
    PageId,
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
from workflowgate.monitor import MonitorRequest

# --- tiny builders -----------------------------------------------------------

def page(label: str) -> PageId:
    return PageId.parse(label)


def req(label: str, **params) -> MonitorRequest:
    normalized = {
        name: (value,) if isinstance(value, str) else tuple(value)
        for name, value in params.items()
    }
    return MonitorRequest(page(label), normalized)


def linear_workflow(workflow_id: str, pages: list[str], params: dict | None = None) -> Workflow:
    """Chain s0 -> s1 -> ... with optional per-index param rule maps."""
    params = params or {}
    transitions = [
        Transition(
            id=i,
            from_state=f"s{i}",
            to_state=f"s{i + 1}",
            page=page(label),
            params=params.get(i, {}),
        )
        for i, label in enumerate(pages)
    ]
    return Workflow(
        id=workflow_id,
        name=workflow_id,
        states=frozenset(f"s{i}" for i in range(len(pages) + 1)),
        start_state="s0",
        start_page=page(pages[0]),
        transitions=tuple(transitions),
    )


def policy_of(*workflows: Workflow, role_id: str = "testers", auth=("password",)) -> Policy:
    """One role granting all the given workflows."""
    return Policy(
        workflows={wf.id: wf for wf in workflows},
        roles={
            role_id: Role(
                id=role_id,
                name=role_id,
                workflow_ids=frozenset(wf.id for wf in workflows),
                required_auth=frozenset(auth),
            )
        },
    )


# --- independent matching + path oracle ------------------------------------------

def brute_rule_holds(rule: ParamRule, value: str, request_params, tables) -> bool:
    """Re-derivation of rule semantics, including a raw row scan for sets."""
    if rule.kind == "any":
        return True
    if rule.kind == "literal":
        return rule.value == value
    if rule.kind == "regex":
        return re.fullmatch(rule.pattern, value) is not None
    rows = tables.get(rule.query.table, [])
    hits = []
    for row in rows:
        keep = True
        for flt in rule.query.filters:
            if flt.value is not None:
                operand = flt.value
            else:
                bound = request_params.get(flt.param, ())
                if len(bound) != 1:
                    return False
                operand = bound[0]
            if row.get(flt.column) != operand:
                keep = False
                break
        if keep and rule.query.column in row:
            hits.append(row[rule.query.column])
    return value in hits


def brute_step_matches(transition: Transition, request: MonitorRequest, tables) -> bool:
    if transition.page != request.page:
        return False
    if set(transition.params) != set(request.params):
        return False
    for name, rule in transition.params.items():
        for value in request.params[name]:
            if not brute_rule_holds(rule, value, request.params, tables):
                return False
        if not request.params[name]:
            return False
    return True


def dfs_accepts(workflow: Workflow, sequence: list[MonitorRequest], tables=None) -> bool:
    """True iff some transition path from start_state is labeled by the sequence."""
    tables = tables or {}

    def walk(state: str, index: int) -> bool:
        if index == len(sequence):
            return True
        for t in workflow.transitions:
            if t.from_state != state:
                continue
            if brute_step_matches(t, sequence[index], tables):
                if walk(t.to_state, index + 1):
                    return True
        return False

    return walk(workflow.start_state, 0)


# --- random generators ---------------------------------------------------------

_PAGE_POOL = ["GET /a", "GET /b", "POST /c", "GET /d", "POST /e"]
_PARAM_NAMES = ["p", "q"]
_STOCK_TABLE = {
    "stock": [
        {"sku": "A-7", "in_stock": "1"},
        {"sku": "B-2", "in_stock": "0"},
        {"sku": "C-9", "in_stock": "1"},
    ]
}
_REGEX_CHOICES = [
    ("[0-9]+", ["7", "42"], ["x", ""]),
    ("x|y", ["x", "y"], ["z", "xx"]),
    ("a.*", ["a", "abc"], ["ba"]),
]


def random_rule(rng: random.Random) -> tuple[ParamRule, list[str], list[str]]:
    """A rule plus known matching and non-matching values for it."""
    kind = rng.choice(["literal", "regex", "any", "set"])
    if kind == "literal":
        value = rng.choice(["1", "save", "x y"])
        return ParamRule.literal(value), [value], [value + "z"]
    if kind == "regex":
        pattern, good, bad = rng.choice(_REGEX_CHOICES)
        return ParamRule.regex(pattern), list(good), list(bad)
    if kind == "set":
        rule = ParamRule.set_query(SetQueryDef("stock", "sku", (SetFilter("in_stock", value="1"),)))
        return rule, ["A-7", "C-9"], ["B-2", "nope"]
    return ParamRule.any(), ["whatever", ""], []


def random_workflow(rng: random.Random, workflow_id: str = "w1", max_states: int = 6):
    """Random valid FSM plus, per transition, values that do / don't satisfy it."""
    n_states = rng.randint(2, max_states)
    states = [f"s{i}" for i in range(n_states)]
    n_transitions = rng.randint(1, min(8, n_states * 2))
    transitions = []
    hints = {}
    start_candidates = []
    start_signatures = set()
    for i in range(n_transitions):
        from_state = "s0" if i == 0 else rng.choice(states)
        to_state = rng.choice(states)
        label = rng.choice(_PAGE_POOL)
        params = {}
        param_hints = {}
        for name in _PARAM_NAMES:
            if rng.random() < 0.55:
                rule, good, bad = random_rule(rng)
                params[name] = rule
                param_hints[name] = (good, bad)
        # two start transitions with the same page and rules are invalid
        signature = (page(label), tuple(sorted(params.items())))
        if from_state == "s0":
            if signature in start_signatures:
                if len(states) > 1:
                    from_state = rng.choice(states[1:])
                else:
                    continue
            else:
                start_signatures.add(signature)
        t = Transition(i, from_state, to_state, page(label), params)
        transitions.append(t)
        hints[i] = param_hints
        if from_state == "s0":
            start_candidates.append(t.page)
    workflow = Workflow(
        id=workflow_id,
        name=workflow_id,
        states=frozenset(states),
        start_state="s0",
        start_page=start_candidates[0],
        transitions=tuple(transitions),
    )
    return workflow, hints


def matching_request(rng: random.Random, t: Transition, hints) -> MonitorRequest:
    params = {}
    for name, rule in t.params.items():
        good, _ = hints[t.id][name]
        value = rng.choice(good) if good else "anything"
        params[name] = (value,)
    return MonitorRequest(t.page, params)


def perturbed_request(rng: random.Random, t: Transition, hints) -> MonitorRequest:
    """A request near a real transition but wrong in one random way."""
    base = matching_request(rng, t, hints)
    mode = rng.choice(["page", "value", "surplus", "drop"])
    params = dict(base.params)
    if mode == "page" or (mode == "drop" and not params):
        other = rng.choice([p for p in _PAGE_POOL if page(p) != t.page])
        return MonitorRequest(page(other), params)
    if mode == "surplus":
        params["zz"] = ("1",)
        return MonitorRequest(t.page, params)
    if mode == "drop":
        params.pop(rng.choice(sorted(params)))
        return MonitorRequest(t.page, params)
    # wrong value for one rule (fall back to a page change when impossible)
    breakable = [
        name for name in params if hints[t.id].get(name, ((), ()))[1]
    ]
    if not breakable:
        other = rng.choice([p for p in _PAGE_POOL if page(p) != t.page])
        return MonitorRequest(page(other), params)
    name = rng.choice(breakable)
    params[name] = (rng.choice(hints[t.id][name][1]),)
    return MonitorRequest(t.page, params)


def random_sequence(
    rng: random.Random, workflow: Workflow, hints, max_len: int = 6
) -> list[MonitorRequest]:
    """Mostly walks the workflow, with occasional deliberate deviations."""
    sequence = []
    state = workflow.start_state
    for _ in range(rng.randint(1, max_len)):
        outgoing = [t for t in workflow.transitions if t.from_state == state]
        if outgoing and rng.random() < 0.75:
            t = rng.choice(outgoing)
            if rng.random() < 0.85:
                sequence.append(matching_request(rng, t, hints))
                state = t.to_state
            else:
                sequence.append(perturbed_request(rng, t, hints))
                state = t.to_state  # keep walking; the oracle decides acceptance
        else:
            any_t = rng.choice(workflow.transitions)
            sequence.append(perturbed_request(rng, any_t, hints))
    return sequence


# --- random policies for serialization tests ----------------------------------------

_NASTY_NAMES = ['plain', 'with space', 'café', 'a<b&"c"', "quote'd", 'tab\tname']


def random_policy(rng: random.Random, with_users: bool = True):
    workflows = {}
    for w in range(rng.randint(1, 4)):
        wf_id = f"wf-{w}"
        workflow, _ = random_workflow(rng, wf_id, max_states=rng.randint(2, 5))
        # reuse the random FSM but vary the display name for escaping coverage
        workflows[wf_id] = Workflow(
            id=wf_id,
            name=rng.choice(_NASTY_NAMES),
            states=workflow.states,
            start_state=workflow.start_state,
            start_page=workflow.start_page,
            transitions=workflow.transitions,
        )
    roles = {}
    wf_ids = sorted(workflows)
    for r in range(rng.randint(1, 3)):
        count = rng.randint(1, len(wf_ids))
        roles[f"role-{r}"] = Role(
            id=f"role-{r}",
            name=rng.choice(_NASTY_NAMES),
            workflow_ids=frozenset(rng.sample(wf_ids, count)),
            required_auth=frozenset(rng.choice([("password",), ("password", "token")])),
        )
    # every workflow must be reachable from some role
    covered = set().union(*(role.workflow_ids for role in roles.values()))
    missing = [w for w in wf_ids if w not in covered]
    if missing:
        first = next(iter(roles))
        roles[first] = Role(
            id=roles[first].id,
            name=roles[first].name,
            workflow_ids=roles[first].workflow_ids | frozenset(missing),
            required_auth=roles[first].required_auth,
        )
    exclusions = {}
    if len(wf_ids) >= 2 and rng.random() < 0.6:
        exclusions["ex-0"] = ExclusionSet(
            id="ex-0", workflow_ids=frozenset(rng.sample(wf_ids, 2))
        )
    users = {}
    if with_users:
        role_ids = sorted(roles)
        for u in range(rng.randint(1, 3)):
            token = None
            if rng.random() < 0.5:
                token = TokenBinding(firmcode=str(rng.randint(1, 99)), usercode=str(rng.randint(1, 99)))
            upstream = None
            if rng.random() < 0.5:
                upstream = UpstreamCredentials(username=f"app-u{u}", secret=f"pw-{u}")
            users[f"user-{u}"] = User(
                id=f"user-{u}",
                federated_name=f"fed-{u}",
                role_ids=frozenset(rng.sample(role_ids, rng.randint(1, len(role_ids)))),
                idp_id="idp",
                password=PasswordHash(salt=bytes([u] * 16), digest=bytes([u + 1] * 32)),
                token_binding=token,
                upstream_credentials=upstream,
            )
    return Policy(workflows=workflows, roles=roles, exclusions=exclusions), users


# --- a very small browser ----------------------------------------------------------

@dataclass
class BrowserResponse:
    status_code: int
    headers: dict
    text: str
    url: str

    @property
    def content(self) -> bytes:
        return self.text.encode()


class Browser:
    """Cookie-keeping multi-origin client over in-process ASGI apps."""

    def __init__(self, apps: dict[str, object]):
        self.clients = {
            origin: TestClient(app, base_url=origin, follow_redirects=False)
            for origin, app in apps.items()
        }

    def _client_for(self, url: str) -> tuple[TestClient, str]:
        for origin, client in self.clients.items():
            if url.startswith(origin + "/") or url == origin:
                return client, origin
        raise AssertionError(f"no app registered for {url}")

    def request(self, method: str, url: str, data=None, follow: bool = True, max_hops: int = 10):
        for _ in range(max_hops):
            client, origin = self._client_for(url)
            response = client.request(method, url, data=data)
            if follow and response.status_code in (301, 302, 303, 307, 308):
                location = response.headers["location"]
                if location.startswith("/"):
                    location = origin + location
                url = location
                if response.status_code in (301, 302, 303):
                    method, data = "GET", None
                continue
            return response
        raise AssertionError("redirect loop")

    def get(self, url: str, follow: bool = True):
        return self.request("GET", url, follow=follow)

    def post(self, url: str, data=None, follow: bool = True):
        return self.request("POST", url, data=data, follow=follow)
