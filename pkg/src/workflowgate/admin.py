"""Administrative REST surface.

Mounted under /admin/api/v1 on the gateway app, guarded by a static
bearer token that is independent of the user-facing SSO.  Every mutation
funnels through the registry's validate-then-commit transaction, so a
rejected edit leaves the policy untouched and the caller gets the
individual violations back.
"""

from __future__ import annotations

import hmac
from typing import TYPE_CHECKING

from fastapi import APIRouter, Depends, Header, HTTPException, Query, Request
from fastapi.responses import JSONResponse, Response

from .errors import (
    EmptyRecording,
    DanglingReference,
    InvalidRegex,
    InvalidSetQuery,
    PolicyValidationError,
    RecordingAlreadyActive,
    SchemaViolation,
    UnknownRecording,
    UnknownTransition,
)
from .model import (
    ExclusionSet,
    PageId,
    ParamRule,
    PasswordHash,
    Role,
    RULE_ANY,
    RULE_LITERAL,
    RULE_REGEX,
    SetFilter,
    SetQueryDef,
    TokenBinding,
    Transition,
    UpstreamCredentials,
    User,
    Workflow,
)
from .presence import END_ADMIN_ACTION, status_of, terminate_session
from .store import AUDIT_TERMINATED
from .training import STOPPED, build_workflow, export_xml, import_xml, replace_rule

if TYPE_CHECKING:
    from .proxy import Gateway


# --- wire codecs -------------------------------------------------------------

def _bad_request(error: str, detail: str) -> HTTPException:
    return HTTPException(status_code=422, detail={"error": error, "detail": detail})


def rule_to_json(rule: ParamRule) -> dict:
    if rule.kind == RULE_LITERAL:
        return {"kind": "literal", "value": rule.value}
    if rule.kind == RULE_REGEX:
        return {"kind": "regex", "value": rule.pattern}
    if rule.kind == RULE_ANY:
        return {"kind": "any"}
    filters = []
    for flt in rule.query.filters:
        doc = {"column": flt.column}
        if flt.value is not None:
            doc["value"] = flt.value
        else:
            doc["param"] = flt.param
        filters.append(doc)
    return {
        "kind": "set",
        "table": rule.query.table,
        "column": rule.query.column,
        "filters": filters,
    }


def rule_from_json(doc: dict) -> ParamRule:
    if not isinstance(doc, dict):
        raise _bad_request("bad_rule", "rule must be an object")
    kind = doc.get("kind")
    try:
        if kind == "literal":
            value = doc.get("value")
            if not isinstance(value, str):
                raise _bad_request("bad_rule", "literal rule needs a string value")
            return ParamRule.literal(value)
        if kind == "regex":
            value = doc.get("value")
            if not isinstance(value, str):
                raise _bad_request("bad_rule", "regex rule needs a string value")
            return ParamRule.regex(value)
        if kind == "any":
            return ParamRule.any()
        if kind == "set":
            filters = []
            for flt in doc.get("filters", []):
                filters.append(
                    SetFilter(
                        column=str(flt.get("column", "")),
                        value=flt.get("value"),
                        param=flt.get("param"),
                    )
                )
            return ParamRule.set_query(
                SetQueryDef(
                    table=str(doc.get("table", "")),
                    column=str(doc.get("column", "")),
                    filters=tuple(filters),
                )
            )
    except InvalidRegex as exc:
        raise _bad_request("invalid_regex", str(exc)) from exc
    except InvalidSetQuery as exc:
        raise _bad_request("invalid_set_query", str(exc)) from exc
    raise _bad_request("bad_rule", f"unknown rule kind {kind!r}")


def workflow_to_json(wf: Workflow) -> dict:
    return {
        "id": wf.id,
        "name": wf.name,
        "states": sorted(wf.states),
        "start_state": wf.start_state,
        "start_page": wf.start_page.label(),
        "transitions": [
            {
                "id": t.id,
                "from": t.from_state,
                "to": t.to_state,
                "page": t.page.label(),
                "params": {name: rule_to_json(t.params[name]) for name in sorted(t.params)},
            }
            for t in sorted(wf.transitions, key=lambda t: t.id)
        ],
    }


def _page_from_json(label, where: str) -> PageId:
    if not isinstance(label, str):
        raise _bad_request("bad_page", f"{where}: page label must be a string")
    try:
        return PageId.parse(label)
    except ValueError as exc:
        raise _bad_request("bad_page", f"{where}: {exc}") from exc


def workflow_from_json(doc: dict) -> Workflow:
    try:
        transitions = []
        for t_doc in doc.get("transitions", []):
            params = {
                str(name): rule_from_json(rule_doc)
                for name, rule_doc in (t_doc.get("params") or {}).items()
            }
            transitions.append(
                Transition(
                    id=int(t_doc["id"]),
                    from_state=str(t_doc["from"]),
                    to_state=str(t_doc["to"]),
                    page=_page_from_json(t_doc["page"], "transition"),
                    params=params,
                )
            )
        return Workflow(
            id=str(doc["id"]),
            name=str(doc.get("name", doc["id"])),
            states=frozenset(str(s) for s in doc.get("states", [])),
            start_state=str(doc["start_state"]),
            start_page=_page_from_json(doc["start_page"], "workflow"),
            transitions=tuple(transitions),
        )
    except KeyError as exc:
        raise _bad_request("missing_field", f"workflow needs field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise _bad_request("bad_workflow", str(exc)) from exc


def role_to_json(role: Role) -> dict:
    return {
        "id": role.id,
        "name": role.name,
        "workflow_ids": sorted(role.workflow_ids),
        "required_auth": sorted(role.required_auth),
    }


def role_from_json(doc: dict) -> Role:
    try:
        return Role(
            id=str(doc["id"]),
            name=str(doc.get("name", doc["id"])),
            workflow_ids=frozenset(str(w) for w in doc.get("workflow_ids", [])),
            required_auth=frozenset(str(m) for m in doc.get("required_auth", [])),
        )
    except KeyError as exc:
        raise _bad_request("missing_field", f"role needs field {exc.args[0]!r}") from exc


def exclusion_to_json(ex: ExclusionSet) -> dict:
    return {"id": ex.id, "workflow_ids": sorted(ex.workflow_ids)}


def exclusion_from_json(doc: dict) -> ExclusionSet:
    try:
        return ExclusionSet(
            id=str(doc["id"]),
            workflow_ids=frozenset(str(w) for w in doc.get("workflow_ids", [])),
        )
    except KeyError as exc:
        raise _bad_request("missing_field", f"exclusion needs field {exc.args[0]!r}") from exc


def user_to_json(user: User) -> dict:
    doc = {
        "id": user.id,
        "federated_name": user.federated_name,
        "idp": user.idp_id,
        "role_ids": sorted(user.role_ids),
        "token": None,
        "upstream": None,
    }
    if user.token_binding is not None:
        doc["token"] = {
            "firmcode": user.token_binding.firmcode,
            "usercode": user.token_binding.usercode,
        }
    if user.upstream_credentials is not None:
        doc["upstream"] = {
            "username": user.upstream_credentials.username,
            "secret": user.upstream_credentials.secret,
        }
    return doc


def user_from_json(doc: dict, existing: User | None = None) -> User:
    """Build a user record; `password` is required on create, optional on update."""
    try:
        password_plain = doc.get("password")
        if password_plain is not None:
            password = PasswordHash.create(str(password_plain))
        elif existing is not None:
            password = existing.password
        else:
            raise _bad_request("missing_field", "user needs a password")
        token = None
        if doc.get("token"):
            token = TokenBinding(
                firmcode=str(doc["token"]["firmcode"]),
                usercode=str(doc["token"]["usercode"]),
            )
        upstream = None
        if doc.get("upstream"):
            upstream = UpstreamCredentials(
                username=str(doc["upstream"]["username"]),
                secret=str(doc["upstream"]["secret"]),
            )
        return User(
            id=str(doc["id"]),
            federated_name=str(doc["federated_name"]),
            role_ids=frozenset(str(r) for r in doc.get("role_ids", [])),
            idp_id=str(doc.get("idp", "idp")),
            password=password,
            token_binding=token,
            upstream_credentials=upstream,
        )
    except KeyError as exc:
        raise _bad_request("missing_field", f"user needs field {exc.args[0]!r}") from exc


# --- router -----------------------------------------------------------------------

def build_admin_router(gateway: "Gateway", admin_token: str) -> APIRouter:
    if not admin_token:
        raise ValueError("admin API requires a non-empty token")

    async def require_token(authorization: str = Header(default="")) -> None:
        expected = f"Bearer {admin_token}"
        if not hmac.compare_digest(authorization.encode(), expected.encode()):
            raise HTTPException(status_code=401, detail={"error": "unauthorized"})

    router = APIRouter(prefix="/admin/api/v1", dependencies=[Depends(require_token)])
    registry = gateway.registry

    def run_update(mutate) -> None:
        try:
            registry.update(mutate)
        except PolicyValidationError as exc:
            raise HTTPException(
                status_code=422,
                detail={
                    "error": "validation_failed",
                    "violations": [
                        {"code": v.code, "subject": v.subject, "detail": v.detail}
                        for v in exc.violations
                    ],
                },
            ) from exc

    def conflict(kind: str, entity_id: str) -> HTTPException:
        return HTTPException(
            status_code=409, detail={"error": "conflict", "detail": f"{kind} {entity_id!r} exists"}
        )

    def not_found(kind: str, entity_id: str) -> HTTPException:
        return HTTPException(
            status_code=404, detail={"error": "not_found", "detail": f"no {kind} {entity_id!r}"}
        )

    # --- workflows ---

    @router.get("/workflows")
    def list_workflows() -> dict:
        policy = registry.policy()
        return {"workflows": [workflow_to_json(policy.workflows[k]) for k in sorted(policy.workflows)]}

    @router.get("/workflows/{workflow_id}")
    def get_workflow(workflow_id: str) -> dict:
        wf = registry.policy().workflows.get(workflow_id)
        if wf is None:
            raise not_found("workflow", workflow_id)
        return workflow_to_json(wf)

    @router.post("/workflows", status_code=201)
    def create_workflow(doc: dict) -> dict:
        wf = workflow_from_json(doc)
        # every workflow must be granted by some role, so creation takes an
        # optional grant_to (role id or list of them) applied atomically
        grant_to = doc.get("grant_to") or []
        if isinstance(grant_to, str):
            grant_to = [grant_to]

        def mutate(policy, users):
            if wf.id in policy.workflows:
                raise conflict("workflow", wf.id)
            policy.workflows[wf.id] = wf
            for role_id in grant_to:
                role = policy.roles.get(role_id)
                if role is None:
                    raise not_found("role", role_id)
                policy.roles[role_id] = Role(
                    id=role.id,
                    name=role.name,
                    workflow_ids=role.workflow_ids | {wf.id},
                    required_auth=role.required_auth,
                )

        run_update(mutate)
        return workflow_to_json(wf)

    @router.put("/workflows/{workflow_id}")
    def update_workflow(workflow_id: str, doc: dict) -> dict:
        doc = dict(doc, id=workflow_id)
        wf = workflow_from_json(doc)

        def mutate(policy, users):
            if workflow_id not in policy.workflows:
                raise not_found("workflow", workflow_id)
            policy.workflows[workflow_id] = wf

        run_update(mutate)
        return workflow_to_json(wf)

    @router.delete("/workflows/{workflow_id}")
    def delete_workflow(workflow_id: str, detach: bool = Query(default=False)) -> dict:
        # a bare delete of a still-granted workflow fails validation; with
        # detach=true the grants and exclusion entries are removed in the
        # same transaction (an exclusion left with fewer than two members
        # is dropped entirely)
        def mutate(policy, users):
            if workflow_id not in policy.workflows:
                raise not_found("workflow", workflow_id)
            del policy.workflows[workflow_id]
            if not detach:
                return
            for role_id, role in list(policy.roles.items()):
                if workflow_id in role.workflow_ids:
                    policy.roles[role_id] = Role(
                        id=role.id,
                        name=role.name,
                        workflow_ids=role.workflow_ids - {workflow_id},
                        required_auth=role.required_auth,
                    )
            for ex_id, ex in list(policy.exclusions.items()):
                if workflow_id in ex.workflow_ids:
                    remaining = ex.workflow_ids - {workflow_id}
                    if len(remaining) < 2:
                        del policy.exclusions[ex_id]
                    else:
                        policy.exclusions[ex_id] = ExclusionSet(id=ex.id, workflow_ids=remaining)

        run_update(mutate)
        return {"deleted": workflow_id}

    @router.put("/workflows/{workflow_id}/transitions/{transition_id}/params/{param_name}")
    def edit_param_rule(workflow_id: str, transition_id: int, param_name: str, doc: dict) -> dict:
        rule = rule_from_json(doc)

        def mutate(policy, users):
            wf = policy.workflows.get(workflow_id)
            if wf is None:
                raise not_found("workflow", workflow_id)
            try:
                policy.workflows[workflow_id] = replace_rule(wf, transition_id, param_name, rule)
            except UnknownTransition as exc:
                raise not_found("transition", str(transition_id)) from exc

        run_update(mutate)
        return workflow_to_json(registry.policy().workflows[workflow_id])

    # --- roles ---

    @router.get("/roles")
    def list_roles() -> dict:
        policy = registry.policy()
        return {"roles": [role_to_json(policy.roles[k]) for k in sorted(policy.roles)]}

    @router.get("/roles/{role_id}")
    def get_role(role_id: str) -> dict:
        role = registry.policy().roles.get(role_id)
        if role is None:
            raise not_found("role", role_id)
        return role_to_json(role)

    @router.post("/roles", status_code=201)
    def create_role(doc: dict) -> dict:
        role = role_from_json(doc)

        def mutate(policy, users):
            if role.id in policy.roles:
                raise conflict("role", role.id)
            policy.roles[role.id] = role

        run_update(mutate)
        return role_to_json(role)

    @router.put("/roles/{role_id}")
    def update_role(role_id: str, doc: dict) -> dict:
        role = role_from_json(dict(doc, id=role_id))

        def mutate(policy, users):
            if role_id not in policy.roles:
                raise not_found("role", role_id)
            policy.roles[role_id] = role

        run_update(mutate)
        return role_to_json(role)

    @router.delete("/roles/{role_id}")
    def delete_role(role_id: str) -> dict:
        def mutate(policy, users):
            if role_id not in policy.roles:
                raise not_found("role", role_id)
            del policy.roles[role_id]

        run_update(mutate)
        return {"deleted": role_id}

    # --- exclusions ---

    @router.get("/exclusions")
    def list_exclusions() -> dict:
        policy = registry.policy()
        return {"exclusions": [exclusion_to_json(policy.exclusions[k]) for k in sorted(policy.exclusions)]}

    @router.post("/exclusions", status_code=201)
    def create_exclusion(doc: dict) -> dict:
        ex = exclusion_from_json(doc)

        def mutate(policy, users):
            if ex.id in policy.exclusions:
                raise conflict("exclusion", ex.id)
            policy.exclusions[ex.id] = ex

        run_update(mutate)
        return exclusion_to_json(ex)

    @router.put("/exclusions/{exclusion_id}")
    def update_exclusion(exclusion_id: str, doc: dict) -> dict:
        ex = exclusion_from_json(dict(doc, id=exclusion_id))

        def mutate(policy, users):
            if exclusion_id not in policy.exclusions:
                raise not_found("exclusion", exclusion_id)
            policy.exclusions[exclusion_id] = ex

        run_update(mutate)
        return exclusion_to_json(ex)

    @router.delete("/exclusions/{exclusion_id}")
    def delete_exclusion(exclusion_id: str) -> dict:
        def mutate(policy, users):
            if exclusion_id not in policy.exclusions:
                raise not_found("exclusion", exclusion_id)
            del policy.exclusions[exclusion_id]

        run_update(mutate)
        return {"deleted": exclusion_id}

    # --- users ---

    @router.get("/users")
    def list_users() -> dict:
        users = registry.users()
        return {"users": [user_to_json(users[k]) for k in sorted(users)]}

    @router.get("/users/{user_id}")
    def get_user(user_id: str) -> dict:
        user = registry.users().get(user_id)
        if user is None:
            raise not_found("user", user_id)
        return user_to_json(user)

    @router.post("/users", status_code=201)
    def create_user(doc: dict) -> dict:
        user = user_from_json(doc)

        def mutate(policy, users):
            if user.id in users:
                raise conflict("user", user.id)
            users[user.id] = user

        run_update(mutate)
        return user_to_json(user)

    @router.put("/users/{user_id}")
    def update_user(user_id: str, doc: dict) -> dict:
        existing = registry.users().get(user_id)
        if existing is None:
            raise not_found("user", user_id)
        user = user_from_json(dict(doc, id=user_id), existing=existing)

        def mutate(policy, users):
            if user_id not in users:
                raise not_found("user", user_id)
            users[user_id] = user

        run_update(mutate)
        return user_to_json(user)

    @router.delete("/users/{user_id}")
    def delete_user(user_id: str) -> dict:
        def mutate(policy, users):
            if user_id not in users:
                raise not_found("user", user_id)
            del users[user_id]

        run_update(mutate)
        return {"deleted": user_id}

    # --- recordings ---

    def recording_to_json(rec, since: int = 0) -> dict:
        steps = [
            {
                "page": step.page.label(),
                "params": {name: list(values) for name, values in step.params.items()},
                "captured_at": step.captured_at,
            }
            for step in rec.steps[since:]
        ]
        return {
            "id": rec.id,
            "name": rec.name,
            "trainer": rec.trainer,
            "state": rec.state,
            "steps": steps,
            "next_cursor": len(rec.steps),
        }

    @router.get("/recordings")
    def list_recordings() -> dict:
        return {"recordings": [recording_to_json(rec) for rec in gateway.recordings.all()]}

    @router.post("/recordings", status_code=201)
    def start_recording(doc: dict) -> dict:
        name = str(doc.get("name", "")) or "unnamed"
        trainer = doc.get("trainer")
        if not trainer:
            raise _bad_request("missing_field", "recording needs a trainer (federated name)")
        try:
            rec = gateway.recordings.start(name, trainer=str(trainer))
        except RecordingAlreadyActive as exc:
            raise HTTPException(
                status_code=409,
                detail={"error": "recording_active", "detail": str(exc)},
            ) from exc
        return recording_to_json(rec)

    @router.get("/recordings/{recording_id}")
    def get_recording(recording_id: str) -> dict:
        try:
            rec = gateway.recordings.get(recording_id)
        except UnknownRecording as exc:
            raise not_found("recording", recording_id) from exc
        return recording_to_json(rec)

    @router.post("/recordings/{recording_id}/stop")
    def stop_recording(recording_id: str) -> dict:
        try:
            rec = gateway.recordings.stop(recording_id)
        except UnknownRecording as exc:
            raise not_found("recording", recording_id) from exc
        return recording_to_json(rec)

    @router.get("/recordings/{recording_id}/steps")
    def recording_steps(recording_id: str, since: int = 0) -> dict:
        try:
            rec = gateway.recordings.get(recording_id)
        except UnknownRecording as exc:
            raise not_found("recording", recording_id) from exc
        return recording_to_json(rec, since=max(since, 0))

    @router.post("/recordings/{recording_id}/promote")
    def promote_recording(recording_id: str, doc: dict) -> dict:
        role_id = str(doc.get("role", ""))
        if not role_id:
            raise _bad_request("missing_field", "promote needs a role id")
        try:
            rec = gateway.recordings.get(recording_id)
        except UnknownRecording as exc:
            raise not_found("recording", recording_id) from exc
        if rec.state != STOPPED:
            raise HTTPException(
                status_code=409,
                detail={"error": "recording_active", "detail": "stop the recording first"},
            )
        workflow_id = str(doc.get("workflow_id") or f"wf-{rec.id}")
        try:
            draft = build_workflow(rec, workflow_id, name=doc.get("name"))
        except EmptyRecording as exc:
            raise _bad_request("empty_recording", str(exc)) from exc

        def mutate(policy, users):
            role = policy.roles.get(role_id)
            if role is None:
                raise not_found("role", role_id)
            if draft.workflow.id in policy.workflows:
                raise conflict("workflow", draft.workflow.id)
            policy.workflows[draft.workflow.id] = draft.workflow
            policy.roles[role_id] = Role(
                id=role.id,
                name=role.name,
                workflow_ids=role.workflow_ids | {draft.workflow.id},
                required_auth=role.required_auth,
            )

        run_update(mutate)
        return {"workflow": workflow_to_json(draft.workflow), "role": role_id}

    # --- sessions ---

    @router.get("/sessions")
    def list_sessions() -> dict:
        now = gateway.clock.time()
        out = []
        for session_id in gateway.sessions.ids():
            session = gateway.sessions.get(session_id)
            if session is None:
                continue
            out.append(
                {
                    "id": session.id,
                    "user_id": session.user_id,
                    "federated_name": session.federated_name,
                    "methods": sorted(session.methods),
                    "created_at": session.created_at,
                    "last_activity_at": session.last_activity_at,
                    "last_beacon_at": session.last_beacon_at,
                    "token_present": session.token_present,
                    "terminated": session.terminated,
                    "end_reason": session.end_reason,
                    "status": "terminated"
                    if session.terminated
                    else status_of(session, now, gateway.config.presence),
                    "active_workflows": sorted(
                        inst.workflow_id for inst in session.instances if inst.active
                    ),
                }
            )
        return {"sessions": out}

    @router.post("/sessions/{session_id}/terminate")
    def terminate(session_id: str) -> dict:
        if gateway.sessions.get(session_id) is None:
            raise not_found("session", session_id)
        ended = terminate_session(
            gateway.sessions,
            gateway.audit,
            session_id,
            END_ADMIN_ACTION,
            gateway.clock.time(),
            decision=AUDIT_TERMINATED,
        )
        return {"terminated": ended}

    # --- audit ---

    @router.get("/audit")
    def audit_query(
        user: str | None = None,
        decision: str | None = None,
        start: float | None = Query(default=None, alias="from"),
        end: float | None = Query(default=None, alias="to"),
    ) -> dict:
        records = gateway.audit.query(user_id=user, start=start, end=end, decision=decision)
        return {"records": [rec.to_json() for rec in records]}

    @router.get("/idle-report")
    def idle_report(
        user: str,
        start: float | None = Query(default=None, alias="from"),
        end: float | None = Query(default=None, alias="to"),
    ) -> dict:
        rows = gateway.audit.idle_report(user, start=start, end=end)
        return {"report": [{"session_prefix": p, "max_gap": g} for p, g in rows]}

    # --- export / import ---

    @router.get("/export")
    def export_policy() -> Response:
        data = export_xml(registry.policy(), registry.users())
        return Response(content=data, media_type="application/xml")

    @router.post("/import")
    async def import_policy(request: Request) -> JSONResponse:
        data = await request.body()
        try:
            policy, users = import_xml(data)
        except SchemaViolation as exc:
            raise HTTPException(
                status_code=422,
                detail={"error": "schema_violation", "path": exc.path, "detail": exc.detail},
            ) from exc
        except DanglingReference as exc:
            raise HTTPException(
                status_code=422,
                detail={"error": "dangling_reference", "detail": str(exc)},
            ) from exc
        try:
            registry.replace(policy, users)
        except PolicyValidationError as exc:
            raise HTTPException(
                status_code=422,
                detail={
                    "error": "validation_failed",
                    "violations": [
                        {"code": v.code, "subject": v.subject, "detail": v.detail}
                        for v in exc.violations
                    ],
                },
            ) from exc
        return JSONResponse(
            {
                "workflows": len(policy.workflows),
                "roles": len(policy.roles),
                "exclusions": len(policy.exclusions),
                "users": len(users),
            }
        )

    return router
