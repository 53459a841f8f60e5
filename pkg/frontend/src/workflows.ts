/**
 * Workflow editor: pick a workflow, inspect its transitions, and edit
 * per-parameter rules. The kind selector switches the operand form
 * (literal value, regex with live validation, any, set query with a
 * filter list); an invalid regex disables Save before the API is asked,
 * and a server-side rejection lands on the same field.
 */

import { AdminApi, RuleJson, TransitionView, WorkflowView } from "./api.js";
import { ErrorBanner } from "./banner.js";
import { errorText } from "./recording.js";
import {
  RULE_KINDS,
  RuleDraft,
  describeFilter,
  describeRule,
  draftFromRule,
  ruleFromDraft,
  validateDraft,
} from "./rules.js";

export class WorkflowEditor {
  private readonly banner: ErrorBanner;
  private readonly listHost: HTMLElement;
  private readonly editorHost: HTMLElement;
  private selected: string | null = null;

  constructor(
    private readonly api: AdminApi,
    root: HTMLElement,
  ) {
    this.banner = new ErrorBanner(root.querySelector("#wf-banner") as HTMLElement);
    this.listHost = root.querySelector("#wf-list") as HTMLElement;
    this.editorHost = root.querySelector("#wf-editor") as HTMLElement;
  }

  show(): void {
    void this.loadList();
  }

  hide(): void {
    // nothing polls here; edits would be clobbered by background refreshes
  }

  open(workflowId: string): void {
    this.selected = workflowId;
    void this.loadList();
  }

  // --- loading ---

  private async loadList(): Promise<void> {
    try {
      const workflows = await this.api.listWorkflows();
      this.renderList(workflows);
      if (this.selected !== null) {
        const current = workflows.find((wf) => wf.id === this.selected);
        if (current) {
          this.renderEditor(current);
        }
      }
      this.banner.clear();
    } catch (err) {
      this.banner.show(errorText(err), () => void this.loadList());
    }
  }

  private renderList(workflows: WorkflowView[]): void {
    this.listHost.textContent = "";
    for (const wf of workflows) {
      const button = document.createElement("button");
      button.type = "button";
      button.className = wf.id === this.selected ? "wf-item selected" : "wf-item";
      button.textContent = `${wf.id} (${wf.name})`;
      button.onclick = () => {
        this.selected = wf.id;
        void this.loadList();
      };
      this.listHost.appendChild(button);
    }
  }

  // --- editor ---

  private renderEditor(wf: WorkflowView): void {
    this.editorHost.textContent = "";
    const head = document.createElement("h2");
    head.textContent = `${wf.id}: ${wf.name}`;
    const meta = document.createElement("p");
    meta.className = "muted";
    meta.textContent =
      `starts at ${wf.start_page} (state ${wf.start_state}); ` +
      `${wf.states.length} states, ${wf.transitions.length} transitions`;
    this.editorHost.append(head, meta);
    for (const transition of wf.transitions) {
      this.editorHost.appendChild(this.renderTransition(wf, transition));
    }
  }

  private renderTransition(wf: WorkflowView, transition: TransitionView): HTMLElement {
    const block = document.createElement("div");
    block.className = "transition";
    const head = document.createElement("h3");
    head.textContent = `t${transition.id}: ${transition.page}  (${transition.from} -> ${transition.to})`;
    block.appendChild(head);
    const names = Object.keys(transition.params).sort();
    if (!names.length) {
      const none = document.createElement("p");
      none.className = "muted";
      none.textContent = "no guarded parameters";
      block.appendChild(none);
      return block;
    }
    for (const name of names) {
      block.appendChild(this.renderParamEditor(wf, transition, name, transition.params[name]));
    }
    return block;
  }

  private renderParamEditor(
    wf: WorkflowView,
    transition: TransitionView,
    name: string,
    rule: RuleJson,
  ): HTMLElement {
    const row = document.createElement("div");
    row.className = "param-editor";
    const draft = draftFromRule(rule);

    const label = document.createElement("strong");
    label.textContent = name;
    const summary = document.createElement("span");
    summary.className = "muted";
    renderSummary(summary, rule);

    const kindSelect = document.createElement("select");
    for (const kind of RULE_KINDS) {
      const option = document.createElement("option");
      option.value = kind;
      option.textContent = kind === "set" ? "set query" : kind;
      kindSelect.appendChild(option);
    }
    kindSelect.value = draft.kind;

    const operands = document.createElement("span");
    const error = document.createElement("span");
    error.className = "field-error";
    const save = document.createElement("button");
    save.type = "button";
    save.textContent = "Save";

    const revalidate = () => {
      const message = validateDraft(draft);
      error.textContent = message ?? "";
      save.disabled = message !== null;
    };
    kindSelect.onchange = () => {
      draft.kind = kindSelect.value as RuleDraft["kind"];
      renderOperands(operands, draft, revalidate);
      revalidate();
    };
    save.onclick = async () => {
      try {
        const updated = await this.api.putParamRule(wf.id, transition.id, name, ruleFromDraft(draft));
        this.renderEditor(updated);
        this.banner.clear();
      } catch (err) {
        error.textContent = errorText(err);
      }
    };

    renderOperands(operands, draft, revalidate);
    revalidate();
    row.append(label, summary, kindSelect, operands, save, error);
    return row;
  }
}

// --- operand forms ---

function renderOperands(host: HTMLElement, draft: RuleDraft, onEdit: () => void): void {
  host.textContent = "";
  if (draft.kind === "literal" || draft.kind === "regex") {
    const input = document.createElement("input");
    input.placeholder = draft.kind === "regex" ? "pattern" : "value";
    input.value = draft.value;
    input.oninput = () => {
      draft.value = input.value;
      onEdit();
    };
    host.appendChild(input);
    return;
  }
  if (draft.kind === "any") {
    return;
  }
  const table = document.createElement("input");
  table.placeholder = "table";
  table.value = draft.table;
  table.oninput = () => {
    draft.table = table.value;
    onEdit();
  };
  const column = document.createElement("input");
  column.placeholder = "column";
  column.value = draft.column;
  column.oninput = () => {
    draft.column = column.value;
    onEdit();
  };
  const filters = document.createElement("div");
  filters.className = "filters";
  const renderFilters = () => {
    filters.textContent = "";
    draft.filters.forEach((flt, index) => {
      const line = document.createElement("div");
      line.className = "filter-row";
      const filterColumn = document.createElement("input");
      filterColumn.placeholder = "filter column";
      filterColumn.value = flt.column;
      filterColumn.oninput = () => {
        flt.column = filterColumn.value;
        onEdit();
      };
      const bind = document.createElement("select");
      for (const mode of ["value", "param"] as const) {
        const option = document.createElement("option");
        option.value = mode;
        option.textContent = mode === "param" ? "= request param" : "= literal value";
        bind.appendChild(option);
      }
      bind.value = flt.bind;
      bind.onchange = () => {
        flt.bind = bind.value as "value" | "param";
        line.className = flt.bind === "param" ? "filter-row param-ref" : "filter-row";
        onEdit();
      };
      const operand = document.createElement("input");
      operand.placeholder = flt.bind === "param" ? "parameter name" : "value";
      operand.value = flt.operand;
      operand.oninput = () => {
        flt.operand = operand.value;
        onEdit();
      };
      const remove = document.createElement("button");
      remove.type = "button";
      remove.textContent = "remove";
      remove.onclick = () => {
        draft.filters.splice(index, 1);
        renderFilters();
        onEdit();
      };
      line.className = flt.bind === "param" ? "filter-row param-ref" : "filter-row";
      line.append(filterColumn, bind, operand, remove);
      filters.appendChild(line);
    });
    const add = document.createElement("button");
    add.type = "button";
    add.textContent = "+ filter";
    add.onclick = () => {
      draft.filters.push({ column: "", bind: "value", operand: "" });
      renderFilters();
      onEdit();
    };
    filters.appendChild(add);
  };
  renderFilters();
  host.append(table, column, filters);
}

function renderSummary(host: HTMLElement, rule: RuleJson): void {
  host.textContent = describeRule(rule);
  if (rule.kind !== "set" || !rule.filters.length) {
    return;
  }
  host.textContent += " where ";
  rule.filters.forEach((flt, index) => {
    const piece = describeFilter(flt);
    const span = document.createElement("span");
    span.textContent = piece.text;
    if (piece.isParamRef) {
      span.className = "param-ref";
    }
    host.appendChild(span);
    if (index < rule.filters.length - 1) {
      host.appendChild(document.createTextNode(" and "));
    }
  });
}
