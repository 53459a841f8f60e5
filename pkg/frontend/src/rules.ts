/**
 * Parameter-rule form model for the workflow editor.
 *
 * A draft mirrors one rule as editable fields; validation runs on every
 * keystroke so an invalid regex blocks Save before the API is called.
 * The server remains authoritative: its rejection message is surfaced on
 * the same field if a pattern passes here but fails there.
 */

import type { RuleFilter, RuleJson } from "./api.js";

export type RuleKind = "literal" | "regex" | "any" | "set";

export const RULE_KINDS: RuleKind[] = ["literal", "regex", "any", "set"];

export interface FilterDraft {
  column: string;
  bind: "value" | "param";
  operand: string;
}

export interface RuleDraft {
  kind: RuleKind;
  value: string;
  table: string;
  column: string;
  filters: FilterDraft[];
}

export function emptyDraft(): RuleDraft {
  return { kind: "literal", value: "", table: "", column: "", filters: [] };
}

export function draftFromRule(rule: RuleJson): RuleDraft {
  const draft = emptyDraft();
  draft.kind = rule.kind;
  if (rule.kind === "literal" || rule.kind === "regex") {
    draft.value = rule.value;
  } else if (rule.kind === "set") {
    draft.table = rule.table;
    draft.column = rule.column;
    draft.filters = rule.filters.map((flt) =>
      flt.param !== undefined
        ? { column: flt.column, bind: "param", operand: flt.param }
        : { column: flt.column, bind: "value", operand: flt.value ?? "" },
    );
  }
  return draft;
}

export function ruleFromDraft(draft: RuleDraft): RuleJson {
  switch (draft.kind) {
    case "literal":
      return { kind: "literal", value: draft.value };
    case "regex":
      return { kind: "regex", value: draft.value };
    case "any":
      return { kind: "any" };
    case "set":
      return {
        kind: "set",
        table: draft.table.trim(),
        column: draft.column.trim(),
        filters: draft.filters.map(filterFromDraft),
      };
  }
}

function filterFromDraft(draft: FilterDraft): RuleFilter {
  if (draft.bind === "param") {
    return { column: draft.column.trim(), param: draft.operand.trim() };
  }
  return { column: draft.column.trim(), value: draft.operand };
}

// --- validation ---

export function regexError(pattern: string): string | null {
  try {
    new RegExp(pattern);
    return null;
  } catch (err) {
    return err instanceof Error ? err.message : String(err);
  }
}

export function validateDraft(draft: RuleDraft): string | null {
  if (draft.kind === "regex") {
    const error = regexError(draft.value);
    return error === null ? null : `invalid regex: ${error}`;
  }
  if (draft.kind === "set") {
    if (!draft.table.trim()) {
      return "set rule needs a table";
    }
    if (!draft.column.trim()) {
      return "set rule needs a column";
    }
    for (const flt of draft.filters) {
      if (!flt.column.trim()) {
        return "every filter needs a column";
      }
      if (flt.bind === "param" && !flt.operand.trim()) {
        return "parameter-bound filter needs a parameter name";
      }
    }
  }
  return null;
}

// --- rendering helpers ---

export function describeRule(rule: RuleJson): string {
  switch (rule.kind) {
    case "literal":
      return `= ${JSON.stringify(rule.value)}`;
    case "regex":
      return `matches /${rule.value}/`;
    case "any":
      return "any value";
    case "set":
      return `in ${rule.table}.${rule.column}`;
  }
}

/** Filter summary; parameter-bound filters render distinctly from literals. */
export function describeFilter(flt: RuleFilter): { text: string; isParamRef: boolean } {
  if (flt.param !== undefined) {
    return { text: `${flt.column} = param(${flt.param})`, isParamRef: true };
  }
  return { text: `${flt.column} = ${JSON.stringify(flt.value ?? "")}`, isParamRef: false };
}
