/**
 * Recording console: start/stop a training recording, watch captured
 * steps arrive live (1 s poll, cursor-based so rows only append), and
 * promote a stopped recording to a workflow granted to a role.
 */

import { AdminApi, ApiError, RecordingView, StepView } from "./api.js";
import { ErrorBanner } from "./banner.js";
import { Poller } from "./poll.js";

export interface RecordingContext {
  openWorkflow(workflowId: string): void;
}

export class RecordingConsole {
  private readonly banner: ErrorBanner;
  private readonly poller: Poller;
  private selected: string | null = null;
  private cursor = 0;

  private readonly listBody: HTMLTableSectionElement;
  private readonly detail: HTMLElement;
  private readonly title: HTMLElement;
  private readonly stateBadge: HTMLElement;
  private readonly stepsBody: HTMLTableSectionElement;
  private readonly stopButton: HTMLButtonElement;
  private readonly promoteForm: HTMLFormElement;
  private readonly promoteRole: HTMLSelectElement;
  private readonly promoteNote: HTMLElement;

  constructor(
    private readonly api: AdminApi,
    private readonly root: HTMLElement,
    private readonly ctx: RecordingContext,
  ) {
    this.banner = new ErrorBanner(root.querySelector("#rec-banner") as HTMLElement);
    this.listBody = root.querySelector("#rec-list-body") as HTMLTableSectionElement;
    this.detail = root.querySelector("#rec-detail") as HTMLElement;
    this.title = root.querySelector("#rec-title") as HTMLElement;
    this.stateBadge = root.querySelector("#rec-state") as HTMLElement;
    this.stepsBody = root.querySelector("#rec-steps-body") as HTMLTableSectionElement;
    this.stopButton = root.querySelector("#rec-stop") as HTMLButtonElement;
    this.promoteForm = root.querySelector("#rec-promote-form") as HTMLFormElement;
    this.promoteRole = root.querySelector("#rec-promote-role") as HTMLSelectElement;
    this.promoteNote = root.querySelector("#rec-promote-note") as HTMLElement;

    const startForm = root.querySelector("#rec-start-form") as HTMLFormElement;
    startForm.onsubmit = (event) => {
      event.preventDefault();
      void this.start();
    };
    this.stopButton.onclick = () => void this.stopSelected();
    this.promoteForm.onsubmit = (event) => {
      event.preventDefault();
      void this.promote();
    };

    this.poller = new Poller(() => this.refresh(), 1000);
  }

  show(): void {
    void this.loadRoles();
    this.poller.start();
  }

  hide(): void {
    this.poller.stop();
  }

  // --- polling ---

  private async refresh(): Promise<void> {
    try {
      const recordings = await this.api.listRecordings();
      this.renderList(recordings);
      if (this.selected !== null) {
        const doc = await this.api.recordingSteps(this.selected, this.cursor);
        this.appendSteps(doc.steps);
        this.cursor = doc.next_cursor;
        this.renderDetailHeader(doc);
      }
      this.banner.clear();
    } catch (err) {
      this.banner.show(errorText(err), () => void this.refresh());
    }
  }

  private renderList(recordings: RecordingView[]): void {
    this.listBody.textContent = "";
    for (const rec of recordings) {
      const row = document.createElement("tr");
      if (rec.id === this.selected) {
        row.className = "selected";
      }
      row.append(
        cell(rec.id),
        cell(rec.name),
        cell(rec.trainer),
        badgeCell(rec.state),
        cell(String(rec.next_cursor)),
      );
      const open = document.createElement("td");
      const button = document.createElement("button");
      button.type = "button";
      button.textContent = "Open";
      button.onclick = () => this.select(rec.id);
      open.appendChild(button);
      row.appendChild(open);
      this.listBody.appendChild(row);
    }
  }

  select(recordingId: string): void {
    this.selected = recordingId;
    this.cursor = 0;
    this.stepsBody.textContent = "";
    this.detail.hidden = false;
    void this.refresh();
  }

  private appendSteps(steps: StepView[]): void {
    for (const step of steps) {
      const row = document.createElement("tr");
      row.appendChild(cell(String(this.stepsBody.children.length + 1)));
      row.appendChild(cell(step.page));
      const params = document.createElement("td");
      const table = document.createElement("table");
      table.className = "param-table";
      for (const name of Object.keys(step.params).sort()) {
        const line = document.createElement("tr");
        line.append(cell(name), cell(step.params[name].join(", ")));
        table.appendChild(line);
      }
      if (!table.children.length) {
        params.textContent = "-";
      } else {
        params.appendChild(table);
      }
      row.appendChild(params);
      this.stepsBody.appendChild(row);
    }
  }

  private renderDetailHeader(rec: RecordingView): void {
    this.title.textContent = `${rec.id} (${rec.name}, trainer ${rec.trainer})`;
    this.stateBadge.textContent = rec.state;
    this.stateBadge.className = `badge badge-${rec.state === "recording" ? "green" : "grey"}`;
    this.stopButton.disabled = rec.state !== "recording";
    this.promoteForm.hidden = rec.state !== "stopped";
  }

  // --- actions ---

  private async start(): Promise<void> {
    const name = (this.root.querySelector("#rec-name") as HTMLInputElement).value.trim();
    const trainer = (this.root.querySelector("#rec-trainer") as HTMLInputElement).value.trim();
    try {
      const rec = await this.api.startRecording(name || "unnamed", trainer);
      this.select(rec.id);
    } catch (err) {
      this.banner.show(errorText(err), () => void this.start());
    }
  }

  private async stopSelected(): Promise<void> {
    if (this.selected === null) {
      return;
    }
    try {
      const rec = await this.api.stopRecording(this.selected);
      this.renderDetailHeader(rec);
    } catch (err) {
      this.banner.show(errorText(err), () => void this.stopSelected());
    }
  }

  private async promote(): Promise<void> {
    if (this.selected === null) {
      return;
    }
    const workflowId = (this.root.querySelector("#rec-promote-wfid") as HTMLInputElement).value.trim();
    try {
      const result = await this.api.promoteRecording(
        this.selected,
        this.promoteRole.value,
        workflowId || undefined,
      );
      this.promoteNote.textContent = `created ${result.workflow.id} and granted it to ${result.role}`;
      this.ctx.openWorkflow(result.workflow.id);
    } catch (err) {
      this.banner.show(errorText(err), () => void this.promote());
    }
  }

  private async loadRoles(): Promise<void> {
    try {
      const roles = await this.api.listRoles();
      this.promoteRole.textContent = "";
      for (const role of roles) {
        const option = document.createElement("option");
        option.value = role.id;
        option.textContent = role.id;
        this.promoteRole.appendChild(option);
      }
    } catch (err) {
      this.banner.show(errorText(err), () => void this.loadRoles());
    }
  }
}

// --- small helpers ---

function cell(text: string): HTMLTableCellElement {
  const td = document.createElement("td");
  td.textContent = text;
  return td;
}

function badgeCell(state: string): HTMLTableCellElement {
  const td = document.createElement("td");
  const badge = document.createElement("span");
  badge.className = `badge badge-${state === "recording" ? "green" : "grey"}`;
  badge.textContent = state;
  td.appendChild(badge);
  return td;
}

export function errorText(err: unknown): string {
  if (err instanceof ApiError) {
    if (err.violations.length) {
      const first = err.violations[0];
      return `${err.code}: ${first.code} (${first.subject}) ${first.detail}`;
    }
    return err.status === 0 ? `API unreachable: ${err.detail}` : err.message;
  }
  return String(err);
}
