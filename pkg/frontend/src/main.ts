/**
 * Single-page admin console. The token is asked for once and kept in
 * memory only; tabs mount one view at a time and each view rebuilds its
 * state from the API, so a reload loses nothing but the token.
 */

import { AdminApi, ApiError } from "./api.js";
import { RecordingConsole } from "./recording.js";
import { SessionDashboard } from "./sessions.js";
import { UserEditor } from "./users.js";
import { WorkflowEditor } from "./workflows.js";

interface View {
  show(): void;
  hide(): void;
}

function init(): void {
  const tokenView = document.getElementById("view-token") as HTMLElement;
  const tokenForm = document.getElementById("token-form") as HTMLFormElement;
  const tokenInput = document.getElementById("token-input") as HTMLInputElement;
  const tokenError = document.getElementById("token-error") as HTMLElement;
  const tabs = document.getElementById("tabs") as HTMLElement;

  tokenForm.onsubmit = async (event) => {
    event.preventDefault();
    tokenError.hidden = true;
    const api = new AdminApi(tokenInput.value.trim());
    try {
      await api.listRoles();
    } catch (err) {
      tokenError.textContent =
        err instanceof ApiError && err.status === 401
          ? "token rejected"
          : `cannot reach the admin API: ${String(err)}`;
      tokenError.hidden = false;
      return;
    }
    tokenInput.value = "";
    tokenView.hidden = true;
    tabs.hidden = false;
    mountViews(api, tabs);
  };
}

function mountViews(api: AdminApi, tabs: HTMLElement): void {
  const sections: Record<string, HTMLElement> = {
    recordings: document.getElementById("view-recordings") as HTMLElement,
    workflows: document.getElementById("view-workflows") as HTMLElement,
    users: document.getElementById("view-users") as HTMLElement,
    sessions: document.getElementById("view-sessions") as HTMLElement,
  };
  const workflowEditor = new WorkflowEditor(api, sections.workflows);
  const views: Record<string, View> = {
    recordings: new RecordingConsole(api, sections.recordings, {
      openWorkflow: (workflowId) => {
        workflowEditor.open(workflowId);
        select("workflows");
      },
    }),
    workflows: workflowEditor,
    users: new UserEditor(api, sections.users),
    sessions: new SessionDashboard(api, sections.sessions),
  };

  let active: string | null = null;
  const select = (name: string) => {
    if (active === name) {
      return;
    }
    if (active !== null) {
      views[active].hide();
      sections[active].hidden = true;
      tabs.querySelector(`[data-tab="${active}"]`)?.classList.remove("active");
    }
    active = name;
    sections[name].hidden = false;
    tabs.querySelector(`[data-tab="${name}"]`)?.classList.add("active");
    views[name].show();
  };

  tabs.querySelectorAll<HTMLButtonElement>("button[data-tab]").forEach((button) => {
    button.onclick = () => select(button.dataset.tab as string);
  });
  select("recordings");
}

document.addEventListener("DOMContentLoaded", init, false);
