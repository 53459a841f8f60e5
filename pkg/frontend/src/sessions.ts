/**
 * Session dashboard: live presence table polled every second. Green means
 * token present and recent activity; the badge flips Red as soon as the
 * sessions endpoint reports it. Terminate ends a session immediately.
 */

import { AdminApi, SessionView } from "./api.js";
import { badgeText, badgeVariant } from "./badges.js";
import { ErrorBanner } from "./banner.js";
import { formatUtc, shortId } from "./format.js";
import { Poller } from "./poll.js";
import { errorText } from "./recording.js";

export class SessionDashboard {
  private readonly banner: ErrorBanner;
  private readonly body: HTMLTableSectionElement;
  private readonly hideEnded: HTMLInputElement;
  private readonly poller: Poller;

  constructor(
    private readonly api: AdminApi,
    root: HTMLElement,
  ) {
    this.banner = new ErrorBanner(root.querySelector("#ses-banner") as HTMLElement);
    this.body = root.querySelector("#ses-list-body") as HTMLTableSectionElement;
    this.hideEnded = root.querySelector("#ses-hide-ended") as HTMLInputElement;
    this.hideEnded.onchange = () => void this.refresh();
    this.poller = new Poller(() => this.refresh(), 1000);
  }

  show(): void {
    this.poller.start();
  }

  hide(): void {
    this.poller.stop();
  }

  private async refresh(): Promise<void> {
    try {
      const sessions = await this.api.listSessions();
      this.render(sessions);
      this.banner.clear();
    } catch (err) {
      this.banner.show(errorText(err), () => void this.refresh());
    }
  }

  private render(sessions: SessionView[]): void {
    this.body.textContent = "";
    for (const session of sessions) {
      if (this.hideEnded.checked && session.terminated) {
        continue;
      }
      const row = document.createElement("tr");
      row.append(
        cell(shortId(session.id)),
        cell(`${session.federated_name} (${session.user_id})`),
        cell(session.methods.join(", ")),
        this.badge(session),
        cell(session.active_workflows.join(", ") || "-"),
        cell(formatUtc(session.last_beacon_at)),
        cell(session.token_present ? "yes" : "no"),
      );
      const actions = document.createElement("td");
      if (!session.terminated) {
        const terminate = document.createElement("button");
        terminate.type = "button";
        terminate.textContent = "Terminate";
        terminate.onclick = () => void this.terminate(session.id);
        actions.appendChild(terminate);
      }
      row.appendChild(actions);
      this.body.appendChild(row);
    }
  }

  private badge(session: SessionView): HTMLTableCellElement {
    const td = document.createElement("td");
    const badge = document.createElement("span");
    badge.className = `badge badge-${badgeVariant(session)}`;
    badge.textContent = badgeText(session);
    td.appendChild(badge);
    return td;
  }

  private async terminate(id: string): Promise<void> {
    try {
      await this.api.terminateSession(id);
      await this.refresh();
    } catch (err) {
      this.banner.show(errorText(err), () => void this.terminate(id));
    }
  }
}

function cell(text: string): HTMLTableCellElement {
  const td = document.createElement("td");
  td.textContent = text;
  return td;
}
