/**
 * User and role editor. User creation requires at least one role both
 * here (blocked with a message before the request) and server-side.
 */

import { AdminApi, RoleView, UserView } from "./api.js";
import { ErrorBanner } from "./banner.js";
import { errorText } from "./recording.js";

const AUTH_METHODS = ["password", "token"];

export class UserEditor {
  private readonly banner: ErrorBanner;
  private readonly usersBody: HTMLTableSectionElement;
  private readonly rolesBody: HTMLTableSectionElement;
  private readonly roleChoices: HTMLElement;
  private readonly userError: HTMLElement;
  private readonly roleError: HTMLElement;
  private roles: RoleView[] = [];

  constructor(
    private readonly api: AdminApi,
    private readonly root: HTMLElement,
  ) {
    this.banner = new ErrorBanner(root.querySelector("#usr-banner") as HTMLElement);
    this.usersBody = root.querySelector("#usr-list-body") as HTMLTableSectionElement;
    this.rolesBody = root.querySelector("#role-list-body") as HTMLTableSectionElement;
    this.roleChoices = root.querySelector("#usr-role-choices") as HTMLElement;
    this.userError = root.querySelector("#usr-error") as HTMLElement;
    this.roleError = root.querySelector("#role-error") as HTMLElement;

    (root.querySelector("#usr-create-form") as HTMLFormElement).onsubmit = (event) => {
      event.preventDefault();
      void this.createUser();
    };
    (root.querySelector("#role-create-form") as HTMLFormElement).onsubmit = (event) => {
      event.preventDefault();
      void this.createRole();
    };
  }

  show(): void {
    void this.refresh();
  }

  hide(): void {
    // no background polling; the tables reload on every visit and action
  }

  private async refresh(): Promise<void> {
    try {
      const [users, roles] = await Promise.all([this.api.listUsers(), this.api.listRoles()]);
      this.roles = roles;
      this.renderUsers(users);
      this.renderRoles(roles);
      this.renderRoleChoices();
      this.banner.clear();
    } catch (err) {
      this.banner.show(errorText(err), () => void this.refresh());
    }
  }

  // --- users ---

  private renderUsers(users: UserView[]): void {
    this.usersBody.textContent = "";
    for (const user of users) {
      const row = document.createElement("tr");
      row.append(
        cell(user.id),
        cell(user.federated_name),
        cell(user.role_ids.join(", ") || "-"),
        cell(user.token ? `${user.token.firmcode}/${user.token.usercode}` : "-"),
        cell(user.upstream ? user.upstream.username : "-"),
      );
      const actions = document.createElement("td");
      const remove = document.createElement("button");
      remove.type = "button";
      remove.textContent = "Delete";
      remove.onclick = () => void this.deleteUser(user.id);
      actions.appendChild(remove);
      row.appendChild(actions);
      this.usersBody.appendChild(row);
    }
  }

  private renderRoleChoices(): void {
    this.roleChoices.textContent = "";
    for (const role of this.roles) {
      const label = document.createElement("label");
      label.className = "choice";
      const box = document.createElement("input");
      box.type = "checkbox";
      box.value = role.id;
      box.className = "usr-role-box";
      label.append(box, document.createTextNode(role.id));
      this.roleChoices.appendChild(label);
    }
  }

  private async createUser(): Promise<void> {
    this.userError.textContent = "";
    const value = (id: string) => (this.root.querySelector(id) as HTMLInputElement).value.trim();
    const roleIds = Array.from(
      this.root.querySelectorAll<HTMLInputElement>(".usr-role-box:checked"),
    ).map((box) => box.value);
    if (!roleIds.length) {
      this.userError.textContent = "a user must be a member of at least one role";
      return;
    }
    const firmcode = value("#usr-firmcode");
    const usercode = value("#usr-usercode");
    const upstreamUser = value("#usr-upstream-user");
    const upstreamSecret = value("#usr-upstream-secret");
    try {
      await this.api.createUser({
        id: value("#usr-id"),
        federated_name: value("#usr-name"),
        password: (this.root.querySelector("#usr-password") as HTMLInputElement).value,
        role_ids: roleIds,
        token: firmcode || usercode ? { firmcode, usercode } : null,
        upstream: upstreamUser ? { username: upstreamUser, secret: upstreamSecret } : null,
      });
      (this.root.querySelector("#usr-create-form") as HTMLFormElement).reset();
      void this.refresh();
    } catch (err) {
      this.userError.textContent = errorText(err);
    }
  }

  private async deleteUser(id: string): Promise<void> {
    try {
      await this.api.deleteUser(id);
      void this.refresh();
    } catch (err) {
      this.banner.show(errorText(err), () => void this.deleteUser(id));
    }
  }

  // --- roles ---

  private renderRoles(roles: RoleView[]): void {
    this.rolesBody.textContent = "";
    for (const role of roles) {
      const row = document.createElement("tr");
      row.append(
        cell(role.id),
        cell(role.name),
        cell(role.workflow_ids.join(", ") || "-"),
        cell(role.required_auth.join(", ")),
      );
      const actions = document.createElement("td");
      const remove = document.createElement("button");
      remove.type = "button";
      remove.textContent = "Delete";
      remove.onclick = () => void this.deleteRole(role.id);
      actions.appendChild(remove);
      row.appendChild(actions);
      this.rolesBody.appendChild(row);
    }
  }

  private async createRole(): Promise<void> {
    this.roleError.textContent = "";
    const id = (this.root.querySelector("#role-id") as HTMLInputElement).value.trim();
    const name = (this.root.querySelector("#role-name") as HTMLInputElement).value.trim();
    const methods = Array.from(
      this.root.querySelectorAll<HTMLInputElement>(".role-auth-box:checked"),
    ).map((box) => box.value);
    try {
      await this.api.createRole({ id, name: name || id, workflow_ids: [], required_auth: methods });
      (this.root.querySelector("#role-create-form") as HTMLFormElement).reset();
      void this.refresh();
    } catch (err) {
      this.roleError.textContent = errorText(err);
    }
  }

  private async deleteRole(id: string): Promise<void> {
    try {
      await this.api.deleteRole(id);
      void this.refresh();
    } catch (err) {
      this.banner.show(errorText(err), () => void this.deleteRole(id));
    }
  }
}

export { AUTH_METHODS };

function cell(text: string): HTMLTableCellElement {
  const td = document.createElement("td");
  td.textContent = text;
  return td;
}
