/**
 * Presence badge helpers: map a session's reported status to the badge
 * class and label the dashboard renders.
 */

import type { SessionView } from "./api.js";

export type BadgeVariant = "green" | "red" | "expired" | "terminated";

export function badgeVariant(session: Pick<SessionView, "status">): BadgeVariant {
  switch (session.status) {
    case "green":
      return "green";
    case "red":
      return "red";
    case "expired":
      return "expired";
    default:
      return "terminated";
  }
}

export function badgeText(session: Pick<SessionView, "status" | "end_reason">): string {
  const variant = badgeVariant(session);
  if (variant === "green") {
    return "Green";
  }
  if (variant === "red") {
    return "Red";
  }
  if (variant === "expired") {
    return "Expired";
  }
  return session.end_reason ? `Ended (${session.end_reason})` : "Ended";
}
