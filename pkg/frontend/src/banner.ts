/**
 * Inline error banner with a Retry hook. Every view owns one; API errors
 * land here instead of vanishing into the console.
 */

export class ErrorBanner {
  private readonly el: HTMLDivElement;
  private readonly message: HTMLSpanElement;
  private readonly retryButton: HTMLButtonElement;
  private retry: (() => void) | null = null;

  constructor(host: HTMLElement) {
    this.el = document.createElement("div");
    this.el.className = "banner";
    this.el.hidden = true;
    this.message = document.createElement("span");
    this.retryButton = document.createElement("button");
    this.retryButton.type = "button";
    this.retryButton.textContent = "Retry";
    this.retryButton.onclick = () => {
      const action = this.retry;
      this.clear();
      if (action) {
        action();
      }
    };
    this.el.append(this.message, this.retryButton);
    host.appendChild(this.el);
  }

  show(text: string, retry?: () => void): void {
    this.message.textContent = text;
    this.retry = retry ?? null;
    this.retryButton.hidden = retry === undefined;
    this.el.hidden = false;
  }

  clear(): void {
    this.el.hidden = true;
    this.retry = null;
  }
}
