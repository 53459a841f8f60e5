/**
 * Periodic polling with coalescing: at most one request in flight per
 * poller, so a slow response never stacks a second one behind it.
 */

export class Poller {
  private timer: ReturnType<typeof setInterval> | null = null;
  private inflight = false;

  constructor(
    private readonly task: () => Promise<void>,
    private readonly periodMs: number,
  ) {}

  start(): void {
    if (this.timer !== null) {
      return;
    }
    void this.tick();
    this.timer = setInterval(() => void this.tick(), this.periodMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  get running(): boolean {
    return this.timer !== null;
  }

  private async tick(): Promise<void> {
    if (this.inflight) {
      return;
    }
    this.inflight = true;
    try {
      await this.task();
    } catch {
      // the task owns its error reporting; a throw must not kill the loop
    } finally {
      this.inflight = false;
    }
  }
}
