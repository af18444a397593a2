/**
 * Fixed-interval poller with staleness tracking. When the gateway stops
 * answering, views keep their last data and show a stale banner; polling
 * continues so recovery is automatic.
 */

export interface PollerOptions {
  intervalMs?: number;
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
  now?: () => number;
}

export class Poller {
  readonly intervalMs: number;
  private handle: unknown = null;
  private running = false;
  private lastSuccess: number | null = null;
  private lastError: string | null = null;
  private setTimer: (fn: () => void, ms: number) => unknown;
  private clearTimer: (handle: unknown) => void;
  private nowFn: () => number;

  constructor(
    private tick: () => Promise<void>,
    options: PollerOptions = {},
  ) {
    this.intervalMs = options.intervalMs ?? 2000;
    this.setTimer = options.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = options.clearTimer ?? ((h) => clearTimeout(h as number));
    this.nowFn = options.now ?? (() => Date.now());
  }

  start(): void {
    if (this.running) return;
    this.running = true;
    void this.runOnce();
  }

  stop(): void {
    this.running = false;
    if (this.handle !== null) {
      this.clearTimer(this.handle);
      this.handle = null;
    }
  }

  async runOnce(): Promise<void> {
    try {
      await this.tick();
      this.lastSuccess = this.nowFn();
      this.lastError = null;
    } catch (err) {
      this.lastError = String(err);
    }
    if (this.running) {
      this.handle = this.setTimer(() => void this.runOnce(), this.intervalMs);
    }
  }

  /** Stale once two intervals pass without a successful poll. */
  isStale(): boolean {
    if (this.lastSuccess === null) return this.lastError !== null;
    return this.nowFn() - this.lastSuccess > 2 * this.intervalMs;
  }

  errorText(): string | null {
    return this.lastError;
  }
}
