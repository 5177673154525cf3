// Latest-wins rate limiter: at most one request in flight, at most one send
// per interval; intermediate values are coalesced away. Rapid slider drags
// therefore cost a bounded number of requests and always end on the final
// value.

export class LatestWins<T> {
  private pending: T | null = null;
  private inFlight = false;
  private lastSend = -Infinity;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private send: (value: T) => void,
    private minIntervalMs = 100,
    private now: () => number = () => Date.now(),
  ) {}

  push(value: T) {
    this.pending = value;
    this.maybeFlush();
  }

  /** Call when the in-flight request has been answered (or failed). */
  settled() {
    this.inFlight = false;
    this.maybeFlush();
  }

  private maybeFlush() {
    if (this.pending === null || this.inFlight) return;
    const wait = this.lastSend + this.minIntervalMs - this.now();
    if (wait > 0) {
      if (this.timer === null) {
        this.timer = setTimeout(() => {
          this.timer = null;
          this.maybeFlush();
        }, wait);
      }
      return;
    }
    const value = this.pending;
    this.pending = null;
    this.inFlight = true;
    this.lastSend = this.now();
    this.send(value);
  }

  dispose() {
    if (this.timer !== null) clearTimeout(this.timer);
    this.pending = null;
  }
}
