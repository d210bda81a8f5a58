/**
 * Latest-wins inference scheduling. Camera changes enqueue an inference
 * request; at most one pass is in flight; rapid requests coalesce into the
 * newest camera; results for superseded cameras are discarded; no input
 * means no work.
 */

export interface SchedulerStats {
  requested: number;
  started: number;
  applied: number;
  discarded: number;
}

export class InferenceScheduler<C, R> {
  private pending: C | null = null;
  private inFlight = false;
  private seq = 0;
  private latestSeq = 0;
  readonly stats: SchedulerStats = { requested: 0, started: 0, applied: 0, discarded: 0 };

  constructor(
    private run: (camera: C) => Promise<R>,
    private apply: (result: R, camera: C) => void,
    private onError: (err: unknown) => void = () => undefined,
  ) {}

  /** Enqueue the newest camera; superseded pending cameras are dropped. */
  request(camera: C): void {
    this.stats.requested += 1;
    this.latestSeq = ++this.seq;
    this.pending = camera;
    if (!this.inFlight) void this.launch();
  }

  get idle(): boolean {
    return !this.inFlight && this.pending === null;
  }

  private async launch(): Promise<void> {
    while (this.pending !== null) {
      const camera = this.pending;
      const seq = this.latestSeq;
      this.pending = null;
      this.inFlight = true;
      this.stats.started += 1;
      try {
        const result = await this.run(camera);
        if (seq === this.latestSeq) {
          this.stats.applied += 1;
          this.apply(result, camera);
        } else {
          this.stats.discarded += 1;
        }
      } catch (err) {
        this.onError(err);
      } finally {
        this.inFlight = false;
      }
    }
  }
}
