import type { ReviewApiLike } from "./api.js";
import type { Decision, VerdictRequest, WorklistItem } from "./types.js";

/**
 * Review session state for one expert, kept free of DOM concerns so it can
 * be tested headlessly.
 *
 * Every decision issues exactly one verdict POST. Local state only flips to
 * "reviewed" after the server confirms (204); a failed POST is parked in
 * `pendingRetry` for an explicit retry — never silently dropped. Revisiting
 * a reviewed sample and deciding again submits a replacement verdict.
 */
export class ReviewSession {
  private items: WorklistItem[] = [];
  private cursor = 0;
  overlayOn = true;
  pendingRetry: VerdictRequest | null = null;

  constructor(
    private readonly api: ReviewApiLike,
    readonly expert: string,
  ) {}

  async load(): Promise<void> {
    const worklist = await this.api.worklist(this.expert);
    this.items = worklist.samples;
    this.cursor = 0;
    this.advanceToPending();
  }

  get samples(): readonly WorklistItem[] {
    return this.items;
  }

  current(): WorklistItem | null {
    return this.items[this.cursor] ?? null;
  }

  progress(): { reviewed: number; assigned: number } {
    const reviewed = this.items.filter((s) => s.status === "reviewed").length;
    return { reviewed, assigned: this.items.length };
  }

  done(): boolean {
    return this.items.length > 0 && this.items.every((s) => s.status === "reviewed");
  }

  overlayUrl(): string | null {
    const item = this.current();
    return item ? this.api.overlayUrl(item.sample_id, this.overlayOn) : null;
  }

  toggleOverlay(): void {
    this.overlayOn = !this.overlayOn;
  }

  next(): void {
    if (this.items.length) {
      this.cursor = (this.cursor + 1) % this.items.length;
    }
  }

  previous(): void {
    if (this.items.length) {
      this.cursor = (this.cursor - 1 + this.items.length) % this.items.length;
    }
  }

  /** Jump forward to the nearest unreviewed sample, if any remain. */
  advanceToPending(): void {
    if (!this.items.length) return;
    for (let step = 0; step < this.items.length; step++) {
      const i = (this.cursor + step) % this.items.length;
      if (this.items[i].status === "pending") {
        this.cursor = i;
        return;
      }
    }
  }

  /**
   * Submit a verdict for the current sample. Returns true when the server
   * confirmed and the session advanced; false when the POST failed and is
   * waiting in pendingRetry.
   */
  async decide(decision: Decision): Promise<boolean> {
    const item = this.current();
    if (!item) return false;
    const verdict: VerdictRequest = {
      expert: this.expert,
      sample: item.sample_id,
      decision,
    };
    return this.submit(verdict);
  }

  async retry(): Promise<boolean> {
    if (!this.pendingRetry) return false;
    return this.submit(this.pendingRetry);
  }

  private async submit(verdict: VerdictRequest): Promise<boolean> {
    try {
      await this.api.postVerdict(verdict);
    } catch {
      this.pendingRetry = verdict;
      return false;
    }
    this.pendingRetry = null;
    const item = this.items.find((s) => s.sample_id === verdict.sample);
    if (item) {
      item.status = "reviewed";
      item.decision = verdict.decision;
    }
    this.next();
    this.advanceToPending();
    return true;
  }
}
