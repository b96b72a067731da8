import { describe, expect, it } from "vitest";

import type { ReviewApiLike } from "../src/api.js";
import { ReviewSession } from "../src/session.js";
import type { VerdictRequest, Worklist, WorklistItem } from "../src/types.js";

function item(id: string, status: "pending" | "reviewed" = "pending"): WorklistItem {
  return {
    sample_id: id,
    lesion: "pneumonia",
    polarity: "positive",
    template_type: "basic",
    status,
    decision: status === "reviewed" ? "acceptable" : null,
  };
}

class FakeApi implements ReviewApiLike {
  posted: VerdictRequest[] = [];
  failNextPosts = 0;

  constructor(private readonly items: WorklistItem[]) {}

  async worklist(expert: string): Promise<Worklist> {
    const reviewed = this.items.filter((s) => s.status === "reviewed").length;
    return {
      expert,
      samples: this.items.map((s) => ({ ...s })),
      progress: { reviewed, assigned: this.items.length },
    };
  }

  async sample(sampleId: string) {
    return {
      sample_id: sampleId,
      study_id: "s0",
      lesion: "pneumonia",
      polarity: "positive" as const,
      template_type: "basic",
      locations: ["right lung base"],
      instruction: "Segment the pneumonia in the right lung base.",
      answer_text: "[SEG]",
      report: "Pneumonia in the right lung base.",
    };
  }

  overlayUrl(sampleId: string, tint: boolean): string {
    return `/api/sample/${sampleId}/overlay.png?tint=${tint ? 1 : 0}`;
  }

  async postVerdict(verdict: VerdictRequest): Promise<void> {
    if (this.failNextPosts > 0) {
      this.failNextPosts -= 1;
      throw new Error("boom");
    }
    this.posted.push(verdict);
  }

  async exportReport(): Promise<never> {
    throw new Error("not used");
  }
}

describe("ReviewSession", () => {
  it("advances past already-reviewed samples on load", async () => {
    const api = new FakeApi([item("p0", "reviewed"), item("p1"), item("p2")]);
    const session = new ReviewSession(api, "A");
    await session.load();
    expect(session.current()?.sample_id).toBe("p1");
    expect(session.progress()).toEqual({ reviewed: 1, assigned: 3 });
  });

  it("posts exactly one verdict per decision and advances", async () => {
    const api = new FakeApi([item("p0"), item("p1")]);
    const session = new ReviewSession(api, "A");
    await session.load();
    expect(await session.decide("acceptable")).toBe(true);
    expect(api.posted).toEqual([
      { expert: "A", sample: "p0", decision: "acceptable" },
    ]);
    expect(session.current()?.sample_id).toBe("p1");
    expect(session.progress().reviewed).toBe(1);
  });

  it("parks a failed POST for retry instead of losing it", async () => {
    const api = new FakeApi([item("p0"), item("p1")]);
    api.failNextPosts = 1;
    const session = new ReviewSession(api, "A");
    await session.load();
    expect(await session.decide("not_acceptable")).toBe(false);
    expect(session.pendingRetry).toEqual({
      expert: "A",
      sample: "p0",
      decision: "not_acceptable",
    });
    expect(session.current()?.sample_id).toBe("p0"); // no silent advance
    expect(api.posted).toHaveLength(0);
    expect(await session.retry()).toBe(true);
    expect(api.posted).toHaveLength(1);
    expect(session.pendingRetry).toBeNull();
    expect(session.current()?.sample_id).toBe("p1");
  });

  it("replaces the verdict when revisiting a reviewed sample", async () => {
    const api = new FakeApi([item("p0"), item("p1")]);
    const session = new ReviewSession(api, "A");
    await session.load();
    await session.decide("acceptable");
    session.previous();
    expect(session.current()?.sample_id).toBe("p0");
    await session.decide("not_acceptable");
    expect(api.posted.map((v) => v.decision)).toEqual([
      "acceptable",
      "not_acceptable",
    ]);
    expect(session.samples[0].decision).toBe("not_acceptable");
  });

  it("toggles the overlay without side effects on verdicts", async () => {
    const api = new FakeApi([item("p0")]);
    const session = new ReviewSession(api, "A");
    await session.load();
    expect(session.overlayUrl()).toContain("tint=1");
    session.toggleOverlay();
    expect(session.overlayUrl()).toContain("tint=0");
    expect(api.posted).toHaveLength(0);
  });

  it("reports completion once everything is reviewed", async () => {
    const api = new FakeApi([item("p0"), item("p1")]);
    const session = new ReviewSession(api, "A");
    await session.load();
    await session.decide("acceptable");
    await session.decide("acceptable");
    expect(session.done()).toBe(true);
    expect(session.progress()).toEqual({ reviewed: 2, assigned: 2 });
  });
});
