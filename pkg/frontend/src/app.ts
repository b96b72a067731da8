import { ReviewApi, type ReviewApiLike } from "./api.js";
import { ReviewSession } from "./session.js";

interface Elements {
  loginPanel: HTMLElement;
  reviewPanel: HTMLElement;
  expertInput: HTMLInputElement;
  startButton: HTMLButtonElement;
  image: HTMLImageElement;
  overlayState: HTMLElement;
  meta: HTMLElement;
  report: HTMLElement;
  progressBar: HTMLElement;
  progressText: HTMLElement;
  status: HTMLElement;
  acceptButton: HTMLButtonElement;
  rejectButton: HTMLButtonElement;
  retryButton: HTMLButtonElement;
  prevButton: HTMLButtonElement;
  nextButton: HTMLButtonElement;
}

function grab(root: Document): Elements {
  const byId = <T extends HTMLElement>(id: string): T => {
    const el = root.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as T;
  };
  return {
    loginPanel: byId("login-panel"),
    reviewPanel: byId("review-panel"),
    expertInput: byId<HTMLInputElement>("expert-input"),
    startButton: byId<HTMLButtonElement>("start-button"),
    image: byId<HTMLImageElement>("sample-image"),
    overlayState: byId("overlay-state"),
    meta: byId("sample-meta"),
    report: byId("report-text"),
    progressBar: byId("progress-bar"),
    progressText: byId("progress-text"),
    status: byId("status-line"),
    acceptButton: byId<HTMLButtonElement>("accept-button"),
    rejectButton: byId<HTMLButtonElement>("reject-button"),
    retryButton: byId<HTMLButtonElement>("retry-button"),
    prevButton: byId<HTMLButtonElement>("prev-button"),
    nextButton: byId<HTMLButtonElement>("next-button"),
  };
}

export interface AppHandle {
  session: ReviewSession | null;
  start(expert: string): Promise<void>;
  render(): Promise<void>;
  handleKey(key: string): Promise<void>;
}

export function initApp(root: Document, api: ReviewApiLike = new ReviewApi()): AppHandle {
  const el = grab(root);

  const handle: AppHandle = {
    session: null,

    async start(expert: string): Promise<void> {
      const session = new ReviewSession(api, expert.trim());
      try {
        await session.load();
      } catch (err) {
        el.status.textContent = `Could not load worklist: ${String(err)}`;
        return;
      }
      handle.session = session;
      el.loginPanel.hidden = true;
      el.reviewPanel.hidden = false;
      await handle.render();
    },

    async render(): Promise<void> {
      const session = handle.session;
      if (!session) return;
      const { reviewed, assigned } = session.progress();
      el.progressText.textContent = `${reviewed} / ${assigned} reviewed`;
      el.progressBar.style.width = assigned
        ? `${Math.round((100 * reviewed) / assigned)}%`
        : "0%";
      el.retryButton.hidden = session.pendingRetry === null;
      if (session.pendingRetry) {
        el.status.textContent = "Verdict failed to send — press R or Retry.";
      }

      const item = session.current();
      if (!item) {
        el.meta.textContent = "Worklist is empty.";
        return;
      }
      el.overlayState.textContent = session.overlayOn ? "overlay on" : "overlay off";
      const url = session.overlayUrl();
      if (url) el.image.src = url;
      try {
        const detail = await api.sample(item.sample_id);
        el.meta.innerHTML = [
          `<dt>Sample</dt><dd>${detail.sample_id}</dd>`,
          `<dt>Lesion</dt><dd>${detail.lesion} (${detail.polarity})</dd>`,
          `<dt>Locations</dt><dd>${detail.locations.join(", ") || "—"}</dd>`,
          `<dt>Instruction</dt><dd>${detail.instruction}</dd>`,
          `<dt>Answer</dt><dd>${detail.answer_text}</dd>`,
        ].join("");
        el.report.textContent = detail.report;
      } catch (err) {
        el.meta.textContent = `Could not load sample: ${String(err)}`;
      }
      if (session.done()) {
        el.status.textContent = "All assigned samples reviewed.";
      } else if (!session.pendingRetry && item.status === "reviewed") {
        el.status.textContent = `Already reviewed (${item.decision}); deciding again replaces the verdict.`;
      } else if (!session.pendingRetry) {
        el.status.textContent = "";
      }
    },

    async handleKey(key: string): Promise<void> {
      const session = handle.session;
      if (!session) return;
      switch (key.toLowerCase()) {
        case "a":
          await session.decide("acceptable");
          break;
        case "x":
          await session.decide("not_acceptable");
          break;
        case " ":
          session.toggleOverlay();
          break;
        case "r":
          await session.retry();
          break;
        case "arrowright":
          session.next();
          break;
        case "arrowleft":
          session.previous();
          break;
        default:
          return;
      }
      await handle.render();
    },
  };

  el.startButton.addEventListener("click", () => {
    void handle.start(el.expertInput.value);
  });
  el.expertInput.addEventListener("keydown", (ev) => {
    if ((ev as KeyboardEvent).key === "Enter") void handle.start(el.expertInput.value);
  });
  el.acceptButton.addEventListener("click", () => void handle.handleKey("a"));
  el.rejectButton.addEventListener("click", () => void handle.handleKey("x"));
  el.retryButton.addEventListener("click", () => void handle.handleKey("r"));
  el.prevButton.addEventListener("click", () => void handle.handleKey("arrowleft"));
  el.nextButton.addEventListener("click", () => void handle.handleKey("arrowright"));
  root.addEventListener("keydown", (ev) => {
    const event = ev as KeyboardEvent;
    if ((event.target as HTMLElement | null)?.tagName === "INPUT") return;
    if (["a", "x", " ", "r", "arrowright", "arrowleft"].includes(event.key.toLowerCase())) {
      event.preventDefault();
      void handle.handleKey(event.key);
    }
  });

  return handle;
}

// Boot only inside a real page that carries the review markup.
if (typeof document !== "undefined" && document.getElementById("review-root")) {
  initApp(document);
}
