import type {
  ExportReport,
  SampleDetail,
  VerdictRequest,
  Worklist,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status?: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** The service surface the UI depends on; lets tests substitute fakes. */
export interface ReviewApiLike {
  worklist(expert: string): Promise<Worklist>;
  sample(sampleId: string): Promise<SampleDetail>;
  overlayUrl(sampleId: string, tint: boolean): string;
  postVerdict(verdict: VerdictRequest): Promise<void>;
  exportReport(): Promise<ExportReport>;
}

/** Thin typed client over the review service API. */
export class ReviewApi implements ReviewApiLike {
  constructor(private readonly baseUrl: string = "") {}

  private async getJson<T>(path: string): Promise<T> {
    let response: Response;
    try {
      response = await fetch(this.baseUrl + path);
    } catch (err) {
      throw new ApiError(`network failure for ${path}: ${String(err)}`);
    }
    if (!response.ok) {
      throw new ApiError(`GET ${path} failed (${response.status})`, response.status);
    }
    return (await response.json()) as T;
  }

  worklist(expert: string): Promise<Worklist> {
    return this.getJson(`/api/worklist?expert=${encodeURIComponent(expert)}`);
  }

  sample(sampleId: string): Promise<SampleDetail> {
    return this.getJson(`/api/sample/${encodeURIComponent(sampleId)}`);
  }

  overlayUrl(sampleId: string, tint: boolean): string {
    const flag = tint ? 1 : 0;
    return `${this.baseUrl}/api/sample/${encodeURIComponent(sampleId)}/overlay.png?tint=${flag}`;
  }

  async postVerdict(verdict: VerdictRequest): Promise<void> {
    let response: Response;
    try {
      response = await fetch(`${this.baseUrl}/api/verdict`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(verdict),
      });
    } catch (err) {
      throw new ApiError(`network failure posting verdict: ${String(err)}`);
    }
    if (response.status !== 204) {
      throw new ApiError(`verdict rejected (${response.status})`, response.status);
    }
  }

  exportReport(): Promise<ExportReport> {
    return this.getJson("/api/export");
  }
}
