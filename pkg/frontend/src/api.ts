// Typed client over the documented endpoints, and nothing else: the UI
// must stay blind, so no code path may fetch another annotator's scores.

import type {
  AnnotationSubmission,
  IaaView,
  ProgressView,
  SubmissionResult,
  TaskView,
} from "./types.js";

export class SessionExpired extends Error {
  constructor() {
    super("session expired: the bearer token was rejected");
  }
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`request failed (${status}): ${detail}`);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private token: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  setToken(token: string): void {
    this.token = token;
  }

  private async request(path: string, init: RequestInit = {}): Promise<Response> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      ...init,
      headers: {
        Authorization: `Bearer ${this.token}`,
        "content-type": "application/json",
        ...(init.headers ?? {}),
      },
    });
    if (response.status === 401) {
      throw new SessionExpired();
    }
    return response;
  }

  /** Next pending task for this annotator, or null when the queue is empty. */
  async nextTask(): Promise<TaskView | null> {
    const response = await this.request("/tasks/next");
    if (response.status === 204) {
      return null;
    }
    if (!response.ok) {
      throw new ApiError(response.status, await response.text());
    }
    return (await response.json()) as TaskView;
  }

  async submitAnnotation(payload: AnnotationSubmission): Promise<SubmissionResult> {
    const response = await this.request("/annotations", {
      method: "POST",
      body: JSON.stringify(payload),
    });
    if (!response.ok) {
      throw new ApiError(response.status, await response.text());
    }
    return (await response.json()) as SubmissionResult;
  }

  async progress(): Promise<ProgressView> {
    const response = await this.request("/progress");
    if (!response.ok) {
      throw new ApiError(response.status, await response.text());
    }
    return (await response.json()) as ProgressView;
  }

  async iaa(): Promise<IaaView> {
    const response = await this.request("/iaa");
    if (!response.ok) {
      throw new ApiError(response.status, await response.text());
    }
    return (await response.json()) as IaaView;
  }

  /** Absolute URL for a task image; images are fetched by the <img> tag. */
  imageUrl(path: string): string {
    return `${this.baseUrl}${path}`;
  }
}
