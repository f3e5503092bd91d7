// DOM glue: mounts the views, binds form events, advances to the next
// task after a successful submit. Logic lives in form.ts/api.ts; this
// file stays thin.

import { ApiClient, SessionExpired } from "./api.js";
import { METRICS, RubricForm } from "./form.js";
import { renderForm, renderIdle, renderProgress, renderReauth, renderTask } from "./render.js";
import type { MetricCode, TaskView } from "./types.js";

const STORAGE_KEY = "mmqa-annotator-token";

export class App {
  private readonly form = new RubricForm();
  private task: TaskView | null = null;
  private showErrors = false;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ApiClient,
  ) {}

  async start(): Promise<void> {
    try {
      await this.loadNext();
    } catch (err) {
      if (err instanceof SessionExpired) {
        this.mountReauth();
        return;
      }
      throw err;
    }
  }

  private async loadNext(): Promise<void> {
    this.form.reset();
    this.showErrors = false;
    this.task = await this.client.nextTask();
    await this.renderAll();
  }

  private async renderAll(): Promise<void> {
    const [progress, iaa] = await Promise.all([this.client.progress(), this.client.iaa()]);
    const header = renderProgress(progress, iaa);
    if (this.task === null) {
      this.root.innerHTML = header + renderIdle();
      return;
    }
    this.root.innerHTML =
      header + renderTask(this.task, (p) => this.client.imageUrl(p)) + renderForm(this.form, this.showErrors);
    this.bindForm();
    this.bindImageRetries();
  }

  private bindForm(): void {
    const formElement = this.root.querySelector<HTMLFormElement>("#rubric-form");
    if (!formElement) return;

    for (const metric of METRICS) {
      for (const input of formElement.querySelectorAll<HTMLInputElement>(
        `input[name="metric-${metric.code}"]`,
      )) {
        input.addEventListener("change", () => {
          const value =
            metric.kind === "ordinal"
              ? (input.value as "None" | "Partial" | "Complete")
              : input.value === "yes";
          this.form.setAnswer(metric.code, value);
          void this.renderAll();
        });
      }
    }
    for (const area of formElement.querySelectorAll<HTMLTextAreaElement>(".justification")) {
      area.addEventListener("input", () => {
        this.form.setJustification(area.dataset.metric as MetricCode, area.value);
        const submit = formElement.querySelector<HTMLButtonElement>("#submit-annotation");
        if (submit) submit.disabled = !this.form.canSubmit();
      });
    }
    formElement.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submit();
    });
  }

  private bindImageRetries(): void {
    for (const img of this.root.querySelectorAll<HTMLImageElement>("img[data-image-for]")) {
      img.addEventListener("error", () => {
        const retry = img.closest("figure")?.querySelector<HTMLButtonElement>(".retry-image");
        if (retry) {
          retry.hidden = false;
          retry.addEventListener("click", () => {
            retry.hidden = true;
            img.src = `${retry.dataset.url}#${Date.now()}`;
          });
        }
      });
    }
  }

  private async submit(): Promise<void> {
    if (!this.task) return;
    if (!this.form.canSubmit()) {
      this.showErrors = true;
      await this.renderAll();
      return;
    }
    try {
      await this.client.submitAnnotation(this.form.buildPayload(this.task.task_id));
      await this.loadNext();
    } catch (err) {
      if (err instanceof SessionExpired) {
        this.mountReauth();
        return;
      }
      this.showErrors = true;
      await this.renderAll();
    }
  }

  private mountReauth(): void {
    this.root.innerHTML = renderReauth();
    const save = this.root.querySelector<HTMLButtonElement>("#token-save");
    const input = this.root.querySelector<HTMLInputElement>("#token-input");
    save?.addEventListener("click", () => {
      const token = input?.value.trim() ?? "";
      if (!token) return;
      localStorage.setItem(STORAGE_KEY, token);
      this.client.setToken(token);
      void this.start();
    });
  }
}

export function boot(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  const baseUrl = (window as { MMQA_BASE_URL?: string }).MMQA_BASE_URL ?? "";
  const token = localStorage.getItem(STORAGE_KEY) ?? "";
  const app = new App(root, new ApiClient(baseUrl, token));
  void app.start();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  boot();
}
