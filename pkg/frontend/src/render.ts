// Pure HTML builders for the three views; app.ts mounts them and binds
// events. Keeping these string-level makes the view states testable
// without a DOM.

import { METRICS, REDUNDANCY_OPTIONS, RubricForm } from "./form.js";
import type { IaaView, ProgressView, TaskView } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderIdle(): string {
  return `<section class="idle"><h2>No tasks</h2><p>There are no pending tasks assigned to you right now.</p></section>`;
}

export function renderReauth(): string {
  return `<section class="reauth"><h2>Session expired</h2><p>Your token was rejected. Paste a valid token to continue.</p><input id="token-input" type="password" placeholder="bearer token"><button id="token-save">Sign in</button></section>`;
}

export function renderTask(task: TaskView, imageUrl: (path: string) => string): string {
  const options = task.source.options.length
    ? `<ol class="options">${task.source.options.map((o) => `<li>${escapeHtml(o)}</li>`).join("")}</ol>`
    : `<p class="no-options">(no options)</p>`;
  const images = task.candidate.images
    .map(
      (img) => `
      <figure data-placeholder="${escapeHtml(img.placeholder)}">
        <img src="${escapeHtml(imageUrl(img.image_url))}" alt="${escapeHtml(img.placeholder)}"
             data-image-for="${escapeHtml(img.placeholder)}">
        <figcaption>${escapeHtml(img.placeholder)}
          <button class="retry-image" data-url="${escapeHtml(imageUrl(img.image_url))}" hidden>retry</button>
        </figcaption>
      </figure>`,
    )
    .join("");
  // The placeholder token stays visible in the text; the figure below
  // resolves it, which keeps multi-image candidates unambiguous.
  return `
  <section class="task" data-task-id="${escapeHtml(task.task_id)}">
    <div class="panes">
      <article class="pane source">
        <h2>Original question</h2>
        <p>${escapeHtml(task.source.question)}</p>
        ${options}
      </article>
      <article class="pane candidate">
        <h2>Transformed question</h2>
        <p>${escapeHtml(task.candidate.modified_question)}</p>
        ${images}
      </article>
    </div>
  </section>`;
}

export function renderForm(form: RubricForm, showErrors: boolean): string {
  const errors = showErrors ? form.fieldErrors() : {};
  const rows = METRICS.map((metric) => {
    const answer = form.answer(metric.code);
    let controls: string;
    if (metric.kind === "ordinal") {
      controls = REDUNDANCY_OPTIONS.map(
        (option) => `
        <label><input type="radio" name="metric-${metric.code}" value="${option.category}"
          ${answer === option.category ? "checked" : ""}> ${escapeHtml(option.label)}</label>`,
      ).join("");
    } else {
      controls = [true, false]
        .map(
          (value) => `
        <label><input type="radio" name="metric-${metric.code}" value="${value ? "yes" : "no"}"
          ${answer === value ? "checked" : ""}> ${value ? "yes" : "no"}</label>`,
        )
        .join("");
    }
    const needsJustification =
      form.nonPassMetrics().includes(metric.code) || false;
    const justification = needsJustification
      ? `<textarea class="justification" data-metric="${metric.code}"
           placeholder="Briefly justify this score"></textarea>`
      : "";
    const error = errors[metric.code]
      ? `<p class="field-error" data-metric="${metric.code}">${escapeHtml(errors[metric.code]!)}</p>`
      : "";
    return `
    <fieldset class="metric" data-metric="${metric.code}">
      <legend>${metric.code}: ${escapeHtml(metric.question)}</legend>
      ${controls}
      ${justification}
      ${error}
    </fieldset>`;
  }).join("");
  const disabled = form.canSubmit() ? "" : "disabled";
  return `
  <form id="rubric-form">
    ${rows}
    <button id="submit-annotation" type="submit" ${disabled}>Submit</button>
  </form>`;
}

export function renderProgress(progress: ProgressView, iaa: IaaView): string {
  const badge =
    iaa.status === "ok" && iaa.mean !== null
      ? `<span class="iaa-badge ok">pool agreement ${iaa.mean.toFixed(2)} over ${iaa.items} items</span>`
      : `<span class="iaa-badge insufficient">insufficient data</span>`;
  return `
  <section class="progress">
    <span>${escapeHtml(progress.annotator_id)}</span>
    <span>completed ${progress.completed}</span>
    <span>pending ${progress.pending}</span>
    ${badge}
  </section>`;
}
