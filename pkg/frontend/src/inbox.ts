// Inbox screen: open tasks as cards, kind-specific completion controls.
// Rendering is a pure function of the last poll plus transient notices, so
// the whole screen can be re-derived from the API at any moment.

import type { MessageOption, TaskView } from "./api.js";
import { fieldsFromSchema } from "./forms.js";

export interface Notice {
  level: "info" | "warn" | "error";
  text: string;
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Options arrive sorted by arrival time; keep the server order. */
export function messageRows(messages: MessageOption[]): MessageOption[] {
  return messages.slice();
}

export function renderMessageOption(msg: MessageOption, position: number): string {
  const badge = position === 0 ? ` <span class="badge">earliest</span>` : "";
  return (
    `<label class="option"><input type="radio" name="pick" value="${escapeHtml(msg.id)}"` +
    `${position === 0 ? " checked" : ""}>` +
    `<code>${escapeHtml(msg.type)}</code> from <b>${escapeHtml(msg.from)}</b>` +
    ` <span class="ts">arrived ${msg.arrived_at} ms</span>${badge}</label>`
  );
}

function renderPayloadForm(schema: Record<string, string>): string {
  const fields = fieldsFromSchema(schema as Record<string, never>);
  if (fields.length === 0) return "";
  const rows = fields
    .map(
      (f) =>
        `<label class="field">${escapeHtml(f.name)} <small>(${f.type})</small>` +
        `<input data-field="${escapeHtml(f.name)}" type="${f.inputType}"${f.step ? ` step="${f.step}"` : ""}></label>`,
    )
    .join("");
  return `<div class="payload">${rows}</div>`;
}

export function renderTask(task: TaskView): string {
  const head =
    `<div class="task-head"><b>${escapeHtml(task.agent)}</b> · ${escapeHtml(task.label)}` +
    ` <small>${escapeHtml(task.state)} · visit ${task.occurrence}</small></div>`;
  let body = "";
  if (task.kind === "branch") {
    const buttons = (task.options.labels ?? [])
      .map((label) => `<button data-branch="${escapeHtml(label)}">${escapeHtml(label)}</button>`)
      .join(" ");
    body = `${renderPayloadFormForBranch(task)}<div class="branches">${buttons}</div>`;
  } else if (task.kind === "send_targets") {
    const arms = task.options.arms ?? [];
    body = arms
      .map((arm, i) => {
        const card = arm.cardinality;
        const targets =
          card.kind === "one" && arm.max_instances === 1
            ? ""
            : `<label class="field">targets <input data-targets type="text" placeholder="${
                card.kind === "choose" ? `${card.min}..${card.max} indices, e.g. 0,1,2` : "indices"
              }"></label>`;
        return (
          `<div class="arm" data-arm="${i}"><code>${escapeHtml(arm.type)}</code> to <b>${escapeHtml(arm.to)}</b>` +
          ` <small>${card.kind}${card.kind === "choose" ? `(${card.min},${card.max})` : ""}</small>` +
          targets +
          renderPayloadForm(arm.schema) +
          `<button data-send="${i}">send</button></div>`
        );
      })
      .join("");
  } else {
    const rows = messageRows(task.options.messages ?? []);
    const list = rows.map((msg, i) => renderMessageOption(msg, i)).join("");
    body = rows.length
      ? `<div class="messages">${list}</div><button data-pick>receive selected</button>`
      : `<p class="muted">no selectable messages</p>`;
  }
  return `<article class="task" data-task="${escapeHtml(task.id)}">${head}${body}</article>`;
}

function renderPayloadFormForBranch(_task: TaskView): string {
  // a branch decision may carry free-form variables; the form stays minimal
  // (label buttons) unless a future need shows up
  return "";
}

export function renderInbox(tasks: TaskView[], notices: Notice[]): string {
  const noticeHtml = notices
    .map((n) => `<div class="notice ${n.level}">${escapeHtml(n.text)}</div>`)
    .join("");
  if (tasks.length === 0) {
    return `${noticeHtml}<p class="zero">Inbox empty - no open tasks on this node.</p>`;
  }
  return noticeHtml + tasks.map(renderTask).join("");
}

/**
 * One POST per user action: a task id in flight ignores further submits
 * until the server answered (success, stale, or error).
 */
export class SubmitGuard {
  private inflight = new Set<string>();

  async submit<T>(taskId: string, action: () => Promise<T>): Promise<T | undefined> {
    if (this.inflight.has(taskId)) return undefined;
    this.inflight.add(taskId);
    try {
      return await action();
    } finally {
      this.inflight.delete(taskId);
    }
  }

  pending(taskId: string): boolean {
    return this.inflight.has(taskId);
  }
}

export interface InboxState {
  tasks: TaskView[];
  notices: Notice[];
}

/** A 409 means the agent moved first (e.g. a timeout); drop the task and
 * tell the user without blocking anything. */
export function applyStale(state: InboxState, taskId: string, message: string): InboxState {
  return {
    tasks: state.tasks.filter((t) => t.id !== taskId),
    notices: [...state.notices, { level: "warn", text: `task superseded: ${message}` }],
  };
}

export function applyPoll(state: InboxState, tasks: TaskView[]): InboxState {
  return { tasks, notices: state.notices.slice(-3) };
}
