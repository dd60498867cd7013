// DOM wiring: two screens (inbox, monitor) fed by pollers; every screen is
// re-rendered from the latest API responses.

import { ApiError, NodeApi, type Choice, type TaskView } from "./api.js";
import { buildPayload } from "./forms.js";
import { applyPoll, applyStale, renderInbox, SubmitGuard, type InboxState } from "./inbox.js";
import { renderMonitor, renderNotFound } from "./monitor.js";
import { createPoller } from "./poll.js";

const params = new URLSearchParams(window.location.search);
const api = new NodeApi(params.get("api") ?? "http://127.0.0.1:7472");
const guard = new SubmitGuard();

const inboxRoot = document.getElementById("inbox")!;
const monitorRoot = document.getElementById("monitor")!;
const healthRoot = document.getElementById("health")!;

let inboxState: InboxState = { tasks: [], notices: [] };

function paintInbox(): void {
  inboxRoot.innerHTML = renderInbox(inboxState.tasks, inboxState.notices);
}

function notice(level: "info" | "warn" | "error", text: string): void {
  inboxState = { ...inboxState, notices: [...inboxState.notices, { level, text }] };
  paintInbox();
}

async function completeTask(task: TaskView, choice: Choice): Promise<void> {
  const result = await guard.submit(task.id, async () => {
    try {
      await api.completeTask(task.id, choice);
      return "done";
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        inboxState = applyStale(inboxState, task.id, error.message);
        paintInbox();
        return "stale";
      }
      if (error instanceof ApiError) {
        notice("error", `${error.code}: ${error.message}`);
        return "rejected";
      }
      notice("error", `network problem: ${String(error)}`);
      return "failed";
    }
  });
  if (result === "done") {
    inboxState = { ...inboxState, tasks: inboxState.tasks.filter((t) => t.id !== task.id) };
    paintInbox();
  }
}

function collectPayload(container: Element, schema: Record<string, never>): Record<string, unknown> | null {
  const raw: Record<string, string | boolean> = {};
  container.querySelectorAll<HTMLInputElement>("input[data-field]").forEach((input) => {
    raw[input.dataset.field!] = input.type === "checkbox" ? input.checked : input.value;
  });
  const { payload, errors } = buildPayload(schema, raw);
  if (errors.length > 0) {
    notice("error", errors.join("; "));
    return null;
  }
  return payload;
}

inboxRoot.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  const card = target.closest<HTMLElement>("[data-task]");
  if (!card) return;
  const task = inboxState.tasks.find((t) => t.id === card.dataset.task);
  if (!task) return;

  if (target.dataset.branch !== undefined) {
    void completeTask(task, { branch: target.dataset.branch });
    return;
  }
  if (target.dataset.send !== undefined) {
    const armIndex = Number(target.dataset.send);
    const arm = task.options.arms?.[armIndex];
    if (!arm) return;
    const armBox = card.querySelector(`[data-arm="${armIndex}"]`)!;
    const payload = collectPayload(armBox, arm.schema as Record<string, never>);
    if (payload === null) return;
    const send: { type: string; to: string; targets?: number[]; payload?: Record<string, unknown> } = {
      type: arm.type,
      to: arm.to,
    };
    const targetsInput = armBox.querySelector<HTMLInputElement>("input[data-targets]");
    if (targetsInput && targetsInput.value.trim()) {
      send.targets = targetsInput.value.split(",").map((s) => Number(s.trim()));
    }
    if (Object.keys(payload).length > 0) send.payload = payload;
    void completeTask(task, { send });
    return;
  }
  if (target.dataset.pick !== undefined) {
    const chosen = card.querySelector<HTMLInputElement>("input[name=pick]:checked");
    if (!chosen) return;
    void completeTask(task, { envelope: chosen.value });
  }
});

const inboxPoller = createPoller(async () => {
  try {
    const tasks = await api.tasks({});
    inboxState = applyPoll(inboxState, tasks);
    paintInbox();
  } catch (error) {
    notice("error", `poll failed: ${String(error)}`);
  }
}, 1000);

let monitoredInstance: string | null = null;

const monitorPoller = createPoller(async () => {
  if (!monitoredInstance) return;
  try {
    const view = await api.instance(monitoredInstance);
    monitorRoot.innerHTML = renderMonitor(view);
  } catch (error) {
    if (error instanceof ApiError && error.status === 404) {
      monitorRoot.innerHTML = renderNotFound(monitoredInstance);
    }
  }
}, 1000);

document.getElementById("watch-form")!.addEventListener("submit", (event) => {
  event.preventDefault();
  const input = document.getElementById("instance-id") as HTMLInputElement;
  monitoredInstance = input.value.trim() || null;
});

async function boot(): Promise<void> {
  try {
    const health = await api.health();
    healthRoot.textContent = `node ${health.company} @ ${api.baseUrl} · processes: ${health.processes.join(", ") || "none"}`;
  } catch {
    healthRoot.textContent = `cannot reach ${api.baseUrl} - is the node serving?`;
  }
  const instances = await api.instances().catch(() => [] as string[]);
  if (instances.length > 0 && !monitoredInstance) {
    monitoredInstance = instances[0];
    (document.getElementById("instance-id") as HTMLInputElement).value = instances[0];
  }
  inboxPoller.start();
  monitorPoller.start();
}

void boot();
