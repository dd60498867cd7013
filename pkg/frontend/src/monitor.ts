// Instance monitor: read-only board of agent states plus the trace tail.

import type { InstanceView, TraceRecord } from "./api.js";
import { escapeHtml } from "./inbox.js";

const STATUS_GLYPH: Record<string, string> = {
  completed: "✓",
  waiting_decision: "…",
  waiting_message: "▢",
  running: "▶",
};

export function renderAgentRow(agent: InstanceView["agents"][number]): string {
  const glyph = STATUS_GLYPH[agent.status] ?? "?";
  const cls = agent.status === "completed" ? "agent done" : "agent";
  return (
    `<tr class="${cls}"><td>${glyph}</td><td><b>${escapeHtml(agent.agent)}</b></td>` +
    `<td>${escapeHtml(agent.label)}</td><td>${escapeHtml(agent.status)}</td>` +
    `<td>${agent.pool > 0 ? `${agent.pool} queued` : ""}</td></tr>`
  );
}

export function describeRecord(record: TraceRecord): string {
  const who = record.agent ?? "node";
  const detail = record.detail as Record<string, unknown>;
  switch (record.kind) {
    case "instantiate":
      return `started agents ${(detail.agents as string[]).join(", ")}`;
    case "decision": {
      const kind = detail.kind as string;
      if (kind === "branch") {
        const choice = detail.choice as { branch: string };
        return `${who} chose "${choice.branch}"`;
      }
      if (kind === "send") {
        const choice = detail.choice as { type: string; to: string[] };
        return `${who} sent ${choice.type} to ${choice.to.join(", ")}`;
      }
      const choice = detail.choice as { envelope: { type: string; from: string } };
      return `${who} received ${choice.envelope.type} from ${choice.envelope.from}`;
    }
    case "deliver": {
      const env = detail.envelope as { type: string; from: string };
      return `${who} got ${env.type} from ${env.from} (pool ${detail.pool})`;
    }
    case "timeout":
      return `${who} timed out at ${detail.state}`;
    default:
      return `${who} ${record.kind}`;
  }
}

export function renderMonitor(view: InstanceView): string {
  const rows = view.agents.map(renderAgentRow).join("");
  const tail = view.trace_tail
    .slice(-50)
    .map((r) => `<li><span class="seq">#${r.seq}</span> ${escapeHtml(describeRecord(r))}</li>`)
    .join("");
  return (
    `<h2>${escapeHtml(view.process)} <small>${escapeHtml(view.instance)}</small></h2>` +
    `<table class="agents"><thead><tr><th></th><th>agent</th><th>state</th><th>status</th><th>pool</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>` +
    `<h3>recent activity</h3><ol class="trace">${tail}</ol>`
  );
}

export function renderNotFound(instanceId: string): string {
  return `<p class="zero">Instance <code>${escapeHtml(instanceId)}</code> not found on this node.</p>`;
}
