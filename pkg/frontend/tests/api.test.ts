import { describe, expect, it, vi } from "vitest";

import { ApiError, NodeApi } from "../src/api.js";

function fakeFetch(status: number, body: unknown) {
  return vi.fn(async (_url: string, _init?: RequestInit) => {
    return new Response(JSON.stringify(body), { status });
  });
}

describe("NodeApi", () => {
  it("builds task queries and strips trailing slashes", async () => {
    const fetchImpl = fakeFetch(200, []);
    const api = new NodeApi("http://node:7472///", fetchImpl);
    await api.tasks({ subject: "Customer", instance: "i-1" });
    expect(fetchImpl).toHaveBeenCalledWith(
      "http://node:7472/tasks?subject=Customer&instance=i-1",
      expect.objectContaining({ method: "GET" }),
    );
  });

  it("posts exactly one completion body", async () => {
    const fetchImpl = fakeFetch(200, { task: "t-1", emitted: 0 });
    const api = new NodeApi("http://node:7472", fetchImpl);
    await api.completeTask("t-1", { branch: "done" });
    expect(fetchImpl).toHaveBeenCalledTimes(1);
    const [url, init] = fetchImpl.mock.calls[0];
    expect(url).toBe("http://node:7472/tasks/t-1/complete");
    expect(JSON.parse(init!.body as string)).toEqual({ choice: { branch: "done" } });
  });

  it("maps stale completions to ApiError 409", async () => {
    const fetchImpl = fakeFetch(409, { error: "STALE_TASK", message: "agent moved" });
    const api = new NodeApi("http://node:7472", fetchImpl);
    await expect(api.completeTask("t-1", { branch: "x" })).rejects.toMatchObject({
      status: 409,
      code: "STALE_TASK",
    });
  });

  it("maps invalid choices to 422", async () => {
    const fetchImpl = fakeFetch(422, { error: "INVALID_CHOICE", message: "branch nope" });
    const api = new NodeApi("http://node:7472", fetchImpl);
    const failure = await api.completeTask("t-1", { branch: "nope" }).catch((e) => e);
    expect(failure).toBeInstanceOf(ApiError);
    expect(failure.code).toBe("INVALID_CHOICE");
  });

  it("encodes instance ids in paths", async () => {
    const fetchImpl = fakeFetch(200, { instance: "a/b", process: "p", agents: [], trace_tail: [], open_tasks: 0 });
    const api = new NodeApi("http://node:7472", fetchImpl);
    await api.instance("a/b");
    expect(fetchImpl.mock.calls[0][0]).toBe("http://node:7472/instances/a%2Fb");
  });
});
