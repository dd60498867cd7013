import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { createPoller } from "../src/poll.js";

describe("createPoller", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("fires immediately and then on the interval", async () => {
    const tick = vi.fn(async () => {});
    const poller = createPoller(tick, 1000);
    poller.start();
    await vi.advanceTimersByTimeAsync(0);
    expect(tick).toHaveBeenCalledTimes(1);
    await vi.advanceTimersByTimeAsync(3000);
    expect(tick).toHaveBeenCalledTimes(4);
    poller.stop();
    await vi.advanceTimersByTimeAsync(2000);
    expect(tick).toHaveBeenCalledTimes(4);
  });

  it("skips ticks while one is still in flight", async () => {
    let release!: () => void;
    const gate = new Promise<void>((r) => (release = r));
    const tick = vi.fn(() => gate);
    const poller = createPoller(tick, 1000);
    poller.start();
    await vi.advanceTimersByTimeAsync(3500); // several intervals pass while blocked
    expect(tick).toHaveBeenCalledTimes(1);
    release();
    await vi.advanceTimersByTimeAsync(1000);
    expect(tick).toHaveBeenCalledTimes(2);
    poller.stop();
  });

  it("start is idempotent", async () => {
    const tick = vi.fn(async () => {});
    const poller = createPoller(tick, 1000);
    poller.start();
    poller.start();
    await vi.advanceTimersByTimeAsync(1000);
    expect(tick).toHaveBeenCalledTimes(2); // immediate + one interval, not doubled
    expect(poller.running).toBe(true);
    poller.stop();
    expect(poller.running).toBe(false);
  });
});
