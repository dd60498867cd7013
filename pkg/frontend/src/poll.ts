// Steady polling with overlap protection: one request at a time, default
// 1 s interval. Polling only reads; it can never mutate server state.

export interface Poller {
  start(): void;
  stop(): void;
  readonly running: boolean;
}

export function createPoller(tick: () => Promise<void>, intervalMs = 1000): Poller {
  let timer: ReturnType<typeof setInterval> | null = null;
  let busy = false;

  const fire = async () => {
    if (busy) return;
    busy = true;
    try {
      await tick();
    } finally {
      busy = false;
    }
  };

  return {
    start() {
      if (timer !== null) return;
      void fire();
      timer = setInterval(() => void fire(), intervalMs);
    },
    stop() {
      if (timer !== null) clearInterval(timer);
      timer = null;
    },
    get running() {
      return timer !== null;
    },
  };
}
