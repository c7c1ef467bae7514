/** Thin client over the copilot server's HTTP API.
 *
 * The event stream is injectable so tests (and non-browser hosts) can drive
 * it without a real EventSource; reconnect logic re-fetches the trace after
 * a dropped stream so no step is ever lost.
 */

import type { Phase, ServerEvent, StepEvent, TraceBundle } from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface EventStream {
  close(): void;
}

export type EventStreamFactory = (
  url: string,
  onEvent: (event: ServerEvent) => void,
  onDrop: () => void,
) => EventStream;

async function asJson<T>(response: Promise<Response>): Promise<T> {
  const r = await response;
  if (!r.ok) {
    let detail = `${r.status}`;
    try {
      const body = await r.json();
      if (body && typeof body.detail === 'string') detail = body.detail;
    } catch {
      /* keep the status text */
    }
    throw new Error(detail);
  }
  return (await r.json()) as T;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
    private readonly streamFactory?: EventStreamFactory,
  ) {}

  private post<T>(path: string, body: unknown): Promise<T> {
    return asJson<T>(
      this.fetchFn(`${this.baseUrl}${path}`, {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify(body),
      }),
    );
  }

  private get<T>(path: string): Promise<T> {
    return asJson<T>(this.fetchFn(`${this.baseUrl}${path}`));
  }

  async createSession(): Promise<string> {
    const body = await this.post<{ id: string }>('/sessions', {});
    return body.id;
  }

  sendMessage(sessionId: string, text: string): Promise<Phase> {
    return this.post<Phase>(`/sessions/${sessionId}/messages`, { text });
  }

  sendClarification(sessionId: string, variable: string, value: string): Promise<Phase> {
    return this.post<Phase>(`/sessions/${sessionId}/clarifications`, { variable, value });
  }

  sendCredentials(sessionId: string, service: string, token: string): Promise<Phase> {
    return this.post<Phase>(`/sessions/${sessionId}/credentials`, { service, token });
  }

  fetchTrace(sessionId: string): Promise<TraceBundle> {
    return this.get<TraceBundle>(`/sessions/${sessionId}/trace`);
  }

  /** Subscribe to the step/phase stream; on drop, re-fetch the trace and
   * hand the authoritative steps to the caller before resubscribing. */
  subscribeEvents(
    sessionId: string,
    onEvent: (event: ServerEvent) => void,
    onTraceResync: (steps: StepEvent[]) => void,
  ): EventStream {
    const factory = this.streamFactory ?? browserEventStream;
    const url = `${this.baseUrl}/sessions/${sessionId}/events`;
    let closed = false;
    let current: EventStream;
    const open = () => {
      current = factory(url, onEvent, () => {
        if (closed) return;
        void this.fetchTrace(sessionId)
          .then((trace) => onTraceResync(trace.steps))
          .catch(() => undefined);
        open();
      });
    };
    open();
    return {
      close() {
        closed = true;
        current.close();
      },
    };
  }
}

/** Default browser implementation on EventSource. */
export const browserEventStream: EventStreamFactory = (url, onEvent, onDrop) => {
  const source = new EventSource(url);
  source.addEventListener('step', (e) =>
    onEvent({ event: 'step', data: JSON.parse((e as MessageEvent).data) }),
  );
  source.addEventListener('phase', (e) =>
    onEvent({ event: 'phase', data: JSON.parse((e as MessageEvent).data) }),
  );
  source.onerror = () => {
    source.close();
    onDrop();
  };
  return { close: () => source.close() };
};
