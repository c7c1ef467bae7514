/** Conversation state: append-only turns, the live step trace and the
 * current phase. One instruction is in flight at a time; a clarification or
 * credential answer resumes the same copilot turn rather than opening a new
 * one. Credential tokens pass straight to the client and are never stored.
 */

import type { ApiClient } from './client.js';
import type { ChatTurn, Phase, ServerEvent, StepEvent } from './types.js';

export class ChatStore {
  readonly turns: ChatTurn[] = [];
  /** All step events for the session, ordered by server seq. */
  steps: StepEvent[] = [];
  phase: Phase = { phase: 'idle' };
  onChange: () => void = () => {};

  constructor(
    private readonly client: ApiClient,
    private readonly sessionId: string,
  ) {}

  get inputDisabled(): boolean {
    return this.phase.phase === 'running';
  }

  private notify(): void {
    this.onChange();
  }

  private currentCopilotTurn(): ChatTurn {
    // Scan past interleaved user messages (clarification answers) so a
    // resumed run lands in the copilot turn it paused in.
    for (let i = this.turns.length - 1; i >= 0; i--) {
      const turn = this.turns[i];
      if (turn.role === 'copilot') {
        if (turn.pending) return turn;
        break;
      }
    }
    const turn: ChatTurn = { role: 'copilot', steps: [], pending: true };
    this.turns.push(turn);
    return turn;
  }

  private settle(phase: Phase): Phase {
    this.phase = phase;
    const turn = this.currentCopilotTurn();
    if (phase.phase === 'done' && phase.output) {
      turn.output = phase.output;
      turn.pending = false;
    } else if (phase.phase === 'failed') {
      turn.output = { kind: 'text', payload: { text: `failed: ${phase.error ?? 'unknown'}` } };
      turn.pending = false;
    } else if (phase.phase === 'awaiting_clarification') {
      turn.text = phase.prompt ?? `Please provide ${phase.variable}`;
    } else if (phase.phase === 'awaiting_credentials') {
      turn.output = { kind: 'auth_request', payload: { service: phase.service } };
    }
    this.notify();
    return phase;
  }

  /** Record a step event, dropping duplicates a reconnect may redeliver. */
  ingest(event: ServerEvent): void {
    if (event.event === 'step') {
      if (!this.steps.some((s) => s.seq === event.data.seq)) {
        this.steps.push(event.data);
        this.steps.sort((a, b) => a.seq - b.seq);
        this.currentCopilotTurn().steps.push(event.data);
      }
    } else {
      this.phase = event.data;
    }
    this.notify();
  }

  /** Replace the trace with the server's authoritative copy (reconnects). */
  resyncTrace(steps: StepEvent[]): void {
    this.steps = [...steps].sort((a, b) => a.seq - b.seq);
    this.notify();
  }

  async send(text: string): Promise<Phase> {
    if (this.inputDisabled) throw new Error('an instruction is already running');
    this.turns.push({ role: 'user', text, steps: [] });
    this.phase = { phase: 'running' };
    this.currentCopilotTurn();
    this.notify();
    return this.settle(await this.client.sendMessage(this.sessionId, text));
  }

  /** Answer the pending clarification; the same copilot turn resumes. */
  async clarify(value: string): Promise<Phase> {
    const variable = this.phase.variable;
    if (this.phase.phase !== 'awaiting_clarification' || !variable) {
      throw new Error('no clarification pending');
    }
    this.turns.push({ role: 'user', text: value, steps: [] });
    this.phase = { phase: 'running' };
    this.notify();
    return this.settle(await this.client.sendClarification(this.sessionId, variable, value));
  }

  /** Post credentials; the token goes only to the credentials endpoint and
   * never into the chat history. */
  async authenticate(token: string): Promise<Phase> {
    const service = this.phase.service;
    if (this.phase.phase !== 'awaiting_credentials' || !service) {
      throw new Error('no credential request pending');
    }
    this.phase = { phase: 'running' };
    this.notify();
    return this.settle(await this.client.sendCredentials(this.sessionId, service, token));
  }

  /** Verify the displayed trace against GET /trace (used after reconnects
   * and by tests); returns true when seq sequences match exactly. */
  async traceMatchesServer(): Promise<boolean> {
    const server = await this.client.fetchTrace(this.sessionId);
    const local = this.steps.map((s) => s.seq);
    const remote = server.steps.map((s) => s.seq);
    return local.length === remote.length && local.every((seq, i) => seq === remote[i]);
  }
}
