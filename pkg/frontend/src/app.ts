/** Browser wiring: chat box at the bottom, history above it, live trace
 * panel at the side. Creates a session on load and keeps the event stream
 * subscribed; a dropped stream re-fetches the trace before resuming.
 */

import { ApiClient } from './client.js';
import { fileBytes, renderOutput, renderTracePanel } from './render.js';
import { ChatStore } from './store.js';
import type { ChatTurn } from './types.js';

const SERVER_URL = (window as unknown as { FLOWPILOT_URL?: string }).FLOWPILOT_URL ?? 'http://127.0.0.1:8040';

function turnHtml(turn: ChatTurn): string {
  if (turn.role === 'user') {
    return `<div class="turn user">${turn.text ? escapeText(turn.text) : ''}</div>`;
  }
  const parts: string[] = [];
  if (turn.text) parts.push(`<p class="copilot-text">${escapeText(turn.text)}</p>`);
  if (turn.output) parts.push(renderOutput(turn.output));
  if (turn.pending && !turn.output) parts.push('<p class="copilot-text">&#8230;</p>');
  if (turn.steps.length) {
    parts.push(
      `<details class="turn-steps"><summary>${turn.steps.length} steps</summary>` +
        renderTracePanel(turn.steps) +
        '</details>',
    );
  }
  return `<div class="turn copilot">${parts.join('')}</div>`;
}

function escapeText(text: string): string {
  const div = document.createElement('div');
  div.textContent = text;
  return div.innerHTML;
}

async function boot(): Promise<void> {
  const history = document.getElementById('history') as HTMLDivElement;
  const tracePanel = document.getElementById('trace') as HTMLDivElement;
  const form = document.getElementById('chat-form') as HTMLFormElement;
  const input = document.getElementById('chat-input') as HTMLInputElement;

  const client = new ApiClient(SERVER_URL);
  const sessionId = await client.createSession();
  const store = new ChatStore(client, sessionId);

  store.onChange = () => {
    history.innerHTML = store.turns.map(turnHtml).join('');
    tracePanel.innerHTML = renderTracePanel(store.steps);
    input.disabled = store.inputDisabled;
    history.scrollTop = history.scrollHeight;
  };

  client.subscribeEvents(
    sessionId,
    (event) => store.ingest(event),
    (steps) => store.resyncTrace(steps),
  );

  form.addEventListener('submit', (e) => {
    e.preventDefault();
    const text = input.value.trim();
    if (!text || store.inputDisabled) return;
    input.value = '';
    if (store.phase.phase === 'awaiting_clarification') {
      void store.clarify(text);
    } else {
      void store.send(text);
    }
  });

  // download buttons and credential forms are wired via delegation
  history.addEventListener('click', (e) => {
    const target = e.target as HTMLElement;
    if (target.matches('button.download-btn')) {
      const name = target.getAttribute('data-download') ?? 'download.bin';
      const content = target.getAttribute('data-content') ?? '';
      const bytes = fileBytes({ name, content_b64: content });
      const blob = new Blob([bytes]);
      const link = document.createElement('a');
      link.href = URL.createObjectURL(blob);
      link.download = name;
      link.click();
      URL.revokeObjectURL(link.href);
    }
  });

  history.addEventListener('submit', (e) => {
    const target = e.target as HTMLElement;
    if (target.matches('form.credential-form')) {
      e.preventDefault();
      const tokenInput = target.querySelector('input[name=token]') as HTMLInputElement;
      const token = tokenInput.value;
      tokenInput.value = '';
      if (token) void store.authenticate(token);
    }
  });

  store.onChange();
}

void boot();
