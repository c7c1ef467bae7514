/** Wire types mirrored from the copilot server's HTTP API. */

export type OutputKind =
  | 'text'
  | 'table'
  | 'plot_spec'
  | 'download_button'
  | 'page_view'
  | 'map_view'
  | 'auth_request';

export interface RenderedOutput {
  kind: OutputKind | string;
  payload: unknown;
}

export interface TablePayload {
  columns: string[];
  rows: string[][];
}

export interface FilePayload {
  name: string;
  content_b64: string;
}

export interface PlotSeries {
  name: string;
  values: string[];
}

export interface PlotSpecPayload {
  x_label: string;
  x: string[];
  series: PlotSeries[];
}

export type PhaseKind =
  | 'idle'
  | 'running'
  | 'awaiting_clarification'
  | 'awaiting_credentials'
  | 'done'
  | 'failed';

export interface Phase {
  phase: PhaseKind;
  variable?: string;
  prompt?: string;
  service?: string;
  output?: RenderedOutput;
  error?: string;
}

export interface StepEvent {
  seq: number;
  turn: number;
  tool: string;
  status: string;
  args: Record<string, unknown>;
  outputs: Record<string, unknown>;
  started_ns: number;
  ended_ns: number;
  error?: string;
}

export interface TraceBundle {
  task: string;
  graph: string;
  steps: StepEvent[];
}

export interface ChatTurn {
  role: 'user' | 'copilot';
  text?: string;
  output?: RenderedOutput;
  /** step events attached to copilot turns, in server seq order */
  steps: StepEvent[];
  pending?: boolean;
}

export type ServerEvent =
  | { event: 'step'; data: StepEvent }
  | { event: 'phase'; data: Phase };
