/** Typed output renderers. Each returns an HTML string so rendering is
 * testable without a browser; the app layer wires behavior (downloads,
 * credential submits) through data attributes.
 */

import type {
  FilePayload,
  PlotSpecPayload,
  RenderedOutput,
  StepEvent,
  TablePayload,
} from './types.js';

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
    .replace(/'/g, '&#39;');
}

/** Decode a file payload to raw bytes (what the download button saves). */
export function fileBytes(payload: FilePayload): Uint8Array<ArrayBuffer> {
  const binary = atob(payload.content_b64);
  const bytes = new Uint8Array(new ArrayBuffer(binary.length));
  for (let i = 0; i < binary.length; i++) bytes[i] = binary.charCodeAt(i);
  return bytes;
}

function renderText(payload: { text?: string; value?: unknown } | string): string {
  const text = typeof payload === 'string' ? payload : (payload.text ?? String(payload.value ?? ''));
  return `<p class="copilot-text">${escapeHtml(text)}</p>`;
}

function renderTable(table: TablePayload): string {
  const head = table.columns.map((c) => `<th>${escapeHtml(c)}</th>`).join('');
  const body = table.rows
    .map((row) => `<tr>${row.map((cell) => `<td>${escapeHtml(cell)}</td>`).join('')}</tr>`)
    .join('');
  return `<table class="result-table"><thead><tr>${head}</tr></thead><tbody>${body}</tbody></table>`;
}

const CHART_W = 480;
const CHART_H = 240;
const PAD = 34;
const SERIES_COLORS = ['#4c72b0', '#dd8452', '#55a868', '#c44e52', '#8172b3'];

/** Declarative plot_spec -> inline SVG line chart. */
export function renderChart(spec: PlotSpecPayload): string {
  const values = spec.series.flatMap((s) => s.values.map(Number)).filter((v) => !Number.isNaN(v));
  const lo = Math.min(...values, 0);
  const hi = Math.max(...values, 1);
  const n = Math.max(spec.x.length, 2);
  const sx = (i: number) => PAD + (i * (CHART_W - 2 * PAD)) / (n - 1);
  const sy = (v: number) => CHART_H - PAD - ((v - lo) * (CHART_H - 2 * PAD)) / (hi - lo || 1);
  const lines = spec.series
    .map((series, si) => {
      const points = series.values
        .map((v, i) => `${sx(i).toFixed(1)},${sy(Number(v)).toFixed(1)}`)
        .join(' ');
      const color = SERIES_COLORS[si % SERIES_COLORS.length];
      return `<polyline data-series="${escapeHtml(series.name)}" fill="none" stroke="${color}" stroke-width="2" points="${points}"/>`;
    })
    .join('');
  const legend = spec.series
    .map((series, si) => {
      const color = SERIES_COLORS[si % SERIES_COLORS.length];
      return `<span class="legend-item" style="color:${color}">&#9632; ${escapeHtml(series.name)}</span>`;
    })
    .join(' ');
  return (
    `<figure class="plot">` +
    `<svg viewBox="0 0 ${CHART_W} ${CHART_H}" role="img">` +
    `<rect x="${PAD}" y="${PAD}" width="${CHART_W - 2 * PAD}" height="${CHART_H - 2 * PAD}" fill="none" stroke="#ccc"/>` +
    lines +
    `</svg>` +
    `<figcaption>${legend}<br/><small>${escapeHtml(spec.x_label)}: ${escapeHtml(
      spec.x[0] ?? '',
    )} &#8230; ${escapeHtml(spec.x[spec.x.length - 1] ?? '')}</small></figcaption>` +
    `</figure>`
  );
}

function renderDownload(payload: FilePayload): string {
  return (
    `<button class="download-btn" data-download="${escapeHtml(payload.name)}" ` +
    `data-content="${escapeHtml(payload.content_b64)}">Download ${escapeHtml(payload.name)}</button>`
  );
}

function renderPage(url: string): string {
  const safe = escapeHtml(url);
  return (
    `<div class="page-view"><a href="${safe}" target="_blank" rel="noopener">${safe}</a>` +
    `<iframe src="${safe}" title="result page"></iframe></div>`
  );
}

// Demo field geometry: simple polygon coordinate lists per field name.
const FIELD_POLYGONS: Record<string, [number, number][]> = {
  '1863N': [
    [20, 30],
    [180, 22],
    [196, 120],
    [120, 168],
    [24, 140],
  ],
};
const DEFAULT_POLYGON: [number, number][] = [
  [30, 30],
  [190, 30],
  [190, 150],
  [30, 150],
];

export function renderMap(fieldName: string): string {
  const polygon = FIELD_POLYGONS[fieldName] ?? DEFAULT_POLYGON;
  const points = polygon.map(([x, y]) => `${x},${y}`).join(' ');
  return (
    `<figure class="map-panel" data-field="${escapeHtml(fieldName)}">` +
    `<svg viewBox="0 0 220 180" role="img">` +
    `<polygon points="${points}" fill="#a3c293" stroke="#4c7a3d" stroke-width="2"/>` +
    `</svg><figcaption>Field ${escapeHtml(fieldName)}</figcaption></figure>`
  );
}

function renderAuthRequest(service: string): string {
  const safe = escapeHtml(service);
  return (
    `<form class="credential-form" data-service="${safe}">` +
    `<label>Token for ${safe}: <input type="password" name="token" autocomplete="off"/></label>` +
    `<button type="submit">Authenticate</button></form>`
  );
}

function renderFallback(output: RenderedOutput): string {
  return `<pre class="raw-output">${escapeHtml(JSON.stringify(output, null, 2))}</pre>`;
}

/** Dispatch one RenderedOutput to its view. Unknown kinds fall back to the
 * raw payload so nothing is ever silently dropped. */
export function renderOutput(output: RenderedOutput): string {
  switch (output.kind) {
    case 'text':
      return renderText(output.payload as { text?: string; value?: unknown });
    case 'table':
      return renderTable(output.payload as TablePayload);
    case 'plot_spec':
      return renderChart(output.payload as PlotSpecPayload);
    case 'download_button':
      return renderDownload(output.payload as FilePayload);
    case 'page_view':
      return renderPage(output.payload as string);
    case 'map_view':
      return renderMap(output.payload as string);
    case 'auth_request':
      return renderAuthRequest((output.payload as { service: string }).service);
    default:
      return renderFallback(output);
  }
}

export function renderStep(step: StepEvent): string {
  const marker = step.status === 'ok' ? '&#10003;' : '&#10007;';
  return (
    `<li class="trace-step" data-seq="${step.seq}">` +
    `${marker} <code>${escapeHtml(step.tool)}</code></li>`
  );
}

export function renderTracePanel(steps: StepEvent[]): string {
  return `<ol class="trace-panel">${steps.map(renderStep).join('')}</ol>`;
}
