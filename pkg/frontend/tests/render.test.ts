import { describe, expect, it } from 'vitest';

import { escapeHtml, fileBytes, renderChart, renderMap, renderOutput, renderTracePanel } from '../src/render.js';
import type { PlotSpecPayload, StepEvent } from '../src/types.js';
import { loadContract } from './fakeServer.js';

const contract = loadContract();

describe('renderOutput', () => {
  it('renders text payloads as message bubbles', () => {
    const html = renderOutput({ kind: 'text', payload: { text: 'hello', value: 'hello' } });
    expect(html).toContain('copilot-text');
    expect(html).toContain('hello');
  });

  it('renders tables as grids with every cell', () => {
    const html = renderOutput({
      kind: 'table',
      payload: { columns: ['name', 'size'], rows: [['a.txt', '12']] },
    });
    expect(html).toContain('<table');
    expect(html).toContain('<th>name</th>');
    expect(html).toContain('<td>a.txt</td>');
  });

  it('renders the captured plot output as an SVG chart with one line per series', () => {
    const output = contract.plot_session.done.output!;
    expect(output.kind).toBe('plot_spec');
    const html = renderOutput(output);
    const spec = output.payload as PlotSpecPayload;
    for (const series of spec.series) {
      expect(html).toContain(`data-series="${series.name}"`);
    }
    expect(html).toContain('<svg');
  });

  it('renders download buttons carrying the payload', () => {
    const html = renderOutput(contract.download_output);
    expect(html).toContain('download-btn');
    expect(html).toContain(`data-download="${contract.download_output.payload.name}"`);
  });

  it('renders page views as links plus embedded frames', () => {
    const html = renderOutput({ kind: 'page_view', payload: 'http://adma.local/docs' });
    expect(html).toContain('<iframe src="http://adma.local/docs"');
  });

  it('renders map views with the field polygon', () => {
    const html = renderOutput({ kind: 'map_view', payload: '1863N' });
    expect(html).toContain('<polygon');
    expect(html).toContain('Field 1863N');
  });

  it('renders auth requests as credential forms posting tokens', () => {
    const html = renderOutput({ kind: 'auth_request', payload: { service: 'adma' } });
    expect(html).toContain('credential-form');
    expect(html).toContain('data-service="adma"');
    expect(html).toContain('type="password"');
  });

  it('falls back to the raw payload for unknown kinds', () => {
    const html = renderOutput({ kind: 'hologram', payload: { beam: 3 } });
    expect(html).toContain('raw-output');
    expect(html).toContain('hologram');
    expect(html).toContain('beam');
  });

  it('escapes markup in payloads', () => {
    const html = renderOutput({ kind: 'text', payload: { text: '<script>x</script>' } });
    expect(html).not.toContain('<script>');
    expect(html).toContain('&lt;script&gt;');
  });
});

describe('fileBytes', () => {
  it('decodes the captured fixture file byte-identically', () => {
    const bytes = fileBytes(contract.download_output.payload);
    expect(new TextDecoder().decode(bytes)).toBe('hello from the cloud drive\n');
  });
});

describe('renderChart', () => {
  it('keeps series values verbatim in scale computation', () => {
    const spec: PlotSpecPayload = {
      x_label: 't',
      x: ['0', '1'],
      series: [{ name: 's', values: ['1.5', '2.5'] }],
    };
    const html = renderChart(spec);
    expect(html).toContain('polyline');
  });
});

describe('renderTracePanel', () => {
  it('lists steps in order with status markers', () => {
    const steps = contract.plot_session.trace.steps as StepEvent[];
    const html = renderTracePanel(steps);
    for (const step of steps) expect(html).toContain(`data-seq="${step.seq}"`);
  });
});

describe('escapeHtml', () => {
  it('neutralizes all special characters', () => {
    expect(escapeHtml(`<a href="x">&'</a>`)).toBe('&lt;a href=&quot;x&quot;&gt;&amp;&#39;&lt;/a&gt;');
  });
});

describe('renderMap', () => {
  it('uses a default polygon for unknown fields', () => {
    expect(renderMap('unknown-field')).toContain('<polygon');
  });
});
