import { describe, expect, it, vi } from 'vitest';

import {
  CLASS_DEFINITIONS,
  SEVERITY_CLASS_LABELS,
  WIRE_SEVERITIES,
  WIRE_VERDICTS,
} from '../src/labels.js';
import { renderTaskDetails, renderTutorial } from '../src/pages.js';

describe('class metadata', () => {
  it('definition labels equal the evaluation report labels exactly', () => {
    // the service's evaluation reports emit exactly these class strings
    const apiMetadataLabels = ['Severe Damage', 'Mild Damage', 'None'];
    expect([...SEVERITY_CLASS_LABELS]).toEqual(apiMetadataLabels);
    expect(CLASS_DEFINITIONS.map((d) => d.label)).toEqual(apiMetadataLabels);
  });

  it('the submittable verdict set equals the API enumeration', () => {
    expect([...WIRE_VERDICTS].sort()).toEqual(['damage', 'dont_know', 'no_damage']);
    expect([...WIRE_SEVERITIES].sort()).toEqual(['mild', 'severe']);
  });

  it('severity definitions carry the canonical phrasing', () => {
    const severe = CLASS_DEFINITIONS.find((d) => d.label === 'Severe Damage')!;
    const mild = CLASS_DEFINITIONS.find((d) => d.label === 'Mild Damage')!;
    expect(severe.definition.toLowerCase()).toContain('fully destroyed houses');
    expect(mild.definition.toLowerCase()).toContain('partially destroyed scenes');
  });
});

describe('static pages', () => {
  it('task details page lists every class definition', () => {
    const page = renderTaskDetails(document);
    const labels = Array.from(page.querySelectorAll('.class-label')).map(
      (cell) => cell.textContent,
    );
    expect(labels).toEqual([...SEVERITY_CLASS_LABELS]);
    for (const entry of CLASS_DEFINITIONS) {
      expect(page.textContent).toContain(entry.definition);
    }
  });

  it('tutorial explains the two-stage flow and starts labeling on demand', () => {
    const onStart = vi.fn();
    const page = renderTutorial(document, onStart);
    expect(page.textContent).toContain('Damage');
    expect(page.textContent).toContain("Don't know or can't judge");
    expect(page.textContent).toContain('Severe Damage');
    (page.querySelector('.start-labeling') as HTMLButtonElement).click();
    expect(onStart).toHaveBeenCalledTimes(1);
  });
});
