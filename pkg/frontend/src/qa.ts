// Lead QA review: the regular task screen in read-only mode plus an
// override panel. Overrides never touch the stored judgment; they are
// separate correction records.

import { ApiClient, type QaTask } from './api.js';
import {
  canSubmit,
  choosePrimary,
  chooseSeverity,
  initialForm,
  wirePayload,
  type VerdictFormState,
} from './form.js';
import {
  PRIMARY_OPTION_TEXT,
  SEVERITY_OPTION_TEXT,
  WIRE_SEVERITIES,
  WIRE_VERDICTS,
} from './labels.js';
import { renderTaskScreen } from './task.js';

export interface QaView {
  root: HTMLElement;
  load(k: number, seed: number): Promise<void>;
}

export function renderQaView(container: HTMLElement, api: ApiClient): QaView {
  const doc = container.ownerDocument;
  const root = doc.createElement('section');
  root.className = 'qa-view';
  const list = doc.createElement('div');
  list.className = 'qa-list';
  const detail = doc.createElement('div');
  detail.className = 'qa-detail';
  root.append(list, detail);
  container.appendChild(root);

  function showTask(task: QaTask): void {
    detail.replaceChildren();
    renderTaskScreen(
      detail,
      {
        task_id: task.task_id,
        image_url: `/images/${task.image_id}`,
        machine_damage: task.machine_damage,
      },
      {
        imageSrc: `/images/${task.image_id}`,
        progress: { completed: 0, total: null },
        onSubmit: () => undefined,
        readOnly: true,
      },
    );
    detail.appendChild(renderOverridePanel(task));
  }

  function renderOverridePanel(task: QaTask): HTMLElement {
    const panel = doc.createElement('div');
    panel.className = 'override-panel';
    const heading = doc.createElement('h2');
    heading.textContent = 'Lead override (stored separately)';
    panel.appendChild(heading);

    let form: VerdictFormState = initialForm();
    const verdictSelect = doc.createElement('select');
    verdictSelect.className = 'override-verdict';
    const placeholder = doc.createElement('option');
    placeholder.value = '';
    placeholder.textContent = 'verdict...';
    verdictSelect.appendChild(placeholder);
    for (const verdict of WIRE_VERDICTS) {
      const option = doc.createElement('option');
      option.value = verdict;
      option.textContent = PRIMARY_OPTION_TEXT[verdict];
      verdictSelect.appendChild(option);
    }
    const severitySelect = doc.createElement('select');
    severitySelect.className = 'override-severity';
    severitySelect.hidden = true;
    for (const severity of WIRE_SEVERITIES) {
      const option = doc.createElement('option');
      option.value = severity;
      option.textContent = SEVERITY_OPTION_TEXT[severity];
      severitySelect.appendChild(option);
    }
    const note = doc.createElement('input');
    note.className = 'override-note';
    note.placeholder = 'note';
    const send = doc.createElement('button');
    send.type = 'button';
    send.className = 'override-send';
    send.textContent = 'Record override';
    send.disabled = true;
    const status = doc.createElement('p');
    status.className = 'override-status';

    verdictSelect.addEventListener('change', () => {
      const value = verdictSelect.value as (typeof WIRE_VERDICTS)[number] | '';
      form = value === '' ? initialForm() : choosePrimary(form, value);
      severitySelect.hidden = form.primary !== 'damage';
      if (form.primary === 'damage' && severitySelect.value) {
        form = chooseSeverity(form, severitySelect.value as (typeof WIRE_SEVERITIES)[number]);
      }
      send.disabled = !canSubmit(form);
    });
    severitySelect.addEventListener('change', () => {
      form = chooseSeverity(form, severitySelect.value as (typeof WIRE_SEVERITIES)[number]);
      send.disabled = !canSubmit(form);
    });
    send.addEventListener('click', () => {
      const payload = wirePayload(form, task.task_id);
      if (payload === null) {
        return;
      }
      void api
        .qaOverride({
          task_id: task.task_id,
          verdict: payload.verdict,
          severity: payload.severity,
          note: note.value || null,
        })
        .then((outcome) => {
          status.textContent = outcome.ok ? 'override recorded' : `${outcome.code}: ${outcome.message}`;
        });
    });

    panel.append(verdictSelect, severitySelect, note, send, status);
    return panel;
  }

  return {
    root,
    async load(k: number, seed: number): Promise<void> {
      const tasks = await api.qaSample(k, seed);
      list.replaceChildren();
      for (const task of tasks) {
        const row = doc.createElement('button');
        row.type = 'button';
        row.className = 'qa-row';
        row.textContent = `${task.task_id} (machine: ${task.machine_damage})`;
        row.addEventListener('click', () => showTask(task));
        list.appendChild(row);
      }
    },
  };
}
