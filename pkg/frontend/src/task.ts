// Single-task labeling screen: image on top, the primary options on the
// left, severity on the right (only while Damage is chosen). The machine
// prediction is highlighted but never pre-selected; agreeing still takes an
// explicit click. Keyboard shortcuts (1/2/3, m/s, Enter) drive exactly the
// same handlers as the mouse.

import type { TaskView } from './api.js';
import {
  canSubmit,
  choosePrimary,
  chooseSeverity,
  initialForm,
  setComment,
  severityVisible,
  wirePayload,
  type JudgmentBody,
  type VerdictFormState,
} from './form.js';
import {
  PRIMARY_OPTION_TEXT,
  SEVERITY_OPTION_TEXT,
  WIRE_SEVERITIES,
  WIRE_VERDICTS,
  type WireSeverity,
  type WireVerdict,
} from './labels.js';

export interface TaskScreenOptions {
  imageSrc: string;
  progress: { completed: number; total: number | null };
  onSubmit: (body: JudgmentBody) => void;
  readOnly?: boolean;
}

export interface TaskScreen {
  root: HTMLElement;
  state(): VerdictFormState;
  handleKey(key: string): void;
  setEnabled(enabled: boolean): void;
  showError(message: string): void;
  dispose(): void;
}

const KEY_TO_PRIMARY: Record<string, WireVerdict> = {
  '1': 'damage',
  '2': 'no_damage',
  '3': 'dont_know',
};
const KEY_TO_SEVERITY: Record<string, WireSeverity> = { m: 'mild', s: 'severe' };
const PRIMARY_KEYS: Record<WireVerdict, string> = {
  damage: '1',
  no_damage: '2',
  dont_know: '3',
};

/** Primary option implied by the machine's severity label. */
export function machinePrimary(machine: TaskView['machine_damage']): WireVerdict {
  return machine === 'none' ? 'no_damage' : 'damage';
}

export function renderTaskScreen(
  container: HTMLElement,
  task: TaskView,
  options: TaskScreenOptions,
): TaskScreen {
  const doc = container.ownerDocument;
  let form = initialForm();
  let enabled = !options.readOnly;

  const root = doc.createElement('section');
  root.className = 'task-screen';
  root.dataset.taskId = task.task_id;

  const progressLine = doc.createElement('p');
  progressLine.className = 'progress';
  progressLine.textContent =
    options.progress.total === null
      ? `${options.progress.completed} completed this session`
      : `${options.progress.completed} / ${options.progress.total} completed`;
  root.appendChild(progressLine);

  const figure = doc.createElement('figure');
  const image = doc.createElement('img');
  image.className = 'task-image';
  image.src = options.imageSrc;
  image.alt = 'image under review';
  figure.appendChild(image);
  const imageTrouble = doc.createElement('div');
  imageTrouble.className = 'image-trouble';
  imageTrouble.hidden = true;
  const retryButton = doc.createElement('button');
  retryButton.type = 'button';
  retryButton.className = 'retry-image';
  retryButton.textContent = 'Retry image';
  const skipButton = doc.createElement('button');
  skipButton.type = 'button';
  skipButton.className = 'skip-report';
  skipButton.textContent = "Report broken image & skip (Don't know)";
  imageTrouble.append(retryButton, skipButton);
  figure.appendChild(imageTrouble);
  root.appendChild(figure);

  image.addEventListener('error', () => {
    imageTrouble.hidden = false;
  });
  retryButton.addEventListener('click', () => {
    imageTrouble.hidden = true;
    const src = image.src;
    image.src = '';
    image.src = src;
  });

  const columns = doc.createElement('div');
  columns.className = 'verdict-columns';

  const primaryPanel = doc.createElement('div');
  primaryPanel.className = 'primary-options';
  const primaryButtons = new Map<WireVerdict, HTMLButtonElement>();
  for (const verdict of WIRE_VERDICTS) {
    const button = doc.createElement('button');
    button.type = 'button';
    button.className = 'option primary-option';
    button.dataset.choice = verdict;
    button.textContent = `${PRIMARY_OPTION_TEXT[verdict]} (${PRIMARY_KEYS[verdict]})`;
    button.addEventListener('click', () => pickPrimary(verdict));
    primaryPanel.appendChild(button);
    primaryButtons.set(verdict, button);
  }

  const severityPanel = doc.createElement('div');
  severityPanel.className = 'severity-options';
  const severityButtons = new Map<WireSeverity, HTMLButtonElement>();
  for (const severity of WIRE_SEVERITIES) {
    const button = doc.createElement('button');
    button.type = 'button';
    button.className = 'option severity-option';
    button.dataset.severity = severity;
    button.textContent = `${SEVERITY_OPTION_TEXT[severity]} (${severity === 'mild' ? 'm' : 's'})`;
    button.addEventListener('click', () => pickSeverity(severity));
    severityPanel.appendChild(button);
    severityButtons.set(severity, button);
  }

  columns.append(primaryPanel, severityPanel);
  root.appendChild(columns);

  // system prediction: highlighted, never pre-selected
  primaryButtons.get(machinePrimary(task.machine_damage))!.classList.add('machine-pick');
  if (task.machine_damage === 'severe' || task.machine_damage === 'mild') {
    severityButtons.get(task.machine_damage)!.classList.add('machine-pick');
  }

  const comment = doc.createElement('textarea');
  comment.className = 'comment';
  comment.placeholder = 'Additional comments (optional)';
  comment.addEventListener('input', () => {
    form = setComment(form, comment.value);
  });
  root.appendChild(comment);

  const errorLine = doc.createElement('p');
  errorLine.className = 'error';
  errorLine.hidden = true;
  root.appendChild(errorLine);

  const submit = doc.createElement('button');
  submit.type = 'button';
  submit.className = 'submit';
  submit.textContent = 'Submit (Enter)';
  root.appendChild(submit);
  submit.addEventListener('click', () => trySubmit());
  skipButton.addEventListener('click', () => {
    if (!enabled) {
      return;
    }
    form = setComment(choosePrimary(form, 'dont_know'), 'image failed to load');
    refresh();
    trySubmit();
  });

  function refresh(): void {
    for (const [verdict, button] of primaryButtons) {
      button.classList.toggle('selected', form.primary === verdict);
      button.disabled = !enabled;
    }
    severityPanel.hidden = !severityVisible(form);
    for (const [severity, button] of severityButtons) {
      button.classList.toggle('selected', form.severity === severity);
      button.disabled = !enabled;
    }
    submit.disabled = !enabled || !canSubmit(form) || options.readOnly === true;
    comment.disabled = !enabled;
  }

  function pickPrimary(choice: WireVerdict): void {
    if (!enabled) {
      return;
    }
    form = choosePrimary(form, choice);
    refresh();
  }

  function pickSeverity(severity: WireSeverity): void {
    if (!enabled || !severityVisible(form)) {
      return;
    }
    form = chooseSeverity(form, severity);
    refresh();
  }

  function trySubmit(): void {
    if (!enabled || options.readOnly) {
      return;
    }
    const body = wirePayload(form, task.task_id);
    if (body === null) {
      return; // unsubmittable states never reach the wire
    }
    options.onSubmit(body);
  }

  function handleKey(key: string): void {
    if (key in KEY_TO_PRIMARY) {
      pickPrimary(KEY_TO_PRIMARY[key]);
    } else if (key in KEY_TO_SEVERITY) {
      pickSeverity(KEY_TO_SEVERITY[key]);
    } else if (key === 'Enter') {
      trySubmit();
    }
  }

  const keyListener = (event: Event): void => {
    const keyboard = event as KeyboardEvent;
    const target = keyboard.target as HTMLElement | null;
    if (target && target.tagName === 'TEXTAREA') {
      return; // typing a comment must not trigger shortcuts
    }
    handleKey(keyboard.key);
  };
  doc.addEventListener('keydown', keyListener);

  refresh();
  container.appendChild(root);

  return {
    root,
    state: () => form,
    handleKey,
    setEnabled(value: boolean): void {
      enabled = value && options.readOnly !== true;
      refresh();
    },
    showError(message: string): void {
      errorLine.textContent = message;
      errorLine.hidden = false;
    },
    dispose(): void {
      doc.removeEventListener('keydown', keyListener);
      root.remove();
    },
  };
}
