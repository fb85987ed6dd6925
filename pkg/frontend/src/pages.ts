// Static pages: the tutorial assessors must pass through before their first
// task, and the task-description page with the class definitions.

import { CLASS_DEFINITIONS, PRIMARY_OPTION_TEXT, SEVERITY_OPTION_TEXT } from './labels.js';

export function renderTutorial(doc: Document, onStart: () => void): HTMLElement {
  const page = doc.createElement('section');
  page.className = 'tutorial-page';

  const title = doc.createElement('h1');
  title.textContent = 'Tutorial: judging damage in images';
  page.appendChild(title);

  const intro = doc.createElement('p');
  intro.textContent =
    'You will see one image at a time together with the label the system ' +
    'predicted (highlighted). First decide whether the image shows damage ' +
    `("${PRIMARY_OPTION_TEXT.damage}", "${PRIMARY_OPTION_TEXT.no_damage}" or ` +
    `"${PRIMARY_OPTION_TEXT.dont_know}"). If you pick Damage, rate its ` +
    `severity ("${SEVERITY_OPTION_TEXT.mild}" or "${SEVERITY_OPTION_TEXT.severe}").`;
  page.appendChild(intro);

  const list = doc.createElement('dl');
  list.className = 'class-definitions';
  for (const entry of CLASS_DEFINITIONS) {
    const term = doc.createElement('dt');
    term.textContent = entry.label;
    const detail = doc.createElement('dd');
    detail.textContent = `${entry.definition} Examples: ${entry.examples}`;
    list.append(term, detail);
  }
  page.appendChild(list);

  const shortcuts = doc.createElement('p');
  shortcuts.textContent =
    'Keyboard shortcuts: 1 Damage, 2 No Damage, 3 Don’t know, ' +
    'm Mild, s Severe, Enter submit.';
  page.appendChild(shortcuts);

  const start = doc.createElement('button');
  start.type = 'button';
  start.className = 'start-labeling';
  start.textContent = 'Start labeling';
  start.addEventListener('click', onStart);
  page.appendChild(start);
  return page;
}

export function renderTaskDetails(doc: Document): HTMLElement {
  const page = doc.createElement('section');
  page.className = 'task-details-page';

  const title = doc.createElement('h1');
  title.textContent = 'Task description';
  page.appendChild(title);

  const purpose = doc.createElement('p');
  purpose.textContent =
    'Each image was collected during an ongoing disaster and classified by ' +
    'the system. Your verdicts verify those classifications and become ' +
    'training data for future activations. Every image is judged by exactly ' +
    'one expert, so take the time each image needs.';
  page.appendChild(purpose);

  const table = doc.createElement('table');
  table.className = 'class-table';
  const head = doc.createElement('tr');
  for (const columnName of ['Class', 'Definition']) {
    const th = doc.createElement('th');
    th.textContent = columnName;
    head.appendChild(th);
  }
  table.appendChild(head);
  for (const entry of CLASS_DEFINITIONS) {
    const row = doc.createElement('tr');
    const labelCell = doc.createElement('td');
    labelCell.className = 'class-label';
    labelCell.textContent = entry.label;
    const defCell = doc.createElement('td');
    defCell.textContent = entry.definition;
    row.append(labelCell, defCell);
    table.appendChild(row);
  }
  page.appendChild(table);
  return page;
}

export function renderCompletion(doc: Document, completed: number): HTMLElement {
  const page = doc.createElement('section');
  page.className = 'completion-page';
  const title = doc.createElement('h1');
  title.textContent = 'All tasks complete';
  page.appendChild(title);
  const line = doc.createElement('p');
  line.textContent = `No open tasks remain. You completed ${completed} this session - thank you.`;
  page.appendChild(line);
  return page;
}
