// Session flow: tutorial gate on first visit, then one task at a time -
// fetch, judge, advance - until the queue drains. Submissions are guarded
// against double-fire and retried idempotently on network failure.

import { ApiClient, type TaskView } from './api.js';
import type { JudgmentBody } from './form.js';
import { renderCompletion, renderTaskDetails, renderTutorial } from './pages.js';
import { renderTaskScreen, type TaskScreen } from './task.js';

export interface SessionStorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

const TUTORIAL_FLAG = 'stormsift-tutorial-done';

export class LabelingApp {
  private readonly root: HTMLElement;
  private readonly api: ApiClient;
  private readonly storage: SessionStorageLike;
  private readonly doc: Document;
  private screen: TaskScreen | null = null;
  private submitting = false;
  private submittedTasks = new Set<string>();
  completed = 0;

  constructor(root: HTMLElement, api: ApiClient, storage: SessionStorageLike) {
    this.root = root;
    this.api = api;
    this.storage = storage;
    this.doc = root.ownerDocument;
  }

  async start(): Promise<void> {
    if (this.storage.getItem(TUTORIAL_FLAG) === 'yes') {
      await this.advance();
      return;
    }
    this.clear();
    this.root.appendChild(
      renderTutorial(this.doc, () => {
        this.storage.setItem(TUTORIAL_FLAG, 'yes');
        void this.advance();
      }),
    );
  }

  showTaskDetails(): void {
    this.clear();
    this.root.appendChild(renderTaskDetails(this.doc));
  }

  private clear(): void {
    if (this.screen) {
      this.screen.dispose();
      this.screen = null;
    }
    this.root.replaceChildren();
  }

  private header(): HTMLElement {
    const bar = this.doc.createElement('nav');
    bar.className = 'top-bar';
    const tutorialLink = this.doc.createElement('a');
    tutorialLink.href = '#tutorial';
    tutorialLink.className = 'tutorial-link';
    tutorialLink.textContent = 'Tutorial';
    tutorialLink.addEventListener('click', (event) => {
      event.preventDefault();
      this.clear();
      this.root.appendChild(
        renderTutorial(this.doc, () => {
          void this.advance();
        }),
      );
    });
    const detailsLink = this.doc.createElement('a');
    detailsLink.href = '#task-details';
    detailsLink.className = 'details-link';
    detailsLink.textContent = 'Task description';
    detailsLink.addEventListener('click', (event) => {
      event.preventDefault();
      this.showTaskDetails();
    });
    bar.append(tutorialLink, detailsLink);
    return bar;
  }

  async advance(): Promise<void> {
    const task = await this.api.nextTask();
    this.clear();
    this.root.appendChild(this.header());
    if (task === null) {
      this.root.appendChild(renderCompletion(this.doc, this.completed));
      return;
    }
    this.screen = renderTaskScreen(this.root, task, {
      imageSrc: this.api.imageUrl(task),
      progress: { completed: this.completed, total: null },
      onSubmit: (body) => void this.submit(task, body),
    });
  }

  private async submit(task: TaskView, body: JudgmentBody): Promise<void> {
    if (this.submitting || this.submittedTasks.has(task.task_id)) {
      return; // double-fire guard: one wire judgment per task from this session
    }
    this.submitting = true;
    this.screen?.setEnabled(false);
    try {
      const outcome = await this.api.submitJudgment(body);
      if (outcome.ok) {
        this.submittedTasks.add(task.task_id);
        this.completed += 1;
        await this.advance();
        return;
      }
      this.screen?.showError(`${outcome.code}: ${outcome.message}`);
      this.screen?.setEnabled(true);
    } finally {
      this.submitting = false;
    }
  }
}
