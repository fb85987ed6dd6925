// Thin typed client for the labeling service. Configuration is just the
// API base URL and the assessor token. Network failures on judgment posts
// retry once with the identical body - the server's (task, assessor)
// idempotency makes that safe.

import type { JudgmentBody } from './form.js';
import type { MachineDamage, WireSeverity, WireVerdict } from './labels.js';

export interface ApiConfig {
  baseUrl: string;
  token: string;
}

export interface TaskView {
  task_id: string;
  image_url: string;
  machine_damage: MachineDamage;
}

export type SubmitOutcome =
  | { ok: true; duplicate: boolean }
  | { ok: false; status: number; code: string; message: string };

export interface QaTask {
  task_id: string;
  image_id: string;
  machine_damage: MachineDamage;
  status: string;
}

export interface OverrideBody {
  task_id: string;
  verdict: WireVerdict;
  severity: WireSeverity | null;
  note: string | null;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly base: string;
  private readonly headers: Record<string, string>;
  private readonly doFetch: FetchLike;

  constructor(config: ApiConfig, fetchFn?: FetchLike) {
    this.base = config.baseUrl.replace(/\/$/, '');
    this.headers = {
      Authorization: `Bearer ${config.token}`,
      'Content-Type': 'application/json',
    };
    this.doFetch = fetchFn ?? ((input, init) => fetch(input, init));
  }

  imageUrl(task: TaskView): string {
    return this.base + task.image_url;
  }

  async nextTask(): Promise<TaskView | null> {
    const resp = await this.doFetch(`${this.base}/tasks/next`, { headers: this.headers });
    if (resp.status === 204) {
      return null;
    }
    if (!resp.ok) {
      throw new Error(`tasks/next failed: HTTP ${resp.status}`);
    }
    return (await resp.json()) as TaskView;
  }

  async submitJudgment(body: JudgmentBody): Promise<SubmitOutcome> {
    let lastError: unknown = null;
    for (let attempt = 0; attempt < 2; attempt += 1) {
      let resp: Response;
      try {
        resp = await this.doFetch(`${this.base}/judgments`, {
          method: 'POST',
          headers: this.headers,
          body: JSON.stringify(body),
        });
      } catch (error) {
        lastError = error; // network failure: retry the same idempotent body
        continue;
      }
      if (resp.ok) {
        const payload = (await resp.json()) as { duplicate?: boolean };
        return { ok: true, duplicate: payload.duplicate === true };
      }
      let code = 'error';
      let message = `HTTP ${resp.status}`;
      try {
        const payload = (await resp.json()) as { code?: string; message?: string };
        code = payload.code ?? code;
        message = payload.message ?? message;
      } catch {
        // non-JSON error body: keep the HTTP status message
      }
      return { ok: false, status: resp.status, code, message };
    }
    return {
      ok: false,
      status: 0,
      code: 'network',
      message: `network failure: ${String(lastError)}`,
    };
  }

  async qaSample(k: number, seed: number): Promise<QaTask[]> {
    const resp = await this.doFetch(`${this.base}/qa/sample?k=${k}&seed=${seed}`, {
      headers: this.headers,
    });
    if (!resp.ok) {
      throw new Error(`qa/sample failed: HTTP ${resp.status}`);
    }
    const payload = (await resp.json()) as { tasks: QaTask[] };
    return payload.tasks;
  }

  async qaOverride(body: OverrideBody): Promise<SubmitOutcome> {
    const resp = await this.doFetch(`${this.base}/qa/override`, {
      method: 'POST',
      headers: this.headers,
      body: JSON.stringify(body),
    });
    if (resp.ok) {
      return { ok: true, duplicate: false };
    }
    let code = 'error';
    let message = `HTTP ${resp.status}`;
    try {
      const payload = (await resp.json()) as { code?: string; message?: string };
      code = payload.code ?? code;
      message = payload.message ?? message;
    } catch {
      // keep defaults
    }
    return { ok: false, status: resp.status, code, message };
  }
}
