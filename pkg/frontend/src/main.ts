// Boot: configuration is just the API base URL and the assessor token,
// taken from query parameters (?api=...&token=...&view=qa) with
// window-level defaults as fallback.

import { ApiClient } from './api.js';
import { LabelingApp } from './app.js';
import { renderQaView } from './qa.js';

declare global {
  interface Window {
    STORMSIFT_API?: string;
    STORMSIFT_TOKEN?: string;
  }
}

export function boot(root: HTMLElement): void {
  const params = new URLSearchParams(window.location.search);
  const baseUrl = params.get('api') ?? window.STORMSIFT_API ?? '';
  const token = params.get('token') ?? window.STORMSIFT_TOKEN ?? '';
  if (!token) {
    root.textContent = 'Missing token: open this page with ?api=<base-url>&token=<assessor-token>';
    return;
  }
  const api = new ApiClient({ baseUrl, token });
  if (params.get('view') === 'qa') {
    const view = renderQaView(root, api);
    const k = Number(params.get('k') ?? '20');
    const seed = Number(params.get('seed') ?? '0');
    void view.load(k, seed);
    return;
  }
  const app = new LabelingApp(root, api, window.sessionStorage);
  void app.start();
}

const mount = document.getElementById('app');
if (mount) {
  boot(mount);
}
