// Two-stage verdict form state machine, kept pure so every invariant is
// testable without a DOM. Severity only exists while the primary choice is
// Damage; a submittable state maps to exactly one valid wire payload and a
// damage verdict can never leave without its severity.

import type { WireSeverity, WireVerdict } from './labels.js';

export interface VerdictFormState {
  primary: WireVerdict | null;
  severity: WireSeverity | null;
  comment: string;
}

export interface JudgmentBody {
  task_id: string;
  verdict: WireVerdict;
  severity: WireSeverity | null;
  comment: string | null;
}

export function initialForm(): VerdictFormState {
  return { primary: null, severity: null, comment: '' };
}

export function choosePrimary(state: VerdictFormState, choice: WireVerdict): VerdictFormState {
  // leaving (or re-entering) the damage branch always clears severity;
  // nothing is ever pre-selected on the assessor's behalf
  return { ...state, primary: choice, severity: null };
}

export function chooseSeverity(state: VerdictFormState, severity: WireSeverity): VerdictFormState {
  if (state.primary !== 'damage') {
    return state; // severity controls do not exist outside the damage branch
  }
  return { ...state, severity };
}

export function setComment(state: VerdictFormState, comment: string): VerdictFormState {
  return { ...state, comment };
}

export function severityVisible(state: VerdictFormState): boolean {
  return state.primary === 'damage';
}

export function canSubmit(state: VerdictFormState): boolean {
  if (state.primary === 'damage') {
    return state.severity === 'severe' || state.severity === 'mild';
  }
  return state.primary === 'no_damage' || state.primary === 'dont_know';
}

export function wirePayload(state: VerdictFormState, taskId: string): JudgmentBody | null {
  if (!canSubmit(state) || state.primary === null) {
    return null;
  }
  return {
    task_id: taskId,
    verdict: state.primary,
    severity: state.primary === 'damage' ? state.severity : null,
    comment: state.comment.trim() === '' ? null : state.comment.trim(),
  };
}
