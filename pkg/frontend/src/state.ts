// Client state: a tiny observable store holding the start-screen selection
// plus the latest server-issued session state. The session part is always a
// verbatim projection of an API response; nothing here computes diagnoses.

import type { SessionState } from './api';

export interface UiState {
  screen: 'start' | 'chat';
  vocab: { symptoms: string[]; diseases: string[] } | null;
  selected: Map<string, 0 | 1 | 2>;
  mode: 'limited' | 'fixed';
  tMax: number;
  sessionId: string | null;
  session: SessionState | null;
  busy: boolean;
  error: string | null;
}

export function initialState(): UiState {
  return {
    screen: 'start',
    vocab: null,
    selected: new Map(),
    mode: 'limited',
    tMax: 10,
    sessionId: null,
    session: null,
    busy: false,
    error: null,
  };
}

export type Listener = () => void;

export class Store {
  private state: UiState = initialState();
  private listeners: Listener[] = [];

  get(): UiState {
    return this.state;
  }

  set(patch: Partial<UiState>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) fn();
  }

  subscribe(fn: Listener): void {
    this.listeners.push(fn);
  }
}

export function toggleSymptom(state: UiState, name: string, status: 0 | 1 | 2): Partial<UiState> {
  const selected = new Map(state.selected);
  if (selected.get(name) === status) {
    selected.delete(name);
  } else {
    selected.set(name, status);
  }
  return { selected };
}

export function canSubmit(state: UiState): boolean {
  return state.selected.size > 0 && !state.busy && state.vocab !== null;
}

export function selectionAsExplicit(state: UiState): [string, number][] {
  return [...state.selected.entries()].map(([name, status]) => [name, status]);
}

export function applySession(sessionId: string, session: SessionState): Partial<UiState> {
  return { screen: 'chat', sessionId, session, busy: false, error: null };
}

/** (inquiry, answer) pairs the agent has already been given, in order. */
export function answeredPairs(session: SessionState): [string, number][] {
  return session.transcript.slice(session.n_explicit) as [string, number][];
}

export function isTerminal(session: SessionState | null): boolean {
  return session?.diagnosis != null;
}

export function turnLabel(session: SessionState): string {
  return `turn ${session.turns} / ${session.t_max} (${session.mode})`;
}
