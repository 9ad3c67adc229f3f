import { describe, expect, it } from 'vitest';

import type { SessionState } from './api';
import {
  answeredPairs,
  applySession,
  canSubmit,
  initialState,
  isTerminal,
  selectionAsExplicit,
  Store,
  toggleSymptom,
  turnLabel,
} from './state';

function session(partial: Partial<SessionState> = {}): SessionState {
  return {
    transcript: [
      ['headache', 1],
      ['cough', 2],
    ],
    n_explicit: 1,
    pending: 'fever',
    diagnosis: null,
    turns: 1,
    t_max: 10,
    mode: 'limited',
    ...partial,
  };
}

describe('selection', () => {
  it('toggling the same status twice removes the symptom', () => {
    let state = initialState();
    state = { ...state, ...toggleSymptom(state, 'headache', 1) };
    expect(state.selected.get('headache')).toBe(1);
    state = { ...state, ...toggleSymptom(state, 'headache', 1) };
    expect(state.selected.has('headache')).toBe(false);
  });

  it('all three status codes are expressible', () => {
    let state = initialState();
    for (const status of [1, 2, 0] as const) {
      state = { ...state, ...toggleSymptom(state, `s${status}`, status) };
    }
    expect(selectionAsExplicit(state).sort()).toEqual([
      ['s0', 0],
      ['s1', 1],
      ['s2', 2],
    ]);
  });

  it('submit stays disabled with an empty selection', () => {
    const state = { ...initialState(), vocab: { symptoms: ['a'], diseases: ['d'] } };
    expect(canSubmit(state)).toBe(false);
    const picked = { ...state, ...toggleSymptom(state, 'a', 1) };
    expect(canSubmit(picked)).toBe(true);
  });
});

describe('session projection', () => {
  it('applySession stores the server payload verbatim', () => {
    const s = session();
    const patch = applySession('abc', s);
    expect(patch.screen).toBe('chat');
    expect(patch.sessionId).toBe('abc');
    expect(patch.session).toBe(s); // same object: no client-side reinterpretation
  });

  it('answeredPairs skips the explicit prefix', () => {
    expect(answeredPairs(session())).toEqual([['cough', 2]]);
  });

  it('terminal detection follows the diagnosis field only', () => {
    expect(isTerminal(session())).toBe(false);
    expect(
      isTerminal(session({ diagnosis: { disease: 'flu', ranked: [], top: [] }, pending: null })),
    ).toBe(true);
  });

  it('turn label shows budget and mode', () => {
    expect(turnLabel(session())).toBe('turn 1 / 10 (limited)');
  });
});

describe('store', () => {
  it('notifies subscribers on set', () => {
    const store = new Store();
    let seen = 0;
    store.subscribe(() => (seen += 1));
    store.set({ busy: true });
    store.set({ busy: false });
    expect(seen).toBe(2);
    expect(store.get().busy).toBe(false);
  });
});
