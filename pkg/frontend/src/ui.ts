// DOM rendering. Two screens: the symptom picker and the chat transcript.
// Everything rerenders from the store; no component state hides anywhere.

import { answerInquiry, createSession, ApiError } from './api';
import {
  Store,
  answeredPairs,
  canSubmit,
  selectionAsExplicit,
  applySession,
  toggleSymptom,
  turnLabel,
} from './state';

const STATUS_LABELS: Record<number, string> = { 1: 'yes', 2: 'no', 0: 'unsure' };

export function render(root: HTMLElement, store: Store): void {
  const state = store.get();
  root.innerHTML = '';
  const banner = document.createElement('div');
  banner.className = 'banner';
  if (state.error) {
    banner.textContent = state.error;
  } else {
    banner.setAttribute('hidden', '');
  }
  root.appendChild(banner);
  if (state.screen === 'start') {
    root.appendChild(renderStart(store));
  } else {
    root.appendChild(renderChat(store));
  }
}

function renderStart(store: Store): HTMLElement {
  const state = store.get();
  const panel = document.createElement('section');
  panel.className = 'start';
  panel.innerHTML = '<h2>How are you feeling?</h2><p>Pick your initial symptoms, then start.</p>';

  const picker = document.createElement('div');
  picker.className = 'picker';
  for (const name of state.vocab?.symptoms ?? []) {
    const chip = document.createElement('button');
    chip.className = 'chip';
    const current = state.selected.get(name);
    chip.textContent = current === undefined ? name : `${name}: ${STATUS_LABELS[current]}`;
    if (current !== undefined) chip.classList.add(`status-${current}`);
    // click cycles none -> yes -> no -> unsure -> none
    chip.addEventListener('click', () => {
      const next = current === undefined ? 1 : current === 1 ? 2 : current === 2 ? 0 : 1;
      if (current === 0) {
        store.set(toggleSymptom(state, name, 0)); // removes it
      } else {
        const selected = new Map(state.selected);
        selected.set(name, next as 0 | 1 | 2);
        store.set({ selected });
      }
    });
    picker.appendChild(chip);
  }
  panel.appendChild(picker);

  const controls = document.createElement('div');
  controls.className = 'controls';
  const modeSelect = document.createElement('select');
  for (const mode of ['limited', 'fixed'] as const) {
    const opt = document.createElement('option');
    opt.value = mode;
    opt.textContent = mode === 'limited' ? 'limited turns (may stop early)' : 'fixed turns';
    if (mode === state.mode) opt.selected = true;
    modeSelect.appendChild(opt);
  }
  modeSelect.addEventListener('change', () => store.set({ mode: modeSelect.value as 'limited' | 'fixed' }));

  const budget = document.createElement('input');
  budget.type = 'number';
  budget.min = '1';
  budget.max = '30';
  budget.value = String(state.tMax);
  budget.addEventListener('change', () => store.set({ tMax: Math.max(1, Number(budget.value) || 1) }));

  const submit = document.createElement('button');
  submit.className = 'primary';
  submit.textContent = state.busy ? 'starting…' : 'start diagnosis';
  submit.disabled = !canSubmit(state);
  submit.addEventListener('click', async () => {
    store.set({ busy: true, error: null });
    try {
      const res = await createSession(selectionAsExplicit(state), state.mode, state.tMax);
      sessionStorage.setItem('coad-session', res.session_id);
      store.set(applySession(res.session_id, res.state));
    } catch (err) {
      store.set({ busy: false, error: describe(err) });
    }
  });

  controls.append('mode ', modeSelect, ' budget ', budget, submit);
  panel.appendChild(controls);
  return panel;
}

function renderChat(store: Store): HTMLElement {
  const state = store.get();
  const session = state.session!;
  const panel = document.createElement('section');
  panel.className = 'chat';

  const meta = document.createElement('div');
  meta.className = 'meta';
  meta.textContent = turnLabel(session);
  panel.appendChild(meta);

  const log = document.createElement('div');
  log.className = 'log';
  const explicit = session.transcript.slice(0, session.n_explicit);
  const opening = document.createElement('div');
  opening.className = 'bubble patient';
  opening.textContent =
    'I have: ' + explicit.map(([name, status]) => `${name} (${STATUS_LABELS[status]})`).join(', ');
  log.appendChild(opening);
  for (const [name, status] of answeredPairs(session)) {
    const q = document.createElement('div');
    q.className = 'bubble agent';
    q.textContent = `Do you have ${name}?`;
    const a = document.createElement('div');
    a.className = 'bubble patient';
    a.textContent = STATUS_LABELS[status];
    log.append(q, a);
  }
  if (session.pending) {
    const q = document.createElement('div');
    q.className = 'bubble agent pending';
    q.textContent = `Do you have ${session.pending}?`;
    log.appendChild(q);
  }
  panel.appendChild(log);

  if (session.diagnosis) {
    panel.appendChild(renderDiagnosis(session));
    const again = document.createElement('button');
    again.textContent = 'start over';
    again.addEventListener('click', () => {
      sessionStorage.removeItem('coad-session');
      store.set({ screen: 'start', sessionId: null, session: null, selected: new Map() });
    });
    panel.appendChild(again);
  } else if (session.pending) {
    panel.appendChild(renderAnswerControls(store));
  }
  return panel;
}

function renderAnswerControls(store: Store): HTMLElement {
  const state = store.get();
  const bar = document.createElement('div');
  bar.className = 'answers';
  const options: [string, 0 | 1 | 2][] = [
    ['Yes', 1],
    ['No', 2],
    ['Unsure', 0],
  ];
  for (const [label, status] of options) {
    const btn = document.createElement('button');
    btn.textContent = label;
    btn.disabled = state.busy;
    btn.addEventListener('click', async () => {
      store.set({ busy: true, error: null });
      try {
        const res = await answerInquiry(state.sessionId!, status);
        store.set(applySession(res.session_id, res.state));
      } catch (err) {
        store.set({ busy: false, error: describe(err) + ' — retry the answer' });
      }
    });
    bar.appendChild(btn);
  }
  return bar;
}

function renderDiagnosis(session: { diagnosis: NonNullable<import('./api').Diagnosis> | null; turns: number }): HTMLElement {
  const diagnosis = session.diagnosis!;
  const box = document.createElement('div');
  box.className = 'diagnosis';
  const head = document.createElement('h3');
  head.textContent = `Diagnosis after ${session.turns} turn(s): ${diagnosis.disease}`;
  box.appendChild(head);
  for (const { disease, p } of diagnosis.ranked) {
    const row = document.createElement('div');
    row.className = 'bar-row';
    const label = document.createElement('span');
    label.textContent = `${disease} (${(p * 100).toFixed(1)}%)`;
    const bar = document.createElement('div');
    bar.className = 'bar';
    const fill = document.createElement('div');
    fill.className = 'fill';
    fill.style.width = `${Math.round(p * 100)}%`;
    bar.appendChild(fill);
    row.append(label, bar);
    box.appendChild(row);
  }
  return box;
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return err.status === 0 ? err.message : `${err.code}: ${err.message}`;
  }
  return String(err);
}
