import { getSession, getVocab, ApiError } from './api';
import { Store } from './state';
import { render } from './ui';

const store = new Store();

async function boot(): Promise<void> {
  const root = document.getElementById('app')!;
  store.subscribe(() => render(root, store));
  render(root, store);
  try {
    const vocab = await getVocab();
    store.set({ vocab });
  } catch (err) {
    store.set({ error: err instanceof ApiError ? err.message : String(err) });
    return;
  }
  // a refresh mid-session recovers purely from the server
  const existing = sessionStorage.getItem('coad-session');
  if (existing) {
    try {
      const res = await getSession(existing);
      store.set({ screen: 'chat', sessionId: res.session_id, session: res.state });
    } catch (err) {
      sessionStorage.removeItem('coad-session');
      if (err instanceof ApiError && err.status === 404) {
        store.set({ error: 'previous session expired; starting fresh' });
      }
    }
  }
}

boot();
