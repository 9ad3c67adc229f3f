// Thin typed client for the /v1 diagnosis API. All decisions happen server
// side; this module only moves JSON.

export interface VocabResponse {
  symptoms: string[];
  diseases: string[];
}

export interface RankedDisease {
  disease: string;
  p: number;
}

export interface Diagnosis {
  disease: string;
  ranked: RankedDisease[];
  top: RankedDisease[];
}

export interface SessionState {
  transcript: [string, number][];
  n_explicit: number;
  pending: string | null;
  diagnosis: Diagnosis | null;
  turns: number;
  t_max: number;
  mode: 'limited' | 'fixed';
}

export interface SessionResponse {
  session_id: string;
  state: SessionState;
}

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

let base = '/v1';

/** Point the client at another origin (used by tests and scripted replays). */
export function configureApiBase(url: string): void {
  base = url.replace(/\/$/, '');
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  let response: Response;
  try {
    response = await fetch(base + path, init);
  } catch (err) {
    throw new ApiError(0, 'unreachable', 'diagnosis service is unreachable');
  }
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    throw new ApiError(response.status, body.code ?? 'error', body.message ?? response.statusText);
  }
  return body as T;
}

export function getVocab(): Promise<VocabResponse> {
  return request<VocabResponse>('/vocab');
}

export function createSession(
  explicit: [string, number][],
  mode: 'limited' | 'fixed',
  tMax: number,
): Promise<SessionResponse> {
  return request<SessionResponse>('/sessions', {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify({ explicit, mode, t_max: tMax }),
  });
}

export function answerInquiry(sessionId: string, status: 0 | 1 | 2): Promise<SessionResponse> {
  return request<SessionResponse>(`/sessions/${sessionId}/answer`, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify({ status }),
  });
}

export function getSession(sessionId: string): Promise<SessionResponse> {
  return request<SessionResponse>(`/sessions/${sessionId}`);
}
