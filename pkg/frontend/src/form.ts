/** Search form state and the client-side gate in front of the API. */

export const MAX_QUERY_CHARS = 200;
export const DEFAULT_K = 3;
export const K_CHOICES: readonly number[] = Array.from(
    { length: 20 },
    (_, i) => i + 1,
);

export interface SearchFormState {
    query: string;
    k: number;
    inFlight: boolean;
}

export function initialFormState(): SearchFormState {
    return { query: "", k: DEFAULT_K, inFlight: false };
}

export type QueryValidation =
    | { ok: true; text: string }
    | { ok: false; reason: "empty" | "over-length"; hint: string };

/** Validates the text as it would be sent (trimmed); never hits the network. */
export function validateQuery(raw: string): QueryValidation {
    const text = raw.trim();
    if (!text) {
        return { ok: false, reason: "empty", hint: "enter a query" };
    }
    if (text.length > MAX_QUERY_CHARS) {
        return {
            ok: false,
            reason: "over-length",
            hint: `query is ${text.length} characters; the limit is ${MAX_QUERY_CHARS}`,
        };
    }
    return { ok: true, text };
}

export function submitDisabled(state: SearchFormState): boolean {
    return state.inFlight || !validateQuery(state.query).ok;
}
