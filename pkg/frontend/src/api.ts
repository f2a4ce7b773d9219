/**
 * Typed client for the retrieval service. The UI talks to exactly three
 * endpoints and renders only what they return.
 */

export interface QueryResult {
    id: number;
    score: number;
    image_url: string;
    summary: string;
}

export interface QueryResponse {
    results: QueryResult[];
    tier: string;
    elapsed_ms: number;
}

export interface HealthResponse {
    ready: boolean;
    size: number;
    fingerprint: string;
    uptime_seconds: number;
}

/** A non-2xx response; `code` is the server's machine-readable error code. */
export class ApiError extends Error {
    constructor(
        readonly status: number,
        readonly code: string,
        message: string,
    ) {
        super(message);
        this.name = "ApiError";
    }
}

// empty base means same-origin relative paths (the bundle served by the
// service itself); tests point it at a spawned server instead
export function resolveUrl(baseUrl: string, path: string): string {
    return baseUrl ? new URL(path, baseUrl).toString() : path;
}

async function raiseForStatus(res: Response): Promise<void> {
    if (res.ok) return;
    let code = "unknown_error";
    let message = `HTTP ${res.status}`;
    try {
        const body = await res.json();
        if (body?.detail?.code) code = String(body.detail.code);
        if (body?.detail?.message) message = String(body.detail.message);
    } catch {
        // non-JSON error body; keep the status-line message
    }
    throw new ApiError(res.status, code, message);
}

export async function postQuery(
    baseUrl: string,
    text: string,
    k: number,
    signal?: AbortSignal,
): Promise<QueryResponse> {
    const res = await fetch(resolveUrl(baseUrl, "/api/query"), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ text, k }),
        signal,
    });
    await raiseForStatus(res);
    return (await res.json()) as QueryResponse;
}

export async function getHealth(baseUrl: string): Promise<HealthResponse> {
    const res = await fetch(resolveUrl(baseUrl, "/api/health"));
    await raiseForStatus(res);
    return (await res.json()) as HealthResponse;
}
