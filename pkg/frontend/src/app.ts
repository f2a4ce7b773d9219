/**
 * The search page controller. Renders the static shell once, then owns all
 * state transitions: validation gating, the single in-flight request (a new
 * submission aborts the pending one), result/error rendering, and the
 * session history.
 */

import { ApiError, postQuery, QueryResponse } from "./api.js";
import { renderCards, tierBadge, escapeHtml } from "./cards.js";
import {
    DEFAULT_K,
    K_CHOICES,
    SearchFormState,
    initialFormState,
    submitDisabled,
    validateQuery,
} from "./form.js";
import { QueryHistory } from "./history.js";

export interface AppOptions {
    baseUrl?: string;
}

function shell(): string {
    const options = K_CHOICES.map(
        (k) =>
            `<option value="${k}"${k === DEFAULT_K ? " selected" : ""}>${k}</option>`,
    ).join("");
    return `
    <header>
      <h1>periosearch</h1>
      <p class="tagline">language-image retrieval over periodontal radiographs</p>
    </header>
    <form id="search-form" autocomplete="off">
      <input id="query" type="text"
             placeholder="An image with Periodontal Stage Two.">
      <label id="k-label">k
        <select id="k">${options}</select>
      </label>
      <button id="submit" type="submit" disabled>Search</button>
    </form>
    <p id="hint" class="hint"></p>
    <div id="status"></div>
    <ol id="results" class="cards"></ol>
    <aside id="history-panel" hidden>
      <h2>history</h2>
      <ol id="history"></ol>
    </aside>`;
}

export class App {
    private state: SearchFormState = initialFormState();
    private history = new QueryHistory();
    private pending: AbortController | null = null;
    private readonly baseUrl: string;

    private readonly input: HTMLInputElement;
    private readonly select: HTMLSelectElement;
    private readonly button: HTMLButtonElement;
    private readonly hint: HTMLElement;
    private readonly status: HTMLElement;
    private readonly results: HTMLElement;
    private readonly historyPanel: HTMLElement;
    private readonly historyList: HTMLElement;

    constructor(root: HTMLElement, options: AppOptions = {}) {
        this.baseUrl = options.baseUrl ?? "";
        root.innerHTML = shell();
        const get = <T extends HTMLElement>(id: string) =>
            root.querySelector(`#${id}`) as T;
        this.input = get<HTMLInputElement>("query");
        this.select = get<HTMLSelectElement>("k");
        this.button = get<HTMLButtonElement>("submit");
        this.hint = get("hint");
        this.status = get("status");
        this.results = get("results");
        this.historyPanel = get("history-panel");
        this.historyList = get("history");

        this.input.addEventListener("input", () => {
            this.state.query = this.input.value;
            this.updateControls();
        });
        this.select.addEventListener("change", () => {
            this.state.k = Number(this.select.value);
        });
        get<HTMLFormElement>("search-form").addEventListener("submit", (ev) => {
            ev.preventDefault();
            void this.submit();
        });
        this.historyList.addEventListener("click", (ev) => {
            const target = (ev.target as HTMLElement).closest(".history-entry");
            if (!(target instanceof HTMLElement) || !target.dataset.index) return;
            this.rerun(Number(target.dataset.index));
        });
        this.status.addEventListener("click", (ev) => {
            if ((ev.target as HTMLElement).classList.contains("retry")) {
                void this.submit();
            }
        });
    }

    setQuery(text: string): void {
        this.state.query = text;
        this.input.value = text;
        this.updateControls();
    }

    setK(k: number): void {
        this.state.k = k;
        this.select.value = String(k);
    }

    get formState(): Readonly<SearchFormState> {
        return this.state;
    }

    /** Validation-gated; resolves once the DOM reflects the outcome. */
    async submit(): Promise<void> {
        const checked = validateQuery(this.state.query);
        if (!checked.ok) {
            this.updateControls();
            return;
        }
        this.pending?.abort();
        const controller = new AbortController();
        this.pending = controller;
        this.state.inFlight = true;
        this.updateControls();
        this.status.innerHTML = `<span class="searching">searching...</span>`;

        try {
            const response = await postQuery(
                this.baseUrl,
                checked.text,
                this.state.k,
                controller.signal,
            );
            this.renderResponse(checked.text, response);
        } catch (err) {
            if (controller.signal.aborted) return; // superseded by a newer submit
            this.renderError(err);
        } finally {
            if (this.pending === controller) {
                this.pending = null;
                this.state.inFlight = false;
                this.updateControls();
            }
        }
    }

    private rerun(index: number): void {
        const entry = this.history.at(index);
        if (!entry) return;
        this.setQuery(entry.text);
        this.setK(entry.k);
        void this.submit();
    }

    private renderResponse(text: string, response: QueryResponse): void {
        this.status.innerHTML = `${tierBadge(response.tier)}
      <span class="meta">${response.results.length} result${response.results.length === 1 ? "" : "s"}
      in ${response.elapsed_ms.toFixed(1)} ms</span>`;
        this.results.innerHTML = renderCards(response.results, this.baseUrl);
        this.history.add({ text, k: this.state.k, tier: response.tier });
        this.renderHistory();
    }

    private renderError(err: unknown): void {
        this.results.innerHTML = "";
        if (err instanceof ApiError) {
            this.status.innerHTML = `<span class="error">error ${escapeHtml(err.code)}: ${escapeHtml(err.message)}</span>`;
        } else {
            this.status.innerHTML = `<span class="error">network failure; the service may be down</span>
        <button type="button" class="retry">Retry</button>`;
        }
    }

    private renderHistory(): void {
        const entries = this.history.list();
        this.historyPanel.hidden = entries.length === 0;
        this.historyList.innerHTML = entries
            .map(
                (e, i) => `
        <li><button type="button" class="history-entry" data-index="${i}">
          <span class="history-text">${escapeHtml(e.text)}</span>
          <span class="history-meta">k=${e.k} · ${escapeHtml(e.tier)}</span>
        </button></li>`,
            )
            .join("\n");
    }

    private updateControls(): void {
        this.button.disabled = submitDisabled(this.state);
        const checked = validateQuery(this.state.query);
        // an empty box is the resting state, not an error worth flagging
        this.hint.textContent =
            !checked.ok && checked.reason === "over-length" ? checked.hint : "";
    }
}
