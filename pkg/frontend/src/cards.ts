/**
 * Result cards. One card per returned item, in response order; every
 * displayed value comes straight from the payload (the rank badge is the
 * 1-based position in that order).
 */

import { QueryResult, resolveUrl } from "./api.js";

export function escapeHtml(s: string): string {
    return s
        .replace(/&/g, "&amp;")
        .replace(/</g, "&lt;")
        .replace(/>/g, "&gt;")
        .replace(/"/g, "&quot;");
}

export function formatScore(score: number): string {
    return score.toFixed(3);
}

// cosine scores live in [-1, 1]; the bar only shows the positive part
export function barWidthPercent(score: number): number {
    return Math.round(Math.min(Math.max(score, 0), 1) * 100);
}

function card(result: QueryResult, rank: number, baseUrl: string): string {
    const src = resolveUrl(baseUrl, result.image_url);
    return `
    <li class="card" data-id="${result.id}">
      <span class="rank">${rank}</span>
      <img src="${escapeHtml(src)}" alt="retrieved radiograph ${result.id}">
      <div class="score">
        <span class="score-value">${formatScore(result.score)}</span>
        <div class="bar"><div class="bar-fill" style="width: ${barWidthPercent(result.score)}%"></div></div>
      </div>
      <p class="summary">${escapeHtml(result.summary)}</p>
    </li>`;
}

export function renderCards(results: QueryResult[], baseUrl = ""): string {
    return results.map((r, i) => card(r, i + 1, baseUrl)).join("\n");
}

export function tierBadge(tier: string): string {
    return `<span class="badge badge-${escapeHtml(tier.toLowerCase())}">${escapeHtml(tier)}</span>`;
}
