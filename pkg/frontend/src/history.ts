/**
 * Session-local query history for iterative refinement: newest first,
 * one entry per distinct (text, k) pair, re-runnable with one click.
 */

export interface HistoryEntry {
    text: string;
    k: number;
    tier: string;
}

const CAP = 10;

export class QueryHistory {
    private entries: HistoryEntry[] = [];

    add(entry: HistoryEntry): void {
        this.entries = this.entries.filter(
            (e) => e.text !== entry.text || e.k !== entry.k,
        );
        this.entries.unshift(entry);
        if (this.entries.length > CAP) this.entries.length = CAP;
    }

    list(): readonly HistoryEntry[] {
        return this.entries;
    }

    at(index: number): HistoryEntry | undefined {
        return this.entries[index];
    }
}
