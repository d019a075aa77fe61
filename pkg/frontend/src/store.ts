/**
 * The off-chain todo store and its synchronization strategies.
 *
 * The store never mutates itself when an HTTP request comes in — requests
 * only record an *intent* keyed by the submitted transaction hash. What a
 * chain event does to the store depends on the strategy:
 *
 *  - `passive`: set a pending marker when the tx enters the pool, apply the
 *    intent (and clear the marker) only at the K-th confirmation.
 *  - `aggressive`: apply at the success receipt, remembering the prior
 *    store in an undo journal; a `changed` event rolls back; the K-th
 *    confirmation commits (drops the journal entry).
 *  - `polling`: ignore per-transaction events entirely and rebuild the
 *    store from on-chain contract state on every new block.
 *
 * Bug switches deliberately break those rules: `type1Bug` applies the
 * intent the moment the transaction hash is known, `type2Bug` ignores
 * `changed` events, and `lagMs` delays every data mutation (markers stay
 * prompt) to imitate a slow frontend.
 */

export type Strategy = "passive" | "aggressive" | "polling";

export interface TodoItem {
  id: string;
  title: string;
  done: boolean;
  tx_hash_of_last_write: string;
}

export type Intent =
  | { kind: "create"; id: string; title: string }
  | { kind: "complete"; id: string }
  | { kind: "delete"; id: string };

export interface StoreOptions {
  strategy?: Strategy;
  type1Bug?: boolean;
  type2Bug?: boolean;
  lagMs?: number;
  confirmations?: number;
  /** Injected timer for tests; defaults to setTimeout. */
  schedule?: (fn: () => void, ms: number) => void;
}

export interface StateDocument {
  items: TodoItem[];
  pending: Record<string, boolean>;
}

export class TodoStore {
  private readonly strategy: Strategy;
  private readonly type1Bug: boolean;
  private readonly type2Bug: boolean;
  private readonly lagMs: number;
  private readonly confirmations: number;
  private readonly schedule: (fn: () => void, ms: number) => void;

  private items = new Map<string, TodoItem>();
  private pendingMarkers = new Map<string, true>();
  private intents = new Map<string, Intent>();
  private journal = new Map<string, Map<string, TodoItem>>();

  constructor(options: StoreOptions = {}) {
    this.strategy = options.strategy ?? "passive";
    this.type1Bug = options.type1Bug ?? false;
    this.type2Bug = options.type2Bug ?? false;
    this.lagMs = options.lagMs ?? 0;
    this.confirmations = options.confirmations ?? 6;
    this.schedule = options.schedule ?? ((fn, ms) => setTimeout(fn, ms));
  }

  registerIntent(txHash: string, intent: Intent): void {
    this.intents.set(txHash, intent);
  }

  get(id: string): TodoItem | undefined {
    return this.items.get(id);
  }

  has(id: string): boolean {
    return this.items.has(id);
  }

  /** Stable wire shape; items sorted by id. Served at GET /state. */
  document(): StateDocument {
    const items = [...this.items.values()].sort((a, b) => a.id.localeCompare(b.id));
    const pending: Record<string, boolean> = {};
    for (const hash of [...this.pendingMarkers.keys()].sort()) {
      pending[hash] = true;
    }
    return { items: items.map((item) => ({ ...item })), pending };
  }

  // ------------------------------------------------------------- events

  onTxHash(txHash: string): void {
    if (!this.intents.has(txHash)) return;
    if (this.type1Bug) {
      // Premature update: the full effect lands while the tx is merely
      // pending, and nothing marks it as in flight.
      this.lagged(() => this.applyIntent(txHash));
      return;
    }
    if (this.strategy === "passive") {
      this.pendingMarkers.set(txHash, true);
    }
  }

  onReceipt(txHash: string, status: string): void {
    if (!this.intents.has(txHash) || this.type1Bug) return;
    if (this.strategy === "aggressive" && status === "success") {
      this.journal.set(txHash, this.copyItems());
      this.lagged(() => this.applyIntent(txHash));
    }
  }

  onConfirmation(txHash: string, count: number): void {
    if (!this.intents.has(txHash) || this.type1Bug) return;
    if (count !== this.confirmations) return;
    if (this.strategy === "passive") {
      this.lagged(() => {
        this.applyIntent(txHash);
        this.pendingMarkers.delete(txHash);
      });
    } else if (this.strategy === "aggressive") {
      this.journal.delete(txHash);
    }
  }

  onChanged(txHash: string): void {
    if (!this.intents.has(txHash) || this.type1Bug) return;
    if (this.strategy !== "aggressive") return;
    if (this.type2Bug) return; // reorg? never heard of it
    const prior = this.journal.get(txHash);
    if (prior !== undefined) {
      this.items = prior;
      this.journal.delete(txHash);
    }
  }

  /** Polling strategy: overwrite the store from on-chain contract state. */
  rebuildFromChain(state: Record<string, unknown>): void {
    const rebuilt = new Map<string, TodoItem>();
    for (const [key, raw] of Object.entries(state)) {
      if (!key.startsWith("item:") || typeof raw !== "string") continue;
      const id = key.slice("item:".length);
      try {
        const fields = JSON.parse(raw) as { title?: unknown; done?: unknown };
        rebuilt.set(id, {
          id,
          title: typeof fields.title === "string" ? fields.title : "",
          done: fields.done === true,
          tx_hash_of_last_write: "",
        });
      } catch {
        continue; // not ours
      }
    }
    this.items = rebuilt;
    this.pendingMarkers.clear();
  }

  // ------------------------------------------------------------ helpers

  private lagged(mutate: () => void): void {
    if (this.lagMs > 0) {
      this.schedule(mutate, this.lagMs);
    } else {
      mutate();
    }
  }

  private copyItems(): Map<string, TodoItem> {
    return new Map([...this.items].map(([id, item]) => [id, { ...item }]));
  }

  private applyIntent(txHash: string): void {
    const intent = this.intents.get(txHash);
    if (intent === undefined) return;
    switch (intent.kind) {
      case "create":
        this.items.set(intent.id, {
          id: intent.id,
          title: intent.title,
          done: false,
          tx_hash_of_last_write: txHash,
        });
        break;
      case "complete": {
        const item = this.items.get(intent.id);
        if (item !== undefined) {
          this.items.set(intent.id, { ...item, done: true, tx_hash_of_last_write: txHash });
        }
        break;
      }
      case "delete":
        this.items.delete(intent.id);
        break;
    }
  }
}
