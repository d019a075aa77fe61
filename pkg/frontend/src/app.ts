/**
 * HTTP surface of the reference DApp: three mutating endpoints that submit
 * transactions to the node, plus GET /state, which is what a harness points
 * its snapshot collector at.
 */
import express, { type Express, type Response } from "express";

import {
  NodeRejectedError,
  NodeUnreachableError,
  type SubmitClient,
  type WireStateOp,
} from "./nodeClient.js";
import type { Intent, TodoStore } from "./store.js";

export interface AppOptions {
  store: TodoStore;
  node: SubmitClient;
  sender: string;
  contract: string;
}

function itemKey(id: string): string {
  return `item:${id}`;
}

export function createApp(options: AppOptions): Express {
  const { store, node, sender, contract } = options;
  const app = express();
  app.use(express.json());
  let nextItemNumber = 1;

  async function submitAndTrack(
    res: Response,
    intent: Intent,
    payload: WireStateOp[],
    tag: string,
  ): Promise<void> {
    let txHash: string;
    try {
      const nonce = await node.nextNonce(sender);
      txHash = await node.submit({ sender, nonce, target: contract, payload, tag });
    } catch (err) {
      // The store is only touched after a successful submission, so a
      // failed one leaves /state exactly as it was.
      if (err instanceof NodeRejectedError) {
        res.status(502).json({ error: `node rejected the transaction: ${err.message}` });
      } else if (err instanceof NodeUnreachableError) {
        res.status(503).json({ error: `node unreachable: ${err.message}` });
      } else {
        res.status(500).json({ error: (err as Error).message });
      }
      return;
    }
    store.registerIntent(txHash, intent);
    res.status(202).json({ tx_hash: txHash, id: intent.id });
  }

  app.post("/items", async (req, res) => {
    const body = (req.body ?? {}) as { id?: unknown; title?: unknown };
    if (typeof body.title !== "string" || body.title.length === 0) {
      res.status(400).json({ error: "title must be a non-empty string" });
      return;
    }
    const id = typeof body.id === "string" && body.id.length > 0
      ? body.id
      : `item-${nextItemNumber++}`;
    if (store.has(id)) {
      res.status(409).json({ error: `item ${id} already exists` });
      return;
    }
    await submitAndTrack(
      res,
      { kind: "create", id, title: body.title },
      [{ op: "set", key: itemKey(id), value: JSON.stringify({ title: body.title, done: false }) }],
      "create",
    );
  });

  app.post("/items/:id/complete", async (req, res) => {
    const id = req.params.id;
    const item = store.get(id);
    if (item === undefined) {
      res.status(404).json({ error: `no such item: ${id}` });
      return;
    }
    await submitAndTrack(
      res,
      { kind: "complete", id },
      [{ op: "set", key: itemKey(id), value: JSON.stringify({ title: item.title, done: true }) }],
      "complete",
    );
  });

  app.delete("/items/:id", async (req, res) => {
    const id = req.params.id;
    if (!store.has(id)) {
      res.status(404).json({ error: `no such item: ${id}` });
      return;
    }
    await submitAndTrack(
      res,
      { kind: "delete", id },
      [{ op: "delete", key: itemKey(id) }],
      "delete",
    );
  });

  app.get("/state", (_req, res) => {
    res.json(store.document());
  });

  return app;
}
