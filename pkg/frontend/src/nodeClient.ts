/**
 * Client side of the txforge/1 protocol: one-shot HTTP RPC calls plus the
 * persistent TCP event subscription.
 */
import net from "node:net";

import { FrameParser, encodeFrame } from "./frames.js";

/** The node could not be reached at all (connection refused, timeout...). */
export class NodeUnreachableError extends Error {}

/** The node answered but refused the request (4xx with an error body). */
export class NodeRejectedError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

export interface WireStateOp {
  op: "set" | "increment" | "delete" | "fail";
  key?: string;
  value?: string;
  amount?: number;
}

export interface WireTransaction {
  sender: string;
  nonce: number;
  target: string;
  payload: WireStateOp[];
  tag?: string;
}

export interface SubmitClient {
  nextNonce(address: string): Promise<number>;
  submit(tx: WireTransaction): Promise<string>;
}

export class NodeHttpClient implements SubmitClient {
  constructor(private readonly baseUrl: string) {}

  private async request(method: string, path: string, body?: unknown): Promise<any> {
    let response: Response;
    try {
      response = await fetch(this.baseUrl + path, {
        method,
        headers: body === undefined ? undefined : { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new NodeUnreachableError(`${method} ${path}: ${(err as Error).message}`);
    }
    const data = (await response.json().catch(() => ({}))) as Record<string, unknown>;
    if (!response.ok) {
      const message = typeof data.error === "string" ? data.error : `status ${response.status}`;
      if (response.status >= 500) {
        throw new NodeUnreachableError(message);
      }
      throw new NodeRejectedError(message, response.status);
    }
    return data;
  }

  async info(): Promise<{ protocol: string; head_height: number }> {
    return this.request("GET", "/");
  }

  async nextNonce(address: string): Promise<number> {
    const data = await this.request("GET", `/account/${address}`);
    return data.next_nonce as number;
  }

  async submit(tx: WireTransaction): Promise<string> {
    const data = await this.request("POST", "/tx", tx);
    return data.tx_hash as string;
  }

  async contractState(contract: string): Promise<Record<string, unknown>> {
    const data = await this.request("GET", `/state/${contract}`);
    return (data.state ?? {}) as Record<string, unknown>;
  }
}

export interface ChainEvent {
  seq: number;
  event: string;
  tx_hash?: string;
  block_hash?: string;
  orphaned_block_hash?: string;
  status?: string;
  count?: number;
  height?: number;
  missed?: number;
}

export interface EventSubscription {
  close(): void;
}

/**
 * Connect to the node's event port, subscribe to everything, and dispatch
 * each event frame to `onEvent`. Resolves once the subscription is
 * acknowledged, so events cannot be missed by submitting too early.
 */
export function subscribeEvents(
  host: string,
  port: number,
  onEvent: (event: ChainEvent) => void,
): Promise<EventSubscription> {
  return new Promise((resolve, reject) => {
    const socket = net.connect({ host, port });
    const parser = new FrameParser();
    let acked = false;
    socket.on("connect", () => {
      socket.write(encodeFrame({ op: "subscribe" }));
    });
    socket.on("data", (chunk: Buffer) => {
      let frames: unknown[];
      try {
        frames = parser.feed(chunk);
      } catch (err) {
        socket.destroy();
        if (!acked) reject(err);
        return;
      }
      for (const frame of frames) {
        const record = frame as Record<string, unknown>;
        if (!acked) {
          if (record.subscribed !== undefined) {
            acked = true;
            resolve({ close: () => socket.destroy() });
          } else {
            socket.destroy();
            reject(new NodeRejectedError(String(record.error ?? "subscribe refused"), 0));
            return;
          }
        } else {
          onEvent(record as unknown as ChainEvent);
        }
      }
    });
    socket.on("error", (err) => {
      if (!acked) reject(new NodeUnreachableError(err.message));
    });
  });
}
