/**
 * Entrypoint: wire the store, the node connection, and the HTTP app
 * together from environment variables and start serving.
 *
 *   NODE_URL       HTTP base of the node (default http://127.0.0.1:8545)
 *   NODE_EVENTS    host:port of the node's event stream (required)
 *   PORT           port to serve on (default 0 = ephemeral)
 *   STRATEGY       passive | aggressive | polling (default passive)
 *   TYPE1_BUG      1/true: apply updates as soon as the tx hash is known
 *   TYPE2_BUG      1/true: ignore reorg (changed) events
 *   LAG_MS         delay every data mutation by this many milliseconds
 *   CONFIRMATIONS  blocks considered final (default 6, must match the node)
 *   SENDER         0x-address to send from (default fixed dev address)
 *   CONTRACT       0x-address of the todo contract (default fixed)
 *
 * Prints `READY port=<n>` once the event subscription is live and the HTTP
 * socket is listening; supervisors wait for that line.
 */
import { createApp } from "./app.js";
import { NodeHttpClient, subscribeEvents, type ChainEvent } from "./nodeClient.js";
import { TodoStore, type Strategy } from "./store.js";

function flag(value: string | undefined): boolean {
  return value === "1" || value === "true";
}

function parseStrategy(value: string | undefined): Strategy {
  const strategy = value ?? "passive";
  if (strategy !== "passive" && strategy !== "aggressive" && strategy !== "polling") {
    throw new Error(`unknown STRATEGY: ${strategy}`);
  }
  return strategy;
}

function parseHostPort(value: string): { host: string; port: number } {
  const colon = value.lastIndexOf(":");
  const port = Number(value.slice(colon + 1));
  if (colon === -1 || !Number.isInteger(port)) {
    throw new Error(`NODE_EVENTS must be host:port, got ${JSON.stringify(value)}`);
  }
  return { host: value.slice(0, colon) || "127.0.0.1", port };
}

async function main(): Promise<void> {
  const nodeUrl = process.env.NODE_URL ?? "http://127.0.0.1:8545";
  const events = parseHostPort(process.env.NODE_EVENTS ?? "");
  const strategy = parseStrategy(process.env.STRATEGY);
  const sender = process.env.SENDER ?? "0x" + "da".repeat(20);
  const contract = process.env.CONTRACT ?? "0x" + "70".repeat(20);

  const node = new NodeHttpClient(nodeUrl);
  const store = new TodoStore({
    strategy,
    type1Bug: flag(process.env.TYPE1_BUG),
    type2Bug: flag(process.env.TYPE2_BUG),
    lagMs: Number(process.env.LAG_MS ?? "0"),
    confirmations: Number(process.env.CONFIRMATIONS ?? "6"),
  });

  // Polls triggered by new blocks are chained so rebuilds apply in order.
  let pollChain: Promise<void> = Promise.resolve();
  const dispatch = (event: ChainEvent) => {
    switch (event.event) {
      case "transaction_hash":
        store.onTxHash(event.tx_hash ?? "");
        break;
      case "receipt":
        store.onReceipt(event.tx_hash ?? "", event.status ?? "");
        break;
      case "confirmation":
        store.onConfirmation(event.tx_hash ?? "", event.count ?? 0);
        break;
      case "changed":
        store.onChanged(event.tx_hash ?? "");
        break;
      case "new_block":
        if (strategy === "polling") {
          pollChain = pollChain
            .then(() => node.contractState(contract))
            .then((state) => store.rebuildFromChain(state))
            .catch((err) => console.error(`poll failed: ${(err as Error).message}`));
        }
        break;
      default:
        break; // lagged or future kinds: nothing to do
    }
  };

  await subscribeEvents(events.host, events.port, dispatch);

  const app = createApp({ store, node, sender, contract });
  const httpServer = app.listen(Number(process.env.PORT ?? "0"), "127.0.0.1", () => {
    const address = httpServer.address();
    const port = typeof address === "object" && address !== null ? address.port : 0;
    console.log(`READY port=${port}`);
  });
}

main().catch((err) => {
  console.error(`fatal: ${(err as Error).message}`);
  process.exit(1);
});
