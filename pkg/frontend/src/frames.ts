/**
 * Length-delimited JSON frames, as spoken on the node's event port.
 *
 * A frame is the decimal byte length of the body, a newline, then the
 * body: `8\n{"a": 1}`. The header is at most 20 characters and bodies are
 * capped at 1 MiB (see PROTOCOL.md at the repository root).
 */

export const MAX_FRAME_BYTES = 1 << 20;
export const MAX_HEADER_CHARS = 20;

const NEWLINE = 0x0a;

export class FrameError extends Error {}

export function encodeFrame(payload: unknown): Buffer {
  const body = Buffer.from(JSON.stringify(payload), "utf8");
  if (body.length > MAX_FRAME_BYTES) {
    throw new FrameError(`frame body of ${body.length} bytes exceeds ${MAX_FRAME_BYTES}`);
  }
  return Buffer.concat([Buffer.from(`${body.length}\n`, "ascii"), body]);
}

/** Incremental parser: feed it socket chunks, get back complete frames. */
export class FrameParser {
  private buffer: Buffer = Buffer.alloc(0);

  feed(chunk: Buffer): unknown[] {
    this.buffer = this.buffer.length === 0 ? chunk : Buffer.concat([this.buffer, chunk]);
    const frames: unknown[] = [];
    for (;;) {
      const newline = this.buffer.indexOf(NEWLINE);
      if (newline === -1) {
        if (this.buffer.length > MAX_HEADER_CHARS) {
          throw new FrameError("frame header exceeds 20 characters");
        }
        return frames;
      }
      const header = this.buffer.subarray(0, newline).toString("ascii");
      if (newline > MAX_HEADER_CHARS) {
        throw new FrameError("frame header exceeds 20 characters");
      }
      if (!/^\d+$/.test(header)) {
        throw new FrameError(`invalid frame header: ${JSON.stringify(header)}`);
      }
      const length = Number(header);
      if (length > MAX_FRAME_BYTES) {
        throw new FrameError(`frame length ${length} out of bounds`);
      }
      const end = newline + 1 + length;
      if (this.buffer.length < end) {
        return frames;
      }
      const body = this.buffer.subarray(newline + 1, end).toString("utf8");
      this.buffer = this.buffer.subarray(end);
      try {
        frames.push(JSON.parse(body));
      } catch (err) {
        throw new FrameError(`frame body is not valid JSON: ${(err as Error).message}`);
      }
    }
  }
}
