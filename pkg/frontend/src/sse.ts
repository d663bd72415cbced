// Minimal incremental Server-Sent-Events parser over text chunks.
// Works on fetch() body streams in both browsers and node, so the same
// client code drives the UI and the integration tests.

export interface SSEMessage {
  event: string;
  data: string;
}

export class SSEParser {
  private buffer = "";
  private event = "message";
  private dataLines: string[] = [];

  /** Feed a chunk; returns every complete message it closed out. */
  push(chunk: string): SSEMessage[] {
    this.buffer += chunk;
    const messages: SSEMessage[] = [];
    let idx: number;
    while ((idx = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, idx).replace(/\r$/, "");
      this.buffer = this.buffer.slice(idx + 1);
      if (line === "") {
        if (this.dataLines.length > 0) {
          messages.push({ event: this.event, data: this.dataLines.join("\n") });
        }
        this.event = "message";
        this.dataLines = [];
      } else if (line.startsWith(":")) {
        // comment / keepalive
      } else if (line.startsWith("event:")) {
        this.event = line.slice(6).trim();
      } else if (line.startsWith("data:")) {
        this.dataLines.push(line.slice(5).replace(/^ /, ""));
      }
    }
    return messages;
  }
}
