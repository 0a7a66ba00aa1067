/** Typed client for the facegan /v1 HTTP API. All model access goes through
 * these endpoints; the UI never touches checkpoints directly. */

export interface SliderSpec {
  index: number;
  id: string;
  label: string;
  min: number;
  max: number;
}

export interface Schema {
  sliders: SliderSpec[];
}

export interface SessionInfo {
  session_id: string;
  /** 20 normalized values: 17 AU intensities then 3 pose angles. */
  aus: number[];
  /** 136 interleaved normalized landmark coordinates. */
  landmarks: number[];
}

export class ApiError extends Error {
  constructor(public status: number, public reason: string) {
    super(`HTTP ${status}: ${reason}`);
    this.name = "ApiError";
  }
}

async function raiseForStatus(r: Response): Promise<void> {
  if (r.ok) return;
  let reason = r.statusText;
  try {
    const body = await r.json();
    reason = body?.detail?.reason ?? reason;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(r.status, reason);
}

export class FaceganClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  async schema(): Promise<Schema> {
    const r = await this.fetchFn(`${this.baseUrl}/v1/schema`);
    await raiseForStatus(r);
    return r.json();
  }

  async createSession(image: Blob): Promise<SessionInfo> {
    const form = new FormData();
    form.append("image", image);
    const r = await this.fetchFn(`${this.baseUrl}/v1/session`, {
      method: "POST",
      body: form,
    });
    await raiseForStatus(r);
    return r.json();
  }

  async uploadBackground(sessionId: string, image: Blob): Promise<string> {
    const form = new FormData();
    form.append("image", image);
    const r = await this.fetchFn(`${this.baseUrl}/v1/session/${sessionId}/background`, {
      method: "POST",
      body: form,
    });
    await raiseForStatus(r);
    const body = await r.json();
    return body.background_id;
  }

  async reenact(
    sessionId: string,
    aus: number[],
    backgroundId?: string,
    signal?: AbortSignal,
  ): Promise<Blob> {
    const body: { aus: number[]; background_id?: string } = { aus };
    if (backgroundId) body.background_id = backgroundId;
    const r = await this.fetchFn(`${this.baseUrl}/v1/session/${sessionId}/reenact`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    await raiseForStatus(r);
    return r.blob();
  }
}
