/** UI-framework-agnostic editing controller: slider panel state plus a
 * latest-wins, debounced preview loop. The DOM layer (main.ts) and the tests
 * both drive this class. */

import { ApiError, Schema, SessionInfo, SliderSpec } from "./api.js";
import { debounce } from "./debounce.js";

export const DEBOUNCE_MS = 150;

export interface ReenactService {
  schema(): Promise<Schema>;
  createSession(image: Blob): Promise<SessionInfo>;
  uploadBackground(sessionId: string, image: Blob): Promise<string>;
  reenact(
    sessionId: string,
    aus: number[],
    backgroundId?: string,
    signal?: AbortSignal,
  ): Promise<Blob>;
}

export interface PreviewView {
  showPreview(image: Blob): void;
  showError(message: string): void;
  /** Called whenever slider specs or values change, so the DOM can re-render. */
  slidersChanged(): void;
}

export class EditorController {
  sliders: SliderSpec[] = [];
  values: number[] = [];
  lastApplied: number[] | null = null;
  sessionId: string | null = null;
  backgroundId: string | null = null;

  private seq = 0;
  private inflight: AbortController | null = null;
  private debounced: { request: () => void; cancel: () => void };

  constructor(
    private service: ReenactService,
    private view: PreviewView,
    debounceMs: number = DEBOUNCE_MS,
  ) {
    this.debounced = debounce(() => void this.render(), debounceMs);
  }

  /** Slider labels, ordering and ranges come from the service, never from
   * a hardcoded copy. */
  async loadSchema(): Promise<void> {
    const schema = await this.service.schema();
    this.sliders = schema.sliders;
    if (this.values.length !== this.sliders.length) {
      this.values = this.sliders.map((s) => Math.min(Math.max(0, s.min), s.max));
    }
    this.view.slidersChanged();
  }

  get dirty(): boolean {
    if (this.lastApplied === null) return this.values.length > 0;
    return this.values.some((v, i) => v !== this.lastApplied![i]);
  }

  /** Create a session from an uploaded image; sliders initialize to the
   * source's own motion and the preview shows the self-reenactment. A failed
   * upload leaves the previous session untouched. */
  async uploadSource(image: Blob): Promise<void> {
    let session: SessionInfo;
    try {
      session = await this.service.createSession(image);
    } catch (e) {
      this.view.showError(e instanceof ApiError && e.status === 422
        ? "no face detected"
        : `upload failed: ${String(e)}`);
      return;
    }
    this.debounced.cancel();
    this.sessionId = session.session_id;
    this.backgroundId = null;
    this.values = session.aus.slice();
    this.lastApplied = null;
    this.view.slidersChanged();
    await this.render();
  }

  setSlider(index: number, value: number): void {
    const spec = this.sliders[index];
    if (!spec) throw new RangeError(`no slider at index ${index}`);
    this.values[index] = Math.min(Math.max(value, spec.min), spec.max);
    this.view.slidersChanged();
    this.debounced.request();
  }

  async selectBackground(image: Blob | null): Promise<void> {
    if (image === null) {
      this.backgroundId = null;
      this.debounced.request();
      return;
    }
    if (!this.sessionId) {
      this.view.showError("upload a source image first");
      return;
    }
    try {
      this.backgroundId = await this.service.uploadBackground(this.sessionId, image);
    } catch (e) {
      this.view.showError(`background upload failed: ${String(e)}`);
      return;
    }
    this.debounced.request();
  }

  /** One render per acknowledged state: a sequence number marks each request
   * and any response superseded by a newer request is dropped, so the preview
   * always matches the most recent slider state. */
  private async render(): Promise<void> {
    if (!this.sessionId) return;
    const seq = ++this.seq;
    this.inflight?.abort();
    this.inflight = new AbortController();
    const snapshot = this.values.slice();
    const background = this.backgroundId ?? undefined;
    let image: Blob;
    try {
      image = await this.service.reenact(
        this.sessionId, snapshot, background, this.inflight.signal);
    } catch (e) {
      if (seq !== this.seq) return; // superseded; its failure is moot
      if (e instanceof DOMException && e.name === "AbortError") return;
      if (e instanceof ApiError && e.status === 404 && this.backgroundId) {
        // stale background id: reset the selection, keep the previous preview
        this.backgroundId = null;
        this.view.showError("background no longer available");
        return;
      }
      this.view.showError(`render failed: ${String(e)}`);
      return;
    }
    if (seq !== this.seq) return; // stale response, never displayed
    this.lastApplied = snapshot;
    this.view.showPreview(image);
  }
}
