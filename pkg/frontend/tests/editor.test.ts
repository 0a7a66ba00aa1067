import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiError, Schema, SessionInfo } from "../src/api.js";
import { DEBOUNCE_MS, EditorController, PreviewView, ReenactService } from "../src/editor.js";

const AU_IDS = [
  "AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU09", "AU10", "AU12",
  "AU14", "AU15", "AU17", "AU20", "AU23", "AU25", "AU26", "AU45",
];

function testSchema(): Schema {
  const sliders = AU_IDS.map((id, index) => ({
    index, id, label: `label for ${id}`, min: 0, max: 1,
  }));
  ["pose_Rx", "pose_Ry", "pose_Rz"].forEach((id, i) => {
    sliders.push({ index: 17 + i, id, label: id, min: -1, max: 1 });
  });
  return { sliders };
}

function testSession(): SessionInfo {
  return {
    session_id: "sess-1",
    aus: Array.from({ length: 20 }, (_, i) => (i % 2 ? 0.25 : 0.75)),
    landmarks: Array.from({ length: 136 }, () => 0),
  };
}

interface ReenactCall {
  sessionId: string;
  aus: number[];
  backgroundId?: string;
  resolve: (b: Blob) => void;
  reject: (e: unknown) => void;
}

class MockService implements ReenactService {
  calls: ReenactCall[] = [];
  autoResolve = true;
  session: SessionInfo = testSession();
  createSessionError: unknown = null;
  backgroundIds: string[] = [];

  async schema(): Promise<Schema> {
    return testSchema();
  }

  async createSession(_image: Blob): Promise<SessionInfo> {
    if (this.createSessionError) throw this.createSessionError;
    return this.session;
  }

  async uploadBackground(_sessionId: string, _image: Blob): Promise<string> {
    const id = `bg-${this.backgroundIds.length}`;
    this.backgroundIds.push(id);
    return id;
  }

  reenact(sessionId: string, aus: number[], backgroundId?: string): Promise<Blob> {
    return new Promise<Blob>((resolve, reject) => {
      const call: ReenactCall = { sessionId, aus: aus.slice(), backgroundId, resolve, reject };
      this.calls.push(call);
      if (this.autoResolve) resolve(new Blob([`render-${this.calls.length}`]));
    });
  }
}

class MockView implements PreviewView {
  previews: Blob[] = [];
  errors: string[] = [];
  showPreview(image: Blob): void {
    this.previews.push(image);
  }
  showError(message: string): void {
    this.errors.push(message);
  }
  slidersChanged(): void {}
}

async function readText(b: Blob): Promise<string> {
  return b.text();
}

describe("EditorController", () => {
  let service: MockService;
  let view: MockView;
  let controller: EditorController;

  beforeEach(async () => {
    vi.useFakeTimers();
    service = new MockService();
    view = new MockView();
    controller = new EditorController(service, view);
    await controller.loadSchema();
  });

  afterEach(() => {
    vi.useRealTimers();
  });

  it("loads slider labels and ordering from the service schema", () => {
    expect(controller.sliders).toHaveLength(20);
    expect(controller.sliders[0]).toMatchObject({ id: "AU01", label: "label for AU01", min: 0, max: 1 });
    expect(controller.sliders[16]!.id).toBe("AU45");
    expect(controller.sliders[19]).toMatchObject({ id: "pose_Rz", min: -1, max: 1 });
  });

  it("initializes sliders from the create_session payload and previews immediately", async () => {
    await controller.uploadSource(new Blob(["src"]));
    expect(controller.sessionId).toBe("sess-1");
    expect(controller.values).toEqual(service.session.aus);
    // the initial self-reenactment request carries exactly the payload values
    expect(service.calls).toHaveLength(1);
    expect(service.calls[0]!.aus).toEqual(service.session.aus);
    expect(view.previews).toHaveLength(1);
  });

  it("sends exactly one request per burst of slider changes", async () => {
    await controller.uploadSource(new Blob(["src"]));
    service.calls = [];
    for (let i = 0; i < 10; i++) {
      controller.setSlider(0, i / 10);
      await vi.advanceTimersByTimeAsync(10); // 10 changes within 100 ms
    }
    expect(service.calls).toHaveLength(0); // still within the debounce window
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS);
    expect(service.calls).toHaveLength(1);
    expect(service.calls[0]!.aus[0]).toBe(0.9); // the latest value, not the first
  });

  it("never displays a stale response", async () => {
    await controller.uploadSource(new Blob(["src"]));
    view.previews = [];
    service.calls = [];
    service.autoResolve = false;

    controller.setSlider(0, 0.1);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS);
    controller.setSlider(0, 0.9);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS);
    expect(service.calls).toHaveLength(2);

    // the newer request completes first; the older one resolves late
    service.calls[1]!.resolve(new Blob(["new"]));
    await vi.runAllTimersAsync();
    service.calls[0]!.resolve(new Blob(["old"]));
    await vi.runAllTimersAsync();

    expect(view.previews).toHaveLength(1);
    expect(await readText(view.previews[0]!)).toBe("new");
    expect(controller.lastApplied![0]).toBe(0.9);
  });

  it("clamps slider values to the schema range", async () => {
    await controller.uploadSource(new Blob(["src"]));
    service.calls = [];
    controller.setSlider(0, 7.5);
    controller.setSlider(19, -3);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS);
    expect(service.calls[0]!.aus[0]).toBe(1);
    expect(service.calls[0]!.aus[19]).toBe(-1);
  });

  it("carries the selected background id and omits it after clearing", async () => {
    await controller.uploadSource(new Blob(["src"]));
    service.calls = [];
    await controller.selectBackground(new Blob(["bg"]));
    controller.setSlider(0, 0.5);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS);
    expect(service.calls.at(-1)!.backgroundId).toBe("bg-0");

    await controller.selectBackground(null);
    controller.setSlider(0, 0.6);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS);
    expect(service.calls.at(-1)!.backgroundId).toBeUndefined();
  });

  it("surfaces a 422 upload without touching existing state", async () => {
    await controller.uploadSource(new Blob(["src"]));
    const before = controller.values.slice();
    service.createSessionError = new ApiError(422, "no face detected");
    await controller.uploadSource(new Blob(["blank"]));
    expect(view.errors).toContain("no face detected");
    expect(controller.sessionId).toBe("sess-1");
    expect(controller.values).toEqual(before);
  });

  it("keeps the previous preview when a render fails", async () => {
    await controller.uploadSource(new Blob(["src"]));
    service.calls = [];
    service.autoResolve = false;
    controller.setSlider(0, 0.5);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS);
    service.calls[0]!.reject(new ApiError(500, "boom"));
    await vi.runAllTimersAsync();
    expect(view.previews).toHaveLength(1); // only the upload preview
    expect(view.errors.at(-1)).toContain("boom");
  });
});
