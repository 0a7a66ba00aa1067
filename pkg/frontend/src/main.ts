/** DOM wiring: file inputs, the 20-slider panel and the live preview image.
 * All state logic lives in EditorController. */

import { FaceganClient } from "./api.js";
import { EditorController, PreviewView } from "./editor.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, attrs: Record<string, string> = {}, text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

export function mount(root: HTMLElement, baseUrl = ""): EditorController {
  const preview = el("img", { id: "preview", alt: "reenacted preview" });
  const errorBox = el("div", { id: "error", role: "alert" });
  const panel = el("div", { id: "sliders" });
  const sourceInput = el("input", { type: "file", accept: "image/*" });
  const backgroundInput = el("input", { type: "file", accept: "image/*" });
  const clearBackground = el("button", {}, "clear background");

  let previewUrl: string | null = null;
  const view: PreviewView = {
    showPreview(image) {
      if (previewUrl) URL.revokeObjectURL(previewUrl);
      previewUrl = URL.createObjectURL(image);
      preview.src = previewUrl;
      errorBox.textContent = "";
    },
    showError(message) {
      errorBox.textContent = message;
    },
    slidersChanged() {
      renderPanel();
    },
  };

  const controller = new EditorController(new FaceganClient(baseUrl), view);

  function renderPanel(): void {
    panel.replaceChildren();
    controller.sliders.forEach((spec, i) => {
      const row = el("label", { class: "slider-row" });
      row.append(el("span", {}, spec.label));
      const input = el("input", {
        type: "range",
        min: String(spec.min),
        max: String(spec.max),
        step: "0.01",
        value: String(controller.values[i] ?? spec.min),
      });
      input.addEventListener("input", () => controller.setSlider(i, Number(input.value)));
      row.append(input);
      panel.append(row);
    });
  }

  sourceInput.addEventListener("change", () => {
    const file = sourceInput.files?.[0];
    if (file) void controller.uploadSource(file);
  });
  backgroundInput.addEventListener("change", () => {
    const file = backgroundInput.files?.[0];
    if (file) void controller.selectBackground(file);
  });
  clearBackground.addEventListener("click", () => void controller.selectBackground(null));

  root.append(
    el("h1", {}, "facegan editor"),
    sourceInput, backgroundInput, clearBackground,
    errorBox, panel, preview,
  );
  void controller.loadSchema();
  return controller;
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mount(document.getElementById("app")!);
}
