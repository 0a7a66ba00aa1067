/** Trailing debounce: the wrapped function fires once per burst, `delayMs`
 * after the last call. Each call resets the timer. */
export function debounce(fn: () => void, delayMs: number): {
  request: () => void;
  cancel: () => void;
} {
  let timer: ReturnType<typeof setTimeout> | null = null;
  const request = () => {
    if (timer) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      fn();
    }, delayMs);
  };
  const cancel = () => {
    if (timer) {
      clearTimeout(timer);
      timer = null;
    }
  };
  return { request, cancel };
}
