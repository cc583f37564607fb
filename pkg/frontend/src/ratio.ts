// Parse the allocation ratio exactly the way the wizard sends it: a
// plain number or a "num/den" fraction string. Used only to validate
// form input before it goes to the server; the dashboard always shows
// the server's own rho.

export interface ParsedRatio {
  value: number;
  text: string;
}

export function parseRatio(raw: string | number): ParsedRatio | null {
  if (typeof raw === "number") {
    return Number.isFinite(raw) ? { value: raw, text: String(raw) } : null;
  }
  const text = raw.trim();
  if (text === "") return null;
  const frac = text.match(/^([+-]?\d+)\s*\/\s*(\d+)$/);
  if (frac) {
    const num = Number(frac[1]);
    const den = Number(frac[2]);
    if (den === 0) return null;
    return { value: num / den, text };
  }
  const value = Number(text);
  return Number.isFinite(value) ? { value, text } : null;
}
