// Editable filtering-pattern state.  Validation here is syntactic only; the
// server is the authority and its rejections are surfaced inline.

export interface ValidationResult {
  ok: boolean;
  message?: string;
}

export interface PatternDraft {
  readonly text: string;
  readonly validation: ValidationResult | null;
  readonly history: readonly string[];
  readonly serverError: string | null;
}

export function emptyDraft(): PatternDraft {
  return { text: "", validation: null, history: [], serverError: null };
}

const TOKEN = /^(?:[A-Za-z#'"][A-Za-z0-9#'"_-]*|\?|_|\(|\)|,)/;

export function validatePattern(text: string): ValidationResult {
  const trimmed = text.trim();
  if (!trimmed) {
    return { ok: false, message: "pattern is empty" };
  }
  let depth = 0;
  let meaningful = false;
  let rest = trimmed;
  while (rest.length) {
    rest = rest.trimStart();
    if (!rest.length) break;
    const m = TOKEN.exec(rest);
    if (!m) {
      return { ok: false, message: `unexpected character '${rest[0]}'` };
    }
    const tok = m[0];
    if (tok === "(") depth += 1;
    else if (tok === ")") {
      depth -= 1;
      if (depth < 0) return { ok: false, message: "unbalanced ')'" };
    } else if (tok !== "_" && tok !== ",") {
      // a pattern of only blanks selects nothing and is rejected
      meaningful = true;
    }
    rest = rest.slice(tok.length);
  }
  if (depth !== 0) {
    return { ok: false, message: "unbalanced '('" };
  }
  if (!meaningful) {
    return { ok: false, message: "pattern marks nothing relevant" };
  }
  return { ok: true };
}

export function editPattern(draft: PatternDraft, text: string): PatternDraft {
  return { ...draft, text, validation: validatePattern(text), serverError: null };
}

export function canApply(draft: PatternDraft): boolean {
  return draft.validation !== null && draft.validation.ok;
}

/** Record an applied pattern; the history backs the iterative refinement
 * loop and is kept per trace by the caller. */
export function applyPattern(draft: PatternDraft): PatternDraft {
  if (!canApply(draft)) {
    throw new Error("cannot apply an invalid pattern");
  }
  const history = draft.history.includes(draft.text)
    ? draft.history
    : [...draft.history, draft.text];
  return { ...draft, history };
}

export function reportServerError(draft: PatternDraft, message: string): PatternDraft {
  return { ...draft, serverError: message };
}
