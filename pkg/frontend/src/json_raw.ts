/**
 * Exact-source JSON token extraction.
 *
 * The console displays numbers exactly as the service serialized them.
 * Round-tripping through JSON.parse / String() would reformat values
 * (for example "1.1e-05" becomes "0.000011"), so the renderer instead
 * slices the original response body.  rawToken walks the JSON text with
 * a small scanner and returns the verbatim substring for the value at a
 * path, without ever re-serializing it.
 */

export type JsonPathSegment = string | number;
export type JsonPath = ReadonlyArray<JsonPathSegment>;

/**
 * Return the exact source slice of the value at `path` inside `source`.
 *
 * Path segments are object keys (strings) or array indices (numbers).
 * An empty path returns the whole top-level value, trimmed of
 * surrounding whitespace.  Throws if the path does not resolve or the
 * document is not well-formed JSON along the visited spine.
 */
export function rawToken(source: string, path: JsonPath): string {
  const start = skipWs(source, 0);
  const [from, to] = locate(source, start, path);
  return source.slice(from, to);
}

function skipWs(src: string, i: number): number {
  while (i < src.length) {
    const c = src[i];
    if (c === " " || c === "\t" || c === "\n" || c === "\r") {
      i += 1;
    } else {
      break;
    }
  }
  return i;
}

function locate(src: string, i: number, path: JsonPath): [number, number] {
  if (path.length === 0) {
    return [i, scanValue(src, i)];
  }
  const seg = path[0] as JsonPathSegment;
  const rest = path.slice(1);
  if (typeof seg === "string") {
    return locateKey(src, i, seg, rest);
  }
  return locateIndex(src, i, seg, rest);
}

function locateKey(
  src: string,
  i: number,
  key: string,
  rest: JsonPath,
): [number, number] {
  if (src[i] !== "{") {
    throw new Error(`expected object while resolving key ${JSON.stringify(key)}`);
  }
  i = skipWs(src, i + 1);
  if (src[i] === "}") {
    throw new Error(`key not found: ${JSON.stringify(key)}`);
  }
  for (;;) {
    const keyEnd = scanString(src, i);
    const name = JSON.parse(src.slice(i, keyEnd)) as string;
    let j = skipWs(src, keyEnd);
    if (src[j] !== ":") {
      throw new Error("malformed object: missing colon");
    }
    j = skipWs(src, j + 1);
    if (name === key) {
      return locate(src, j, rest);
    }
    const valueEnd = scanValue(src, j);
    j = skipWs(src, valueEnd);
    if (src[j] === ",") {
      i = skipWs(src, j + 1);
      continue;
    }
    if (src[j] === "}") {
      throw new Error(`key not found: ${JSON.stringify(key)}`);
    }
    throw new Error("malformed object: expected comma or closing brace");
  }
}

function locateIndex(
  src: string,
  i: number,
  index: number,
  rest: JsonPath,
): [number, number] {
  if (!Number.isInteger(index) || index < 0) {
    throw new Error(`array index must be a nonnegative integer, got ${index}`);
  }
  if (src[i] !== "[") {
    throw new Error(`expected array while resolving index ${index}`);
  }
  i = skipWs(src, i + 1);
  if (src[i] === "]") {
    throw new Error(`index not found: ${index}`);
  }
  let at = 0;
  for (;;) {
    if (at === index) {
      return locate(src, i, rest);
    }
    const valueEnd = scanValue(src, i);
    const j = skipWs(src, valueEnd);
    if (src[j] === ",") {
      i = skipWs(src, j + 1);
      at += 1;
      continue;
    }
    if (src[j] === "]") {
      throw new Error(`index not found: ${index}`);
    }
    throw new Error("malformed array: expected comma or closing bracket");
  }
}

// End position (exclusive) of the value beginning at i.
function scanValue(src: string, i: number): number {
  const c = src[i];
  if (c === undefined) {
    throw new Error("unexpected end of input");
  }
  if (c === '"') {
    return scanString(src, i);
  }
  if (c === "{") {
    return scanBalanced(src, i, "{", "}");
  }
  if (c === "[") {
    return scanBalanced(src, i, "[", "]");
  }
  if (c === "t") {
    return expectLiteral(src, i, "true");
  }
  if (c === "f") {
    return expectLiteral(src, i, "false");
  }
  if (c === "n") {
    return expectLiteral(src, i, "null");
  }
  const number = /-?(0|[1-9]\d*)(\.\d+)?([eE][+-]?\d+)?/y;
  number.lastIndex = i;
  const hit = number.exec(src);
  if (hit === null) {
    throw new Error(`malformed value at offset ${i}`);
  }
  return i + hit[0].length;
}

function scanString(src: string, i: number): number {
  if (src[i] !== '"') {
    throw new Error(`expected string at offset ${i}`);
  }
  let j = i + 1;
  while (j < src.length) {
    const c = src[j];
    if (c === "\\") {
      j += 2;
      continue;
    }
    if (c === '"') {
      return j + 1;
    }
    j += 1;
  }
  throw new Error("unterminated string");
}

// Matching close of a brace or bracket, skipping string contents.
// Nesting of the other container kind balances on its own, so tracking
// a single character pair is sufficient.
function scanBalanced(src: string, i: number, open: string, close: string): number {
  let depth = 0;
  let j = i;
  while (j < src.length) {
    const c = src[j];
    if (c === '"') {
      j = scanString(src, j);
      continue;
    }
    if (c === open) {
      depth += 1;
    } else if (c === close) {
      depth -= 1;
      if (depth === 0) {
        return j + 1;
      }
    }
    j += 1;
  }
  throw new Error(`unterminated ${open}${close} container`);
}

function expectLiteral(src: string, i: number, literal: string): number {
  if (src.startsWith(literal, i)) {
    return i + literal.length;
  }
  throw new Error(`malformed literal at offset ${i}`);
}
