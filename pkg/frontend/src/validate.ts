// Client-side mirror of the server's query validation. The rules and
// reason texts track the service so a query rejected here is exactly a
// query the server would 400, letting the panel flag fields before any
// network round trip.

import type { ValidationIssue } from "./types.js";

export const METHODS = ["ensemble", "dropout", "swag", "external"] as const;
export const GENERATORS = ["sobol", "uniform_grid", "pseudo_random"] as const;
export const CONVENTIONS = ["stddev", "eigenvalue"] as const;
export const PALETTES = ["viridis", "grayscale"] as const;

const QUERY_KEYS = new Set([
  "method", "model", "seeds", "seed_box", "count", "generator",
  "n_samples", "n_steps", "tau", "m", "radius_convention",
  "include_mean", "end_cap", "colormap", "rng_seed",
]);

const COLORMAP_KEYS = new Set([
  "palette", "suppress_color", "magnitude_percentile", "magnitude_ceiling",
]);

function isRecord(v: unknown): v is Record<string, unknown> {
  return typeof v === "object" && v !== null && !Array.isArray(v);
}

function isFiniteNumber(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

function checkInt(
  data: Record<string, unknown>,
  key: string,
  minimum: number,
  what: string,
  issues: ValidationIssue[],
): void {
  const value = data[key];
  if (value === undefined || value === null) return;
  if (typeof value === "boolean" || typeof value !== "number" || !Number.isInteger(value)) {
    issues.push({ field: key, message: `${key} must be an integer` });
    return;
  }
  if (value < minimum) {
    issues.push({ field: key, message: `${key} must be >= ${minimum} (${what})` });
  }
}

// Message texts below reproduce the server's composition, down to the
// number formatting it inherits from its float repr, so a rejected field
// reads the same whether it was caught locally or round-tripped.

function numRepr(v: number): string {
  return Number.isInteger(v) && Number.isFinite(v) ? `${v}.0` : String(v);
}

function tupleRepr(vals: number[]): string {
  if (vals.length === 1) return `(${numRepr(vals[0])},)`;
  return `(${vals.map(numRepr).join(", ")})`;
}

function typeName(v: unknown): string {
  if (typeof v === "boolean") return "bool";
  if (typeof v === "number") return Number.isInteger(v) ? "int" : "float";
  if (typeof v === "string") return "str";
  if (Array.isArray(v)) return "list";
  if (v === null) return "NoneType";
  return "dict";
}

// booleans count as 0/1 anywhere a bare range check runs server-side
function looseNumber(v: unknown): number | null {
  if (typeof v === "boolean") return v ? 1 : 0;
  return typeof v === "number" ? v : null;
}

function checkStops(stops: unknown[][], issues: ValidationIssue[]): void {
  for (const stop of stops) {
    for (const c of stop) {
      if (typeof c === "string") {
        issues.push({
          field: "colormap",
          message: `bad colormap config: could not convert string to float: '${c}'`,
        });
        return;
      }
    }
  }
  if (stops.length < 2) {
    issues.push({
      field: "colormap",
      message: "bad colormap config: palette needs at least 2 stops",
    });
    return;
  }
  for (const stop of stops) {
    const nums = stop.map(looseNumber);
    if (stop.length !== 3 || nums.some((c) => c === null || c < 0 || c > 1)) {
      issues.push({
        field: "colormap",
        message: `bad colormap config: palette stop out of range: ${tupleRepr(nums.map((c) => c ?? NaN))}`,
      });
      return;
    }
  }
}

function checkColormap(value: unknown, issues: ValidationIssue[]): void {
  if (value === undefined || value === null) return;
  if (!isRecord(value)) {
    issues.push({ field: "colormap", message: "colormap must be an object" });
    return;
  }
  const unknown = Object.keys(value).filter((k) => !COLORMAP_KEYS.has(k)).sort();
  if (unknown.length) {
    issues.push({
      field: "colormap",
      message: `unknown colormap field(s): ${unknown.join(", ")}`,
    });
  }
  const palette = value.palette;
  if (palette !== undefined && palette !== null) {
    if (typeof palette === "string") {
      if (!PALETTES.includes(palette as (typeof PALETTES)[number])) {
        issues.push({
          field: "colormap",
          message: `bad palette: unknown palette '${palette}'; have ['grayscale', 'viridis']`,
        });
      }
    } else if (!Array.isArray(palette)) {
      issues.push({
        field: "colormap",
        message: `bad palette: '${typeName(palette)}' object is not iterable`,
      });
    } else {
      const badStop = palette.find((stop) => !Array.isArray(stop));
      if (badStop !== undefined) {
        issues.push({
          field: "colormap",
          message: `bad palette: '${typeName(badStop)}' object is not iterable`,
        });
      } else {
        checkStops(palette as unknown[][], issues);
      }
    }
  }
  const suppress = value.suppress_color;
  if (suppress !== undefined && suppress !== null) {
    if (typeof suppress === "string") {
      const hex = suppress.replace(/^#+/, "");
      if (hex.length !== 6) {
        issues.push({
          field: "colormap",
          message: `expected 6 hex digits, got '${suppress}'`,
        });
      } else if (!/^[0-9a-fA-F]{6}$/.test(hex)) {
        issues.push({ field: "colormap", message: `invalid hex color '${suppress}'` });
      }
    } else if (!Array.isArray(suppress)) {
      issues.push({
        field: "colormap",
        message: "suppress_color must be a hex string or RGB triple",
      });
    } else if (suppress.some((c) => typeof c === "string")) {
      const c = suppress.find((x) => typeof x === "string");
      issues.push({
        field: "colormap",
        message: `bad colormap config: could not convert string to float: '${c}'`,
      });
    } else {
      const nums = suppress.map(looseNumber);
      if (suppress.length !== 3 || nums.some((c) => c === null || c < 0 || c > 1)) {
        issues.push({
          field: "colormap",
          message: `bad colormap config: suppress_color out of range: ${tupleRepr(nums.map((c) => c ?? NaN))}`,
        });
      }
    }
  }
  const pct = value.magnitude_percentile;
  if (pct !== undefined && pct !== null) {
    const num = looseNumber(pct);
    if (num === null) {
      issues.push({
        field: "colormap",
        message: `bad colormap config: '<' not supported between instances of 'float' and '${typeName(pct)}'`,
      });
    } else if (!(num > 0 && num <= 100)) {
      issues.push({
        field: "colormap",
        message: "bad colormap config: magnitude_percentile must be in (0, 100]",
      });
    }
  }
  const ceil = value.magnitude_ceiling;
  if (ceil !== undefined && ceil !== null) {
    const num = looseNumber(ceil);
    if (num === null) {
      issues.push({
        field: "colormap",
        message: `bad colormap config: '<=' not supported between instances of '${typeName(ceil)}' and 'int'`,
      });
    } else if (num <= 0) {
      issues.push({
        field: "colormap",
        message: "bad colormap config: magnitude_ceiling must be positive",
      });
    }
  }
}

/** Every issue the server would 400 on, tagged with the offending field. */
export function validateQuery(data: unknown): ValidationIssue[] {
  const issues: ValidationIssue[] = [];
  if (!isRecord(data)) {
    return [{ field: "", message: "query body must be a JSON object" }];
  }
  const unknown = Object.keys(data).filter((k) => !QUERY_KEYS.has(k)).sort();
  if (unknown.length) {
    issues.push({ field: unknown[0], message: `unknown field(s): ${unknown.join(", ")}` });
  }
  const method = data.method;
  if (typeof method !== "string" || !METHODS.includes(method as (typeof METHODS)[number])) {
    issues.push({ field: "method", message: `method must be one of ${METHODS.join(", ")}` });
  }

  const seeds = data.seeds;
  const seedBox = data.seed_box;
  const hasSeeds = seeds !== undefined && seeds !== null;
  const hasBox = seedBox !== undefined && seedBox !== null;
  if (hasSeeds && hasBox) {
    issues.push({
      field: "seeds",
      message: "give either explicit seeds or a seed_box, not both",
    });
  }
  if (hasSeeds) {
    const ok =
      Array.isArray(seeds) &&
      seeds.length >= 1 &&
      seeds.every((row) => Array.isArray(row) && row.length === 3);
    if (!ok) {
      issues.push({ field: "seeds", message: "seeds must be a nonempty array of [x, y, z] rows" });
    } else if (!seeds.every((row) => (row as unknown[]).every(isFiniteNumber))) {
      issues.push({ field: "seeds", message: "seeds must be finite" });
    }
  }
  if (hasBox) {
    const ok =
      Array.isArray(seedBox) &&
      seedBox.length === 3 &&
      seedBox.every((pair) => Array.isArray(pair) && pair.length === 2);
    if (!ok) {
      issues.push({ field: "seed_box", message: "seed_box must be three [min, max] pairs" });
    } else {
      const rows = seedBox as unknown[][];
      const finite = rows.every((p) => p.every(isFiniteNumber));
      const ordered = finite && rows.every((p) => (p[0] as number) < (p[1] as number));
      if (!finite || !ordered) {
        issues.push({
          field: "seed_box",
          message: "seed_box must have min < max on every axis",
        });
      }
    }
  }
  if (method !== "external" && !hasSeeds && !hasBox) {
    issues.push({ field: "seeds", message: "query needs seeds or a seed_box" });
  }
  if (method === "external" && (hasSeeds || hasBox)) {
    issues.push({
      field: "seeds",
      message: "external ensembles carry their own seeds",
    });
  }

  // an explicit null is present-but-wrong, not an omitted default
  const generator = data.generator === undefined ? "sobol" : data.generator;
  if (
    typeof generator !== "string" ||
    !GENERATORS.includes(generator as (typeof GENERATORS)[number])
  ) {
    issues.push({
      field: "generator",
      message: `generator must be one of ${GENERATORS.join(", ")}`,
    });
  }

  checkInt(data, "count", 1, "seed count", issues);
  checkInt(data, "n_samples", 2, "minimum member count", issues);
  checkInt(data, "n_steps", 1, "trajectory steps", issues);
  checkInt(data, "rng_seed", 0, "rng seed", issues);

  const tau = data.tau === undefined ? 4.0 : data.tau;
  if (typeof tau === "boolean" || !isFiniteNumber(tau)) {
    issues.push({ field: "tau", message: "tau must be a number" });
  } else if (tau < 2) {
    issues.push({ field: "tau", message: "tau must be >= 2" });
  }

  const m = data.m === undefined ? 32 : data.m;
  if (typeof m === "boolean" || typeof m !== "number" || !Number.isInteger(m)) {
    issues.push({ field: "m", message: "m must be an integer" });
  } else if (m < 3) {
    issues.push({ field: "m", message: "m must be >= 3 (ring samples)" });
  }

  const convention = data.radius_convention === undefined ? "stddev" : data.radius_convention;
  if (
    typeof convention !== "string" ||
    !CONVENTIONS.includes(convention as (typeof CONVENTIONS)[number])
  ) {
    issues.push({
      field: "radius_convention",
      message: `radius_convention must be one of ${CONVENTIONS.join(", ")}`,
    });
  }

  const includeMean = data.include_mean === undefined ? true : data.include_mean;
  const endCap = data.end_cap === undefined ? false : data.end_cap;
  if (typeof includeMean !== "boolean" || typeof endCap !== "boolean") {
    issues.push({
      field: "include_mean",
      message: "include_mean and end_cap must be booleans",
    });
  }

  const model = data.model;
  if (model !== undefined && model !== null && typeof model !== "string") {
    issues.push({ field: "model", message: "model must be an artifact name" });
  }

  checkColormap(data.colormap, issues);
  return issues;
}
