// Minimal structural validator covering the subset of JSON Schema the
// published annotation contract uses: object/boolean/string types,
// required, properties, additionalProperties: false, patternProperties,
// enum and minLength. Returns a list of problems, empty when valid.

export interface SchemaNode {
  type?: string;
  required?: string[];
  properties?: Record<string, SchemaNode>;
  additionalProperties?: boolean | SchemaNode;
  patternProperties?: Record<string, SchemaNode>;
  enum?: unknown[];
  minLength?: number;
  [key: string]: unknown;
}

export function validateAgainstSchema(value: unknown, schema: SchemaNode, path = "$"): string[] {
  const problems: string[] = [];

  if (schema.enum) {
    if (!schema.enum.some((candidate) => candidate === value)) {
      problems.push(`${path}: value ${JSON.stringify(value)} not in ${JSON.stringify(schema.enum)}`);
    }
    return problems;
  }

  switch (schema.type) {
    case "object": {
      if (typeof value !== "object" || value === null || Array.isArray(value)) {
        return [`${path}: expected object`];
      }
      const record = value as Record<string, unknown>;
      for (const key of schema.required ?? []) {
        if (!(key in record)) {
          problems.push(`${path}: missing required property ${key}`);
        }
      }
      const properties = schema.properties ?? {};
      const patterns = Object.entries(schema.patternProperties ?? {}).map(
        ([pattern, node]) => [new RegExp(pattern), node] as const,
      );
      for (const [key, item] of Object.entries(record)) {
        if (key in properties) {
          problems.push(...validateAgainstSchema(item, properties[key]!, `${path}.${key}`));
          continue;
        }
        const pattern = patterns.find(([re]) => re.test(key));
        if (pattern) {
          problems.push(...validateAgainstSchema(item, pattern[1], `${path}.${key}`));
          continue;
        }
        if (schema.additionalProperties === false) {
          problems.push(`${path}: unexpected property ${key}`);
        } else if (typeof schema.additionalProperties === "object") {
          problems.push(...validateAgainstSchema(item, schema.additionalProperties, `${path}.${key}`));
        }
      }
      return problems;
    }
    case "string": {
      if (typeof value !== "string") {
        return [`${path}: expected string`];
      }
      if (schema.minLength !== undefined && value.length < schema.minLength) {
        problems.push(`${path}: shorter than minLength ${schema.minLength}`);
      }
      return problems;
    }
    case "boolean": {
      if (typeof value !== "boolean") {
        return [`${path}: expected boolean`];
      }
      return problems;
    }
    default:
      return problems;
  }
}
