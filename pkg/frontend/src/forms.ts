// Payload forms are generated from the message schema served with the task;
// there is no client-side schema knowledge beyond the four field types.

import type { FieldType } from "./api.js";

export interface FieldSpec {
  name: string;
  type: FieldType;
  inputType: "text" | "number" | "checkbox";
  step?: string;
}

export function fieldsFromSchema(schema: Record<string, FieldType>): FieldSpec[] {
  return Object.entries(schema).map(([name, type]) => ({
    name,
    type,
    inputType: type === "bool" ? "checkbox" : type === "text" ? "text" : "number",
    step: type === "dec" ? "any" : type === "int" ? "1" : undefined,
  }));
}

export interface PayloadResult {
  payload: Record<string, unknown>;
  errors: string[];
}

/** Coerce raw form values onto the schema; blank fields are omitted so the
 * server fills its zero values. */
export function buildPayload(
  schema: Record<string, FieldType>,
  raw: Record<string, string | boolean>,
): PayloadResult {
  const payload: Record<string, unknown> = {};
  const errors: string[] = [];
  for (const [name, type] of Object.entries(schema)) {
    const value = raw[name];
    if (value === undefined || value === "") continue;
    if (type === "bool") {
      payload[name] = value === true || value === "true";
    } else if (type === "int") {
      const n = Number(value);
      if (!Number.isInteger(n)) {
        errors.push(`${name} must be an integer`);
      } else {
        payload[name] = n;
      }
    } else if (type === "dec") {
      const n = Number(value);
      if (Number.isNaN(n)) {
        errors.push(`${name} must be a number`);
      } else {
        payload[name] = n;
      }
    } else {
      payload[name] = String(value);
    }
  }
  for (const name of Object.keys(raw)) {
    if (!(name in schema)) errors.push(`unknown field ${name}`);
  }
  return { payload, errors };
}
