/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const band: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
export const sup_law: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const threshold: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
