/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const example_scenario: () => [number, number];
export const js_gauss_hermite: (a: number) => [number, number, number, number];
export const js_plan_demo: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const js_threshold_risk: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
