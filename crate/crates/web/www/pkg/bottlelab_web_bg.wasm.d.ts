/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_overlapview_free: (a: number, b: number) => void;
export const budgetFit: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const overlapView: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const overlapview_channels: (a: number) => number;
export const overlapview_layers: (a: number) => number;
export const overlapview_matrix: (a: number, b: number) => [number, number];
export const overlapview_mean_abs: (a: number, b: number) => number;
export const overlapview_name: (a: number, b: number) => [number, number];
export const overlapview_train_acc: (a: number) => number;
export const paramTable: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const soluCurve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
