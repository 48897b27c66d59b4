/* tslint:disable */
/* eslint-disable */

/**
 * Overlap matrices of every identity block of a small vessel after
 * `epochs` of training on synthetic images.
 */
export class OverlapView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    channels(): number;
    layers(): number;
    /**
     * Row-major `C×C`.
     */
    matrix(layer: number): Float64Array;
    mean_abs(layer: number): number;
    name(layer: number): string;
    train_acc(): number;
}

export function budgetFit(kind: string, norm: string, solu: boolean, target: number): Float64Array;

export function overlapView(kind: string, solu: boolean, epochs: number, seed: number): OverlapView;

export function paramTable(kind: string, norm: string, solu: boolean, multiplier: number): string;

export function soluCurve(others: Float64Array, t_max: number, points: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_overlapview_free: (a: number, b: number) => void;
    readonly budgetFit: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly overlapView: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly overlapview_channels: (a: number) => number;
    readonly overlapview_layers: (a: number) => number;
    readonly overlapview_matrix: (a: number, b: number) => [number, number];
    readonly overlapview_mean_abs: (a: number, b: number) => number;
    readonly overlapview_name: (a: number, b: number) => [number, number];
    readonly overlapview_train_acc: (a: number) => number;
    readonly paramTable: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly soluCurve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
