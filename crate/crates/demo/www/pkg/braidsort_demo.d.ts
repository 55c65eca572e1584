/* tslint:disable */
/* eslint-disable */

/**
 * JSON array of {device, ems, onepass, mergepass} delay estimates in ns.
 */
export function compare_devices(n: bigint, k: bigint, v: bigint, p: bigint): string;

/**
 * JSON {footprint, mode, runs, records_per_run} for a budget in bytes.
 */
export function plan(n: bigint, k: number, budget: bigint): string;

/**
 * JSON array of {v, ems, onepass, mergepass, cut} over [`SWEEP_VALUES`],
 * where cut is the percentage of EMS traffic MergePass avoids.
 */
export function vk_sweep(n: bigint, k: bigint, p: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly compare_devices: (a: bigint, b: bigint, c: bigint, d: bigint) => [number, number, number, number];
    readonly plan: (a: bigint, b: number, c: bigint) => [number, number, number, number];
    readonly vk_sweep: (a: bigint, b: bigint, c: bigint) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
