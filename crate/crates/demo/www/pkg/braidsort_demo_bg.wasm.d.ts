/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const compare_devices: (a: bigint, b: bigint, c: bigint, d: bigint) => [number, number, number, number];
export const plan: (a: bigint, b: number, c: bigint) => [number, number, number, number];
export const vk_sweep: (a: bigint, b: bigint, c: bigint) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
