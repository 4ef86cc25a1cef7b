/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_field_free: (a: number, b: number) => void;
export const __wbg_mappingrun_free: (a: number, b: number) => void;
export const field_elevation: (a: number) => [number, number];
export const field_length: (a: number) => number;
export const field_resolution: (a: number) => number;
export const field_width: (a: number) => number;
export const gate: (a: number, b: number) => [number, number];
export const mappingrun_elevation: (a: number, b: number) => [number, number];
export const mappingrun_extent: (a: number) => number;
export const mappingrun_frame: (a: number, b: number) => number;
export const mappingrun_l05: (a: number) => [number, number];
export const mappingrun_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const mappingrun_robot: (a: number, b: number) => [number, number];
export const mappingrun_snapshot_count: (a: number) => number;
export const mappingrun_variance: (a: number, b: number) => [number, number];
export const mappingrun_won: (a: number) => [number, number];
export const terrain: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const terrain_families: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
