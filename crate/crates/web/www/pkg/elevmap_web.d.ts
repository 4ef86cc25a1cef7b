/* tslint:disable */
/* eslint-disable */

/**
 * Generated heightfield; void cells are NaN.
 */
export class Field {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    elevation(): Float64Array;
    /**
     * Cells along x (rows).
     */
    length(): number;
    resolution(): number;
    /**
     * Cells along y (columns).
     */
    width(): number;
}

/**
 * Pass-turn-return mapping run over a generated terrain with the
 * training-free predictor. Snapshots are kept every `stride` frames.
 */
export class MappingRun {
    free(): void;
    [Symbol.dispose](): void;
    elevation(i: number): Float32Array;
    /**
     * Map cells per side.
     */
    extent(): number;
    frame(i: number): number;
    /**
     * Per-frame loss of the controller query against the true surface.
     */
    l05(): Float64Array;
    constructor(family_name: string, difficulty: number, seed: number, cameras: number, missing_ratio: number, stride: number);
    /**
     * `[row, col, yaw]` of the robot in map-cell units.
     */
    robot(i: number): Float64Array;
    snapshot_count(): number;
    variance(i: number): Float32Array;
    /**
     * Per-frame count of cells overwritten by the new estimate.
     */
    won(): Uint32Array;
}

/**
 * `[effective variance, valid (0 or 1), win probability]` for one update
 * under the default fusion settings. The win probability is 0 when the
 * update is rejected.
 */
export function gate(sigma2_t: number, sigma2_prior: number): Float64Array;

export function terrain(family_name: string, difficulty: number, seed: number, profile_name: string): Field;

/**
 * Names accepted by [`terrain`] and [`MappingRun::new`].
 */
export function terrain_families(): string[];

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_field_free: (a: number, b: number) => void;
    readonly __wbg_mappingrun_free: (a: number, b: number) => void;
    readonly field_elevation: (a: number) => [number, number];
    readonly field_length: (a: number) => number;
    readonly field_resolution: (a: number) => number;
    readonly field_width: (a: number) => number;
    readonly gate: (a: number, b: number) => [number, number];
    readonly mappingrun_elevation: (a: number, b: number) => [number, number];
    readonly mappingrun_extent: (a: number) => number;
    readonly mappingrun_frame: (a: number, b: number) => number;
    readonly mappingrun_l05: (a: number) => [number, number];
    readonly mappingrun_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly mappingrun_robot: (a: number, b: number) => [number, number];
    readonly mappingrun_snapshot_count: (a: number) => number;
    readonly mappingrun_variance: (a: number, b: number) => [number, number];
    readonly mappingrun_won: (a: number) => [number, number];
    readonly terrain: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly terrain_families: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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
