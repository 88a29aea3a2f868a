/* tslint:disable */
/* eslint-disable */

/**
 * Signed monotone pieces of a grid function, each evaluated on the grid.
 */
export class Pieces {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `γ_j σ_j` at the grid nodes.
     */
    piece(j: number): Float64Array;
    readonly base_value: number;
    readonly count: number;
    readonly signs: Int8Array;
}

/**
 * Full-model reconstruction at one time on a uniform grid.
 */
export class Snapshot {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Final time of the problem, so callers can scale a time slider.
     */
    readonly t_final: number;
    readonly values: Float64Array;
    readonly x_left: number;
    readonly x_right: number;
}

/**
 * Monotone decomposition with flat tolerance `flat_tol_rel · max|u|`.
 */
export function decompose(values: Float64Array, x_left: number, x_right: number, flat_tol_rel: number): Pieces;

/**
 * `u_a ∘ T_s⁻¹` with `T_s = (1 - s) Id + s T`, where `T` is the piecewise
 * transport map from `u_a` to `u_b`. Both snapshots must share a signature.
 */
export function interpolate(u_a: Float64Array, u_b: Float64Array, x_left: number, x_right: number, s: number, flat_tol_rel: number): Float64Array;

/**
 * Full-model snapshot of `case` with parameters `mu` at time `t` on `n_nodes` nodes.
 */
export function solve(_case: string, mu: Float64Array, n_nodes: number, t: number): Snapshot;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_pieces_free: (a: number, b: number) => void;
    readonly __wbg_snapshot_free: (a: number, b: number) => void;
    readonly decompose: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly interpolate: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly pieces_base_value: (a: number) => number;
    readonly pieces_count: (a: number) => number;
    readonly pieces_piece: (a: number, b: number) => [number, number];
    readonly pieces_signs: (a: number) => [number, number];
    readonly snapshot_t_final: (a: number) => number;
    readonly snapshot_values: (a: number) => [number, number];
    readonly snapshot_x_left: (a: number) => number;
    readonly snapshot_x_right: (a: number) => number;
    readonly solve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
