/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_pieces_free: (a: number, b: number) => void;
export const __wbg_snapshot_free: (a: number, b: number) => void;
export const decompose: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const interpolate: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
export const pieces_base_value: (a: number) => number;
export const pieces_count: (a: number) => number;
export const pieces_piece: (a: number, b: number) => [number, number];
export const pieces_signs: (a: number) => [number, number];
export const snapshot_t_final: (a: number) => number;
export const snapshot_values: (a: number) => [number, number];
export const snapshot_x_left: (a: number) => number;
export const snapshot_x_right: (a: number) => number;
export const solve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
