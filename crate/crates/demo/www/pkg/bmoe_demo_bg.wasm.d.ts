/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_balanceview_free: (a: number, b: number) => void;
export const __wbg_weightsession_free: (a: number, b: number) => void;
export const activation_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const balanceview_gradients: (a: number) => [number, number];
export const balanceview_loss: (a: number) => number;
export const balanceview_nextWeights: (a: number) => [number, number];
export const balanceview_ritr: (a: number) => [number, number];
export const balanceview_targets: (a: number) => [number, number];
export const explore_balance: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
export const weightsession_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const weightsession_step: (a: number, b: number) => [number, number, number, number];
export const weightsession_stepsTaken: (a: number) => number;
export const weightsession_weights: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
