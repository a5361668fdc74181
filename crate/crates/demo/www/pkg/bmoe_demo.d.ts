/* tslint:disable */
/* eslint-disable */

/**
 * One balancing step worked out from raw inputs.
 */
export class BalanceView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    gradients(): Float64Array;
    loss(): number;
    nextWeights(): Float64Array;
    ritr(): Float64Array;
    targets(): Float64Array;
}

/**
 * A small two-task model training on synthetic data, one batch at a time.
 */
export class WeightSession {
    free(): void;
    [Symbol.dispose](): void;
    constructor(relatedness: number, alpha: number, first_weight: number, seed: bigint);
    step(steps: number): Float64Array;
    stepsTaken(): number;
    weights(): Float64Array;
}

export function activation_curve(name: string, lo: number, hi: number, n: number): Float64Array;

export function explore_balance(grad_norms: Float64Array, loss_ratios: Float64Array, weights: Float64Array, alpha: number, lambda: number): BalanceView;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_balanceview_free: (a: number, b: number) => void;
    readonly __wbg_weightsession_free: (a: number, b: number) => void;
    readonly activation_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly balanceview_gradients: (a: number) => [number, number];
    readonly balanceview_loss: (a: number) => number;
    readonly balanceview_nextWeights: (a: number) => [number, number];
    readonly balanceview_ritr: (a: number) => [number, number];
    readonly balanceview_targets: (a: number) => [number, number];
    readonly explore_balance: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
    readonly weightsession_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly weightsession_step: (a: number, b: number) => [number, number, number, number];
    readonly weightsession_stepsTaken: (a: number) => number;
    readonly weightsession_weights: (a: number) => [number, number];
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
