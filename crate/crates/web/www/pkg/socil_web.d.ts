/* tslint:disable */
/* eslint-disable */

/**
 * Cart-pole swing-up solved with the barrier and without constraints, for
 * the given input and track limits. The barrier starts at `(alpha, beta)`
 * and is halved while its plan still touches a limit.
 */
export function compare_cartpole(u_max: number, p_max: number, alpha: number, beta: number): string;

/**
 * A short online run; `mode` is `safe` or `baseline`.
 */
export function learn(system: string, mode: string, sigma: number, seed: bigint, iterations: number): string;

/**
 * `φ_β(x)` and `max(x, 0)` on `points` samples of `[-range, range]`.
 */
export function softplus_curve(beta: number, range: number, points: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly compare_cartpole: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly learn: (a: number, b: number, c: number, d: number, e: number, f: bigint, g: number) => [number, number, number, number];
    readonly softplus_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
