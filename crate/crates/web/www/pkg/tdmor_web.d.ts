/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Fit of the second- and third-order terms at ranks `1..=max_rank`.
     */
    cp_fits(max_rank: number): string;
    /**
     * Fixture at nominal load with CP ranks `(r2, r3)`; zero means full rank.
     */
    constructor(r2: number, r3: number);
    ranks(): Uint32Array;
    /**
     * Rotor angles of the study machines relative to the reference, for
     * `mode` and for the full model, plus the RMS error between them.
     */
    simulate(mode: string, fault_bus: number, t_clear: number, t_end: number): string;
    /**
     * Norm of `f(x0 + εv) − f(x0) − reduced(εv)` on a log grid of `ε` for
     * a random unit direction `v`.
     */
    taylor_residual(seed: number): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_cp_fits: (a: number, b: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_ranks: (a: number) => [number, number];
    readonly demo_simulate: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly demo_taylor_residual: (a: number, b: number) => [number, number];
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
