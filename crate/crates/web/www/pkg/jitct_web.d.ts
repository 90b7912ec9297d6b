/* tslint:disable */
/* eslint-disable */

/**
 * Primes the profiler, probes every secret class and returns the timing
 * histogram with the mutual information estimate.
 */
export function demo(name: string, protect: string, jitter: number, seed: number): string;

/**
 * Source text of a bundled demo program.
 */
export function demo_source(name: string): string;

/**
 * Infers the protection policy and the typing report.
 */
export function infer(source: string): string;

/**
 * Applies one compilation directive and lists the resulting native method.
 */
export function transform(source: string, directive: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly demo: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly demo_source: (a: number, b: number) => [number, number];
    readonly infer: (a: number, b: number) => [number, number];
    readonly transform: (a: number, b: number, c: number, d: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
