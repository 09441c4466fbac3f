/**
 * Service configuration: a key = value text file plus environment
 * overrides (GUIDANCE_SERVICE_* variables win over the file).
 */

import { readFileSync } from "node:fs";

import { DEFAULT_SCHEDULE, ScheduleConfig } from "./schedule.js";

export type StubMode =
    | { kind: "off" }
    | { kind: "echo-epsilon" }
    | { kind: "target-image"; path: string };

export interface ServiceConfig {
    host: string;
    port: number;
    modelId: string;
    stubMode: StubMode;
    maxImagePixels: number;
    requestTimeoutMs: number;
    schedule: ScheduleConfig;
}

export const MIN_IMAGE_PIXELS = 64 * 64;

export function defaultConfig(): ServiceConfig {
    return {
        host: "127.0.0.1",
        port: 8490,
        modelId: "stable-diffusion-2",
        stubMode: { kind: "off" },
        maxImagePixels: 512 * 512,
        requestTimeoutMs: 30_000,
        schedule: { ...DEFAULT_SCHEDULE },
    };
}

export function parseStubMode(text: string): StubMode {
    if (text === "off") return { kind: "off" };
    if (text === "echo-epsilon") return { kind: "echo-epsilon" };
    if (text.startsWith("target-image:")) {
        return {
            kind: "target-image",
            path: text.slice("target-image:".length),
        };
    }
    throw new Error(
        `unknown stub_mode ${text}; use off | echo-epsilon | ` +
            "target-image:<path>",
    );
}

function parseKeyValue(text: string): Map<string, string> {
    const out = new Map<string, string>();
    for (const rawLine of text.split("\n")) {
        const line = rawLine.split("#")[0].trim();
        if (!line) continue;
        const eq = line.indexOf("=");
        if (eq < 0) {
            throw new Error(`expected 'key = value', got: ${line}`);
        }
        out.set(line.slice(0, eq).trim(), line.slice(eq + 1).trim());
    }
    return out;
}

export function loadConfig(path?: string): ServiceConfig {
    const cfg = defaultConfig();
    const entries = path
        ? parseKeyValue(readFileSync(path, "utf-8"))
        : new Map<string, string>();
    const env = process.env;

    const get = (key: string, envKey: string): string | undefined =>
        env[envKey] ?? entries.get(key);

    const host = get("host", "GUIDANCE_SERVICE_HOST");
    if (host) cfg.host = host;
    const port = get("port", "GUIDANCE_SERVICE_PORT");
    if (port) cfg.port = Number(port);
    const modelId = get("model_id", "GUIDANCE_SERVICE_MODEL_ID");
    if (modelId) cfg.modelId = modelId;
    const stub = get("stub_mode", "GUIDANCE_SERVICE_STUB_MODE");
    if (stub) cfg.stubMode = parseStubMode(stub);
    const maxPixels = get("max_image_pixels", "GUIDANCE_SERVICE_MAX_PIXELS");
    if (maxPixels) cfg.maxImagePixels = Number(maxPixels);
    const timeout = get("request_timeout_ms", "GUIDANCE_SERVICE_TIMEOUT_MS");
    if (timeout) cfg.requestTimeoutMs = Number(timeout);
    const t = get("schedule_T", "GUIDANCE_SERVICE_SCHEDULE_T");
    if (t) cfg.schedule.T = Number(t);
    const bs = get("schedule_beta_start", "GUIDANCE_SERVICE_BETA_START");
    if (bs) cfg.schedule.betaStart = Number(bs);
    const be = get("schedule_beta_end", "GUIDANCE_SERVICE_BETA_END");
    if (be) cfg.schedule.betaEnd = Number(be);

    if (!Number.isInteger(cfg.port) || cfg.port < 0 || cfg.port > 65535) {
        throw new Error(`invalid port ${cfg.port}`);
    }
    if (cfg.maxImagePixels < MIN_IMAGE_PIXELS) {
        throw new Error(
            `max_image_pixels must be at least ${MIN_IMAGE_PIXELS}`,
        );
    }
    return cfg;
}
