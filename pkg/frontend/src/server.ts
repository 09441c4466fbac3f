/**
 * The guidance service.
 *
 * POST /v1/sds_grad takes {image_b64, height, width, prompt, view_suffix,
 * t, epsilon_b64, guidance_scale} and returns {grad_b64, model_id}, where
 * grad = w(t) * (epsHat - eps). In stub modes the prediction is the
 * deterministic stub formula; with stub_mode=off a real diffusion backend
 * would serve epsHat, and without one the service answers 503.
 *
 * Schema violations get 400 with the offending field named; images over
 * the configured pixel budget get 413. GET /v1/health reports readiness.
 */

import { createServer, IncomingMessage, Server, ServerResponse } from "node:http";

import { decodeF32, encodeF32 } from "./codec.js";
import { ServiceConfig } from "./config.js";
import { NoiseSchedule } from "./schedule.js";
import {
    echoEpsilonGradient,
    loadTargetImage,
    TargetImage,
    targetImageGradient,
} from "./stub.js";

const MAX_BODY_BYTES = 64 * 1024 * 1024;

interface SdsRequest {
    image: Float32Array;
    eps: Float32Array;
    height: number;
    width: number;
    prompt: string;
    viewSuffix: string;
    t: number;
    guidanceScale: number;
}

class HttpError extends Error {
    constructor(
        readonly status: number,
        message: string,
    ) {
        super(message);
    }
}

function sendJson(res: ServerResponse, status: number, body: unknown): void {
    const payload = JSON.stringify(body);
    res.writeHead(status, {
        "Content-Type": "application/json",
        "Content-Length": Buffer.byteLength(payload),
    });
    res.end(payload);
}

function readBody(req: IncomingMessage): Promise<Buffer> {
    return new Promise((resolve, reject) => {
        const chunks: Buffer[] = [];
        let total = 0;
        req.on("data", (chunk: Buffer) => {
            total += chunk.length;
            if (total > MAX_BODY_BYTES) {
                reject(new HttpError(413, "request body too large"));
                req.destroy();
                return;
            }
            chunks.push(chunk);
        });
        req.on("end", () => resolve(Buffer.concat(chunks)));
        req.on("error", reject);
    });
}

export class GuidanceService {
    private readonly schedule: NoiseSchedule;
    private readonly target: TargetImage | null;
    private server: Server | null = null;

    constructor(private readonly config: ServiceConfig) {
        this.schedule = new NoiseSchedule(config.schedule);
        this.target =
            config.stubMode.kind === "target-image"
                ? loadTargetImage(config.stubMode.path)
                : null;
    }

    get ready(): boolean {
        // Stub modes are ready immediately; without a model backend the
        // real mode never becomes ready.
        return this.config.stubMode.kind !== "off";
    }

    parseRequest(body: Buffer): SdsRequest {
        let parsed: Record<string, unknown>;
        try {
            parsed = JSON.parse(body.toString("utf-8"));
        } catch {
            throw new HttpError(400, "request body is not valid JSON");
        }
        const requireField = (name: string): unknown => {
            const value = parsed[name];
            if (value === undefined || value === null) {
                throw new HttpError(400, `missing field: ${name}`);
            }
            return value;
        };
        const height = requireField("height");
        const width = requireField("width");
        if (
            typeof height !== "number" ||
            typeof width !== "number" ||
            !Number.isInteger(height) ||
            !Number.isInteger(width) ||
            height < 1 ||
            width < 1
        ) {
            throw new HttpError(400, "height and width must be positive integers");
        }
        if (height * width > this.config.maxImagePixels) {
            throw new HttpError(
                413,
                `image has ${height * width} pixels; limit is ` +
                    `${this.config.maxImagePixels}`,
            );
        }
        const prompt = requireField("prompt");
        const viewSuffix = requireField("view_suffix");
        if (typeof prompt !== "string" || typeof viewSuffix !== "string") {
            throw new HttpError(400, "prompt and view_suffix must be strings");
        }
        const t = requireField("t");
        if (
            typeof t !== "number" ||
            !Number.isInteger(t) ||
            t < 1 ||
            t > this.schedule.T
        ) {
            throw new HttpError(
                400,
                `t must be an integer in [1, ${this.schedule.T}]`,
            );
        }
        const guidanceScale = requireField("guidance_scale");
        if (typeof guidanceScale !== "number" || !isFinite(guidanceScale)) {
            throw new HttpError(400, "guidance_scale must be a number");
        }
        const count = height * width * 3;
        const imageB64 = requireField("image_b64");
        const epsB64 = requireField("epsilon_b64");
        if (typeof imageB64 !== "string" || typeof epsB64 !== "string") {
            throw new HttpError(400, "image_b64 and epsilon_b64 must be strings");
        }
        let image: Float32Array;
        let eps: Float32Array;
        try {
            image = decodeF32(imageB64, count);
        } catch (err) {
            throw new HttpError(400, `bad image_b64: ${(err as Error).message}`);
        }
        try {
            eps = decodeF32(epsB64, count);
        } catch (err) {
            throw new HttpError(400, `bad epsilon_b64: ${(err as Error).message}`);
        }
        return {
            image,
            eps,
            height,
            width,
            prompt,
            viewSuffix,
            t,
            guidanceScale,
        };
    }

    gradientFor(request: SdsRequest): Float32Array {
        const mode = this.config.stubMode;
        if (mode.kind === "echo-epsilon") {
            return echoEpsilonGradient(request.image.length);
        }
        if (mode.kind === "target-image") {
            return targetImageGradient(
                request.image,
                request.eps,
                request.t,
                this.schedule,
                this.target as TargetImage,
            );
        }
        throw new HttpError(
            503,
            "no diffusion model backend is configured (stub_mode=off)",
        );
    }

    private handle(req: IncomingMessage, res: ServerResponse): void {
        const respondError = (err: unknown) => {
            if (err instanceof HttpError) {
                sendJson(res, err.status, { error: err.message });
            } else {
                sendJson(res, 500, { error: String(err) });
            }
        };
        try {
            if (req.method === "GET" && req.url === "/v1/health") {
                if (this.ready) {
                    sendJson(res, 200, {
                        status: "ok",
                        model_id: this.config.modelId,
                    });
                } else {
                    sendJson(res, 503, {
                        status: "unavailable",
                        model_id: this.config.modelId,
                    });
                }
                return;
            }
            if (req.method === "POST" && req.url === "/v1/sds_grad") {
                readBody(req)
                    .then((body) => {
                        const request = this.parseRequest(body);
                        const grad = this.gradientFor(request);
                        sendJson(res, 200, {
                            grad_b64: encodeF32(grad),
                            model_id: this.config.modelId,
                        });
                    })
                    .catch(respondError);
                return;
            }
            throw new HttpError(404, `no such endpoint: ${req.method} ${req.url}`);
        } catch (err) {
            respondError(err);
        }
    }

    /** Start listening; resolves with the bound port. */
    listen(): Promise<number> {
        const server = createServer((req, res) => this.handle(req, res));
        server.requestTimeout = this.config.requestTimeoutMs;
        this.server = server;
        return new Promise((resolve, reject) => {
            server.once("error", reject);
            server.listen(this.config.port, this.config.host, () => {
                const address = server.address();
                if (address && typeof address === "object") {
                    resolve(address.port);
                } else {
                    reject(new Error("failed to bind"));
                }
            });
        });
    }

    close(): Promise<void> {
        return new Promise((resolve, reject) => {
            if (!this.server) return resolve();
            this.server.close((err) => (err ? reject(err) : resolve()));
        });
    }
}
