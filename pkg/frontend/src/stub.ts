/**
 * Model-free stub predictions.
 *
 * echo-epsilon: the "model" predicts exactly the injected noise, so the
 * SDS gradient w(t) * (epsHat - eps) is identically zero.
 *
 * target-image: the model is an oracle for a fixed reference image I*.
 * Noising the request image gives I_t = sqrt(ab) I0 + sqrt(1-ab) eps;
 * predicting epsHat = (I_t - sqrt(ab) I*) / sqrt(1-ab) makes the gradient
 * proportional to I0 - I*, pulling the render toward the reference.
 */

import { readFileSync } from "node:fs";

import { decodeF32 } from "./codec.js";
import { NoiseSchedule } from "./schedule.js";

export interface TargetImage {
    height: number;
    width: number;
    rgb: Float32Array; // row-major H x W x 3
}

/** Target file: JSON {height, width, rgb_b64} with float32 LE pixels. */
export function loadTargetImage(path: string): TargetImage {
    const parsed = JSON.parse(readFileSync(path, "utf-8"));
    const height = Number(parsed.height);
    const width = Number(parsed.width);
    if (!Number.isInteger(height) || !Number.isInteger(width)) {
        throw new Error("target file needs integer height and width");
    }
    if (typeof parsed.rgb_b64 !== "string") {
        throw new Error("target file needs rgb_b64");
    }
    return {
        height,
        width,
        rgb: decodeF32(parsed.rgb_b64, height * width * 3),
    };
}

export function echoEpsilonGradient(count: number): Float32Array {
    return new Float32Array(count); // zeros
}

export function targetImageGradient(
    image: Float32Array,
    eps: Float32Array,
    t: number,
    schedule: NoiseSchedule,
    target: TargetImage,
): Float32Array {
    if (image.length !== target.rgb.length) {
        throw new Error(
            `target is ${target.rgb.length / 3} pixels, request is ` +
                `${image.length / 3}`,
        );
    }
    const ab = schedule.alphaBar(t);
    const weight = schedule.sdsWeight(t);
    const sqrtAb = Math.sqrt(ab);
    const sqrtOneMinus = Math.sqrt(1.0 - ab);
    const grad = new Float32Array(image.length);
    for (let i = 0; i < image.length; i++) {
        const noised = sqrtAb * image[i] + sqrtOneMinus * eps[i];
        const epsHat = (noised - sqrtAb * target.rgb[i]) / sqrtOneMinus;
        grad[i] = weight * (epsHat - eps[i]);
    }
    return grad;
}
