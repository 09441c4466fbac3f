import { describe, expect, it } from "vitest";

import { decodeF32, encodeF32 } from "../src/codec.js";

describe("wire codec", () => {
    it("round-trips float32 data", () => {
        const data = new Float32Array([0.25, -1.5, 3.75, 1e-6, 0]);
        const back = decodeF32(encodeF32(data), data.length);
        expect(Array.from(back)).toEqual(Array.from(data));
    });

    it("rejects wrong byte counts", () => {
        const data = new Float32Array(12);
        expect(() => decodeF32(encodeF32(data), 13)).toThrow(/expected 52/);
    });

    it("is little-endian on the wire", () => {
        const b64 = encodeF32(new Float32Array([1.0]));
        const bytes = Buffer.from(b64, "base64");
        expect(Array.from(bytes)).toEqual([0x00, 0x00, 0x80, 0x3f]);
    });
});
