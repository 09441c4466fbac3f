/**
 * Wire codec: images and noise travel as base64 of row-major
 * little-endian float32 data. Decoding validates the byte count against
 * the declared height x width x 3 shape.
 *
 * Float32Array views are native-endian; every platform Node targets in
 * practice is little-endian, which matches the protocol.
 */

export function decodeF32(b64: string, count: number): Float32Array {
    const buf = Buffer.from(b64, "base64");
    if (buf.length !== count * 4) {
        throw new Error(
            `payload holds ${buf.length} bytes, expected ${count * 4}`,
        );
    }
    const aligned = new ArrayBuffer(buf.length);
    new Uint8Array(aligned).set(buf);
    return new Float32Array(aligned);
}

export function encodeF32(data: Float32Array): string {
    return Buffer.from(data.buffer, data.byteOffset, data.byteLength).toString(
        "base64",
    );
}
