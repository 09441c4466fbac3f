/**
 * Forward-diffusion noise schedule. Linear beta interpolation with the
 * cumulative signal fraction alphaBar(t) as a running product, matching
 * the client's default schedule (T=1000, beta from 8.5e-4 to 1.2e-2).
 * Timesteps are 1-based.
 */

export interface ScheduleConfig {
    T: number;
    betaStart: number;
    betaEnd: number;
}

export const DEFAULT_SCHEDULE: ScheduleConfig = {
    T: 1000,
    betaStart: 8.5e-4,
    betaEnd: 1.2e-2,
};

export class NoiseSchedule {
    readonly T: number;
    private readonly alphaBars: Float64Array;

    constructor(config: ScheduleConfig = DEFAULT_SCHEDULE) {
        const { T, betaStart, betaEnd } = config;
        if (!Number.isInteger(T) || T < 1) {
            throw new Error("T must be a positive integer");
        }
        if (!(betaStart > 0 && betaStart <= betaEnd && betaEnd < 1)) {
            throw new Error("need 0 < betaStart <= betaEnd < 1");
        }
        this.T = T;
        this.alphaBars = new Float64Array(T);
        let product = 1.0;
        for (let i = 0; i < T; i++) {
            const beta =
                T === 1
                    ? betaStart
                    : betaStart + ((betaEnd - betaStart) * i) / (T - 1);
            product *= 1.0 - beta;
            this.alphaBars[i] = product;
        }
    }

    alphaBar(t: number): number {
        if (!Number.isInteger(t) || t < 1 || t > this.T) {
            throw new Error(`timestep ${t} outside [1, ${this.T}]`);
        }
        return this.alphaBars[t - 1];
    }

    /** w(t) = 1 - alphaBar(t); the gradient weight, in (0, 1). */
    sdsWeight(t: number): number {
        return 1.0 - this.alphaBar(t);
    }
}
