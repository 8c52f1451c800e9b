// Error readout math. frameError MUST stay formula-identical to the server
// side metric (mean Euclidean distance between index-matched points); the
// shared conformance fixture holds both sides to the same values.

export function frameError(displayed: number[][], live: number[][]): number {
  if (displayed.length !== live.length || displayed.length === 0) {
    throw new Error(`point clouds must match and be nonempty (${displayed.length} vs ${live.length})`);
  }
  let total = 0;
  for (let i = 0; i < displayed.length; i++) {
    const dx = displayed[i][0] - live[i][0];
    const dy = displayed[i][1] - live[i][1];
    const dz = displayed[i][2] - live[i][2];
    total += Math.sqrt(dx * dx + dy * dy + dz * dz);
  }
  return total / displayed.length;
}

/** Trailing mean over the last `window` pushed samples. */
export class RollingMean {
  private values: number[] = [];
  private sum = 0;

  constructor(private window: number = 50) {}

  push(value: number): void {
    this.values.push(value);
    this.sum += value;
    if (this.values.length > this.window) {
      this.sum -= this.values.shift()!;
    }
  }

  get mean(): number | null {
    if (this.values.length === 0) return null;
    return this.sum / this.values.length;
  }

  get count(): number {
    return this.values.length;
  }

  reset(): void {
    this.values = [];
    this.sum = 0;
  }
}
