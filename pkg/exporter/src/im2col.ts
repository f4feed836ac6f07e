/**
 * Patch-matrix extraction on channel-first arrays, matching the layout
 * the pruning toolkit expects: rows are sample-major then patch
 * row-major; columns are channel-major then (kernelRow * kW + kernelCol)
 * within each channel block.
 */

export interface Nchw {
  data: Float32Array;
  n: number;
  c: number;
  h: number;
  w: number;
}

export function convOutputHw(
  h: number, w: number, kH: number, kW: number, stride: number, pad: number
): [number, number] {
  const spanH = h + 2 * pad - kH;
  const spanW = w + 2 * pad - kW;
  if (spanH < 0 || spanW < 0 || spanH % stride !== 0 || spanW % stride !== 0) {
    throw new Error(
      `kernel (${kH},${kW}) stride ${stride} pad ${pad} does not tile (${h},${w})`
    );
  }
  return [spanH / stride + 1, spanW / stride + 1];
}

export function im2col(
  input: Nchw, kH: number, kW: number, stride: number, pad: number
): { rows: number; cols: number; data: Float32Array } {
  const { n, c, h, w } = input;
  const [oh, ow] = convOutputHw(h, w, kH, kW, stride, pad);
  const patches = oh * ow;
  const cols = c * kH * kW;
  const out = new Float32Array(n * patches * cols);
  const at = (s: number, ch: number, i: number, j: number): number => {
    if (i < 0 || j < 0 || i >= h || j >= w) return 0;
    return input.data[((s * c + ch) * h + i) * w + j];
  };
  for (let s = 0; s < n; s++) {
    for (let pi = 0; pi < oh; pi++) {
      for (let pj = 0; pj < ow; pj++) {
        const row = (s * patches + pi * ow + pj) * cols;
        for (let ch = 0; ch < c; ch++) {
          for (let u = 0; u < kH; u++) {
            for (let v = 0; v < kW; v++) {
              out[row + ch * kH * kW + u * kW + v] =
                at(s, ch, pi * stride - pad + u, pj * stride - pad + v);
            }
          }
        }
      }
    }
  }
  return { rows: n * patches, cols, data: out };
}

/** Flatten channel-first maps to [n, c*h*w] with channel-major columns. */
export function flattenChannelMajor(input: Nchw): { rows: number; cols: number; data: Float32Array } {
  // the NCHW buffer is already in (c, h, w) order per sample
  return { rows: input.n, cols: input.c * input.h * input.w, data: input.data.slice() };
}

/** Reorder an NHWC tensor buffer into an Nchw record. */
export function nhwcToNchw(
  data: Float32Array, n: number, h: number, w: number, c: number
): Nchw {
  const out = new Float32Array(n * c * h * w);
  for (let s = 0; s < n; s++) {
    for (let i = 0; i < h; i++) {
      for (let j = 0; j < w; j++) {
        for (let ch = 0; ch < c; ch++) {
          out[((s * c + ch) * h + i) * w + j] = data[((s * h + i) * w + j) * c + ch];
        }
      }
    }
  }
  return { data: out, n, c, h, w };
}
