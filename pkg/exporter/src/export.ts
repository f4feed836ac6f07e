/**
 * Bundle export: run a tfjs model on a sampled batch, capture the
 * activations each prunable layer feeds its successor, convert weights
 * and activations to the bundle's channel-first layout, and write the
 * zip container the pruning toolkit loads.
 */

import * as tf from '@tensorflow/tfjs';
import * as fs from 'fs';
import { flattenChannelMajor, im2col, Nchw, nhwcToNchw } from './im2col';
import { BuiltModel, LayerMeta } from './models';
import { encodeTensor, f32Tensor, i64Tensor, TensorRecord } from './tensor';
import { writeZip, ZipEntry } from './zip';

export interface ExportSpec {
  samples: number;
  verifySamples: number;
  seed: number;
  outPath: string;
}

export interface ExportResult {
  bundlePath: string;
  /** framework logits on all rows (pruning batch then verification) */
  logits: number[][];
  captureNames: string[];
}

interface ManifestLayer {
  name: string;
  kind: string;
  weight: string;
  bias: string | null;
  nonlinearity: string;
  stride: number;
  padding: number;
  prunable: boolean;
  capture: string | null;
}

function convKernelToBundle(kernel: tf.Tensor): { shape: number[]; data: Float32Array } {
  // tfjs stores [kH, kW, inC, outC]; the bundle wants [outC, inC, kH, kW]
  const t = kernel.transpose([3, 2, 0, 1]);
  const out = { shape: t.shape.slice(), data: t.dataSync() as Float32Array };
  t.dispose();
  return out;
}

function denseAfterConvToBundle(
  weight: tf.Tensor, channels: number, h: number, w: number
): Float32Array {
  // tfjs flattens NHWC, so dense rows arrive in (i, j, ch) order with the
  // channel fastest; the bundle's flatten is channel-major (ch, i, j)
  const [rows, units] = weight.shape as [number, number];
  if (rows !== channels * h * w) {
    throw new Error(`dense weight has ${rows} rows, expected ${channels * h * w}`);
  }
  const src = weight.dataSync() as Float32Array;
  const out = new Float32Array(src.length);
  for (let i = 0; i < h; i++) {
    for (let j = 0; j < w; j++) {
      for (let ch = 0; ch < channels; ch++) {
        const from = ((i * w + j) * channels + ch) * units;
        const to = (ch * h * w + i * w + j) * units;
        out.set(src.subarray(from, from + units), to);
      }
    }
  }
  return out;
}

/** Post-activation outputs of every layer, keyed by layer name. */
export function intermediateOutputs(
  model: tf.LayersModel, x: tf.Tensor
): Map<string, tf.Tensor> {
  const probe = tf.model({
    inputs: model.inputs,
    outputs: model.layers.map((l) => l.output as tf.SymbolicTensor),
  });
  const outs = probe.predict(x) as tf.Tensor[];
  const named = new Map<string, tf.Tensor>();
  model.layers.forEach((layer, i) => named.set(layer.name, outs[i]));
  return named;
}

function toNchw(t: tf.Tensor): Nchw {
  const [n, h, w, c] = t.shape as [number, number, number, number];
  return nhwcToNchw(t.dataSync() as Float32Array, n, h, w, c);
}

/**
 * Capture matrix for one prunable layer, shaped for its successor:
 * dense -> the activation matrix itself; conv feeding conv -> patch
 * matrix under the successor's kernel geometry; conv feeding dense ->
 * channel-major flattened maps.
 */
export function captureFor(
  layerOut: tf.Tensor,
  layerMeta: LayerMeta,
  successor: LayerMeta | null,
  successorKernel: number[] | null
): { shape: number[]; data: Float32Array } {
  if (layerMeta.kind === 'dense') {
    const [n, units] = layerOut.shape as [number, number];
    return { shape: [n, units], data: layerOut.dataSync() as Float32Array };
  }
  const nchw = toNchw(layerOut);
  if (successor && successor.kind === 'conv2d' && successorKernel) {
    const [kH, kW] = successorKernel;
    const mat = im2col(nchw, kH, kW, successor.stride, successor.padding);
    return { shape: [mat.rows, mat.cols], data: mat.data };
  }
  const mat = flattenChannelMajor(nchw);
  return { shape: [mat.rows, mat.cols], data: mat.data };
}

export async function exportBundle(built: BuiltModel, spec: ExportSpec, x: tf.Tensor): Promise<ExportResult> {
  const { model, meta, inputShape } = built;
  const total = spec.samples + spec.verifySamples;
  if (x.shape[0] !== total) {
    throw new Error(`input batch has ${x.shape[0]} rows, expected ${total}`);
  }
  const weighted = model.layers.filter((l) =>
    ['Dense', 'Conv2D'].includes(l.getClassName())
  );
  if (weighted.length !== meta.length) {
    throw new Error('layer metadata out of sync with the model');
  }

  const pruneX = x.slice([0], [spec.samples]);
  const outputs = intermediateOutputs(model, pruneX);
  const logitsT = model.predict(x) as tf.Tensor;
  const logitsFlat = logitsT.dataSync() as Float32Array;
  const nClasses = logitsT.shape[1] as number;

  const tensors: TensorRecord[] = [];
  const manifestLayers: ManifestLayer[] = [];
  let convShapeBeforeFlatten: [number, number, number] | null = null;

  for (let i = 0; i < weighted.length; i++) {
    const layer = weighted[i];
    const info = meta[i];
    const [kernel, bias] = layer.getWeights();
    const wName = `${info.name}.weight`;
    const bName = `${info.name}.bias`;

    if (info.kind === 'conv2d') {
      const converted = convKernelToBundle(kernel);
      tensors.push(f32Tensor(wName, converted.shape, converted.data));
      const outT = outputs.get(layer.name)!;
      convShapeBeforeFlatten = [outT.shape[3] as number, outT.shape[1] as number, outT.shape[2] as number];
    } else if (convShapeBeforeFlatten) {
      const [c, h, w] = convShapeBeforeFlatten;
      tensors.push(f32Tensor(wName, kernel.shape.slice(), denseAfterConvToBundle(kernel, c, h, w)));
      convShapeBeforeFlatten = null;
    } else {
      tensors.push(f32Tensor(wName, kernel.shape.slice(), kernel.dataSync() as Float32Array));
    }
    tensors.push(f32Tensor(bName, bias.shape.slice(), bias.dataSync() as Float32Array));

    let captureName: string | null = null;
    if (info.prunable) {
      const successor = i + 1 < meta.length ? meta[i + 1] : null;
      const successorKernel =
        successor && successor.kind === 'conv2d'
          ? (weighted[i + 1].getWeights()[0].shape.slice(0, 2) as number[])
          : null;
      const cap = captureFor(outputs.get(layer.name)!, info, successor, successorKernel);
      captureName = `${info.name}.capture`;
      tensors.push(f32Tensor(captureName, cap.shape, cap.data));
    }

    manifestLayers.push({
      name: info.name, kind: info.kind, weight: wName, bias: bName,
      nonlinearity: info.nonlinearity, stride: info.stride, padding: info.padding,
      prunable: info.prunable, capture: captureName,
    });
  }

  // inputs in channel-first layout
  if (inputShape.length === 3) {
    const nchw = toNchw(x as tf.Tensor4D);
    tensors.push(f32Tensor('inputs', [total, ...inputShape], nchw.data));
  } else {
    tensors.push(f32Tensor('inputs', [total, inputShape[0]], x.dataSync() as Float32Array));
  }
  const labels: number[] = [];
  for (let s = 0; s < total; s++) {
    let best = 0;
    for (let k = 1; k < nClasses; k++) {
      if (logitsFlat[s * nClasses + k] > logitsFlat[s * nClasses + best]) best = k;
    }
    labels.push(best);
  }
  tensors.push(i64Tensor('labels', [total], labels));
  const verification = Array.from({ length: spec.verifySamples }, (_, i) => spec.samples + i);
  tensors.push(i64Tensor('verification_indices', [verification.length], verification));

  const manifest = {
    format_version: 1,
    model: manifestLayers,
    data: {
      inputs: 'inputs',
      labels: 'labels',
      verification_indices: 'verification_indices',
    },
  };
  const entries: ZipEntry[] = [
    { name: 'manifest.json', data: new TextEncoder().encode(JSON.stringify(manifest, null, 1)) },
  ];
  for (const rec of [...tensors].sort((a, b) => (a.name < b.name ? -1 : 1))) {
    entries.push({ name: `tensors/${rec.name}`, data: encodeTensor(rec) });
  }
  fs.writeFileSync(spec.outPath, writeZip(entries));

  const logits: number[][] = [];
  for (let s = 0; s < total; s++) {
    logits.push(Array.from(logitsFlat.subarray(s * nClasses, (s + 1) * nClasses)));
  }
  return {
    bundlePath: spec.outPath,
    logits,
    captureNames: manifestLayers.filter((l) => l.capture).map((l) => l.capture!),
  };
}

export function writeLogitsCsv(logits: number[][], path: string): void {
  const lines = logits.map((row) => row.map((v) => v.toPrecision(9)).join(','));
  fs.writeFileSync(path, lines.join('\n') + '\n');
}
