/**
 * Built-in toy models, deterministically initialized and briefly
 * trained.  All layers are sequential dense/conv2d with relu, which is
 * exactly what the pruning toolkit's bundle format covers.
 */

import * as tf from '@tensorflow/tfjs';
import * as fs from 'fs';
import * as path from 'path';
import { Rng } from './rng';

export interface LayerMeta {
  name: string;
  kind: 'dense' | 'conv2d';
  nonlinearity: 'relu' | 'none';
  stride: number;
  padding: number;
  prunable: boolean;
}

export interface BuiltModel {
  model: tf.LayersModel;
  meta: LayerMeta[];
  /** channel-first input shape, [c, h, w] for conv models, [d] for MLPs */
  inputShape: number[];
}

function uniformInit(fanIn: number, seed: number) {
  const a = 1 / Math.sqrt(fanIn);
  return tf.initializers.randomUniform({ minval: -a, maxval: a, seed });
}

export function buildLenetToy(seed: number): BuiltModel {
  const m = tf.sequential();
  m.add(tf.layers.conv2d({
    name: 'conv0', filters: 6, kernelSize: 3, strides: 2, padding: 'valid',
    activation: 'relu', inputShape: [9, 9, 1],
    kernelInitializer: uniformInit(9, seed),
    biasInitializer: uniformInit(9, seed + 1),
  }));
  m.add(tf.layers.conv2d({
    name: 'conv1', filters: 8, kernelSize: 3, padding: 'valid', activation: 'relu',
    kernelInitializer: uniformInit(6 * 9, seed + 2),
    biasInitializer: uniformInit(6 * 9, seed + 3),
  }));
  m.add(tf.layers.flatten({ name: 'flatten' }));
  m.add(tf.layers.dense({
    name: 'fc0', units: 16, activation: 'relu',
    kernelInitializer: uniformInit(32, seed + 4),
    biasInitializer: uniformInit(32, seed + 5),
  }));
  m.add(tf.layers.dense({
    name: 'fc1', units: 4,
    kernelInitializer: uniformInit(16, seed + 6),
    biasInitializer: uniformInit(16, seed + 7),
  }));
  return {
    model: m,
    inputShape: [1, 9, 9],
    meta: [
      { name: 'conv0', kind: 'conv2d', nonlinearity: 'relu', stride: 2, padding: 0, prunable: true },
      { name: 'conv1', kind: 'conv2d', nonlinearity: 'relu', stride: 1, padding: 0, prunable: true },
      { name: 'fc0', kind: 'dense', nonlinearity: 'relu', stride: 1, padding: 0, prunable: true },
      { name: 'fc1', kind: 'dense', nonlinearity: 'none', stride: 1, padding: 0, prunable: false },
    ],
  };
}

export function buildMlp(seed: number, dims: number[] = [10, 24, 16, 5]): BuiltModel {
  const m = tf.sequential();
  const meta: LayerMeta[] = [];
  for (let i = 0; i + 1 < dims.length; i++) {
    const last = i === dims.length - 2;
    m.add(tf.layers.dense({
      name: `fc${i}`, units: dims[i + 1], activation: last ? undefined : 'relu',
      inputShape: i === 0 ? [dims[0]] : undefined,
      kernelInitializer: uniformInit(dims[i], seed + 2 * i),
      biasInitializer: uniformInit(dims[i], seed + 2 * i + 1),
    }));
    meta.push({
      name: `fc${i}`, kind: 'dense', nonlinearity: last ? 'none' : 'relu',
      stride: 1, padding: 0, prunable: !last,
    });
  }
  return { model: m, meta, inputShape: [dims[0]] };
}

/** Load a layers-model saved as model.json + weight shards in a directory. */
export async function loadModelFromDir(dir: string): Promise<tf.LayersModel> {
  const raw = JSON.parse(fs.readFileSync(path.join(dir, 'model.json'), 'utf-8'));
  const specs: tf.io.WeightsManifestEntry[] = [];
  const buffers: Buffer[] = [];
  for (const group of raw.weightsManifest) {
    specs.push(...group.weights);
    for (const p of group.paths) {
      buffers.push(fs.readFileSync(path.join(dir, p)));
    }
  }
  const weightData = new Uint8Array(Buffer.concat(buffers)).buffer;
  return tf.loadLayersModel(
    tf.io.fromMemory({
      modelTopology: raw.modelTopology,
      weightSpecs: specs,
      weightData,
    })
  );
}

/** Metadata for a loaded sequential dense/conv/relu model. */
export function metaFromModel(model: tf.LayersModel): { meta: LayerMeta[]; inputShape: number[] } {
  const meta: LayerMeta[] = [];
  const weighted: tf.layers.Layer[] = [];
  for (const layer of model.layers) {
    const cls = layer.getClassName();
    if (cls === 'Flatten' || cls === 'InputLayer') continue;
    if (cls !== 'Dense' && cls !== 'Conv2D') {
      throw new Error(`unsupported layer kind ${cls} (layer ${layer.name})`);
    }
    weighted.push(layer);
  }
  weighted.forEach((layer, i) => {
    const cls = layer.getClassName();
    const config = layer.getConfig() as Record<string, unknown>;
    const activation = String(config['activation'] ?? 'linear');
    if (activation !== 'relu' && activation !== 'linear') {
      throw new Error(`unsupported activation ${activation} (layer ${layer.name})`);
    }
    const strides = config['strides'] as number[] | number | undefined;
    const padding = config['padding'] as string | undefined;
    if (cls === 'Conv2D' && padding !== 'valid') {
      throw new Error(`unsupported padding ${padding} (layer ${layer.name})`);
    }
    meta.push({
      name: layer.name,
      kind: cls === 'Dense' ? 'dense' : 'conv2d',
      nonlinearity: activation === 'relu' ? 'relu' : 'none',
      stride: Array.isArray(strides) ? strides[0] : Number(strides ?? 1),
      padding: 0,
      prunable: i < weighted.length - 1,
    });
  });
  const shape = model.inputs[0].shape.slice(1).map(Number);
  const inputShape = shape.length === 3 ? [shape[2], shape[0], shape[1]] : shape;
  return { meta, inputShape };
}

export interface TrainConfig {
  epochs: number;
  batchSize: number;
  learningRate: number;
}

export async function trainBriefly(
  model: tf.LayersModel,
  x: tf.Tensor,
  labels: tf.Tensor,
  config: TrainConfig = { epochs: 3, batchSize: 32, learningRate: 0.05 }
): Promise<void> {
  model.compile({
    optimizer: tf.train.sgd(config.learningRate),
    loss: 'sparseCategoricalCrossentropy',
  });
  await model.fit(x, labels, {
    epochs: config.epochs,
    batchSize: config.batchSize,
    shuffle: false, // keep runs reproducible
    verbose: 0,
  });
}

/** Seeded inputs: uniform [0,1) images or unit-variance MLP features. */
export function makeInputs(inputShape: number[], n: number, seed: number): tf.Tensor {
  const rng = new Rng(seed);
  if (inputShape.length === 3) {
    const [c, h, w] = inputShape;
    const data = new Float32Array(n * h * w * c);
    // generate in channel-first order (matching the bundle), store NHWC for tfjs
    for (let s = 0; s < n; s++) {
      for (let ch = 0; ch < c; ch++) {
        for (let i = 0; i < h; i++) {
          for (let j = 0; j < w; j++) {
            data[((s * h + i) * w + j) * c + ch] = rng.uniform();
          }
        }
      }
    }
    return tf.tensor4d(data, [n, h, w, c]);
  }
  const d = inputShape[0];
  const data = new Float32Array(n * d);
  for (let i = 0; i < n * d; i++) {
    let total = 0;
    for (let k = 0; k < 12; k++) total += rng.uniform();
    data[i] = total - 6; // Irwin-Hall approximation of a standard normal
  }
  return tf.tensor2d(data, [n, d]);
}
