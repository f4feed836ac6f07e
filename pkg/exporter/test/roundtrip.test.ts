import * as fs from 'fs';
import * as os from 'os';
import * as path from 'path';
import { spawnSync } from 'child_process';
import * as tf from '@tensorflow/tfjs';
import { beforeAll, describe, expect, it } from 'vitest';
import { exportBundle, ExportResult } from '../src/export';
import { buildLenetToy, BuiltModel, makeInputs, trainBriefly } from '../src/models';
import { maxDeviation, PASS_THRESHOLD, primaryLogits } from '../src/roundtrip';
import { decodeTensor, TensorRecord } from '../src/tensor';
import { readZip } from '../src/zip';

const PYTHON = process.env.SUBPRUNE_PY ?? 'python3';
const SAMPLES = 48;
const VERIFY = 48;

let workDir: string;
let built: BuiltModel;
let inputs: tf.Tensor;
let exported: ExportResult;

function runPrimary(args: string[]) {
  return spawnSync(PYTHON, ['-m', 'subprune.cli', ...args], { encoding: 'utf-8' });
}

function loadBundleTensors(zipPath: string): { manifest: any; tensors: Map<string, TensorRecord> } {
  const entries = readZip(fs.readFileSync(zipPath));
  const manifest = JSON.parse(new TextDecoder().decode(entries.get('manifest.json')!));
  const tensors = new Map<string, TensorRecord>();
  for (const [name, data] of entries) {
    if (name.startsWith('tensors/')) {
      tensors.set(name.slice('tensors/'.length), decodeTensor(data, name));
    }
  }
  return { manifest, tensors };
}

beforeAll(async () => {
  await tf.setBackend('cpu');
  workDir = fs.mkdtempSync(path.join(os.tmpdir(), 'exporter-test-'));
  built = buildLenetToy(3);
  inputs = makeInputs(built.inputShape, SAMPLES + VERIFY, 4);
  const labels = tf.tensor1d(
    Array.from({ length: SAMPLES + VERIFY }, (_, i) => i % 4), 'float32'
  );
  await trainBriefly(built.model, inputs, labels, {
    epochs: 2, batchSize: 32, learningRate: 0.05,
  });
  labels.dispose();
  exported = await exportBundle(built, {
    samples: SAMPLES, verifySamples: VERIFY, seed: 3,
    outPath: path.join(workDir, 'lenet.zip'),
  }, inputs);
}, 120_000);

describe('exported lenet-toy bundle', () => {
  it('reproduces framework logits through the consumer evaluator', () => {
    const deviation = maxDeviation(primaryLogits(exported.bundlePath), exported.logits);
    console.log(`roundtrip max deviation ${deviation.toExponential(3)}`);
    expect(deviation).toBeLessThanOrEqual(PASS_THRESHOLD);
  }, 60_000);

  it('captures match framework intermediate outputs at f32 precision', () => {
    // the dense capture is the framework's own fc0 output, bit-for-bit
    const { tensors } = loadBundleTensors(exported.bundlePath);
    const probe = tf.model({
      inputs: built.model.inputs,
      outputs: built.model.getLayer('fc0').output as tf.SymbolicTensor,
    });
    const fromFramework = probe.predict(inputs.slice([0], [SAMPLES])) as tf.Tensor;
    const stored = tensors.get('fc0.capture')!;
    const fw = fromFramework.dataSync() as Float32Array;
    let worst = 0;
    (stored.data as Float32Array).forEach((v, i) => {
      worst = Math.max(worst, Math.abs(v - fw[i]));
    });
    expect(worst).toBeLessThanOrEqual(1e-4);
  }, 60_000);

  it('passes the consumer validation and diagnostics paths', () => {
    const rank = runPrimary(['rankdiag', '--bundle', exported.bundlePath]);
    expect(rank.status, rank.stderr).toBe(0);
    expect(rank.stdout).toContain('conv0');
  }, 60_000);

  it('prunes end-to-end with reweighting on the consumer side', () => {
    const outDir = path.join(workDir, 'prune-run');
    const run = runPrimary([
      'prune', '--bundle', exported.bundlePath, '--variant', 'asym',
      '--compression', '2', '--seed', '0', '--budget-mode', 'equal-fraction',
      '--out', outDir,
    ]);
    expect(run.status, run.stderr).toBe(0);
    const csv = fs.readFileSync(path.join(outDir, 'results.csv'), 'utf-8').trim().split(/\r?\n/);
    expect(csv[0]).toBe('variant,c,seed,acc1,params,flops,speedup,out_err,time_ms');
    const acc = Number(csv[1].split(',')[3]);
    expect(acc).toBeGreaterThanOrEqual(0);
    expect(acc).toBeLessThanOrEqual(1);
  }, 120_000);
});

describe('mask equivalence with the framework', () => {
  it('matches framework logits when identical units are masked', () => {
    const outDir = path.join(workDir, 'mask-run');
    const run = runPrimary([
      'prune', '--bundle', exported.bundlePath, '--variant', 'random',
      '--compression', '2', '--seed', '5', '--budget-mode', 'equal-fraction',
      '--no-reweight', '--out', outDir,
    ]);
    expect(run.status, run.stderr).toBe(0);
    const prunedPath = path.join(outDir, 'pruned-random-c2-s5.zip');
    const { tensors } = loadBundleTensors(prunedPath);

    // recover each layer's kept units by matching surviving weights
    const keptConv0 = matchFilters(
      tensors.get('conv0.weight')!, built.model.getLayer('conv0').getWeights()[0]
    );
    const keptConv1 = matchFilters(
      tensors.get('conv1.weight')!, built.model.getLayer('conv1').getWeights()[0],
      keptConv0
    );
    const keptFc0 = matchDenseColumns(
      tensors.get('fc0.weight')!, built.model.getLayer('fc0').getWeights()[0],
      keptConv1, 4 // each conv1 channel owns a 2x2 block of flatten rows
    );

    // apply the same masks in the framework: zeroed incoming weights and
    // bias make a relu unit output exactly zero
    const masked = buildLenetToy(3);
    masked.model.setWeights(built.model.getWeights().map((w) => w.clone()));
    zeroConvChannels(masked.model, 'conv0', keptConv0);
    zeroConvChannels(masked.model, 'conv1', keptConv1);
    zeroDenseUnits(masked.model, 'fc0', keptFc0);
    const frameworkLogits = tensorToRows(masked.model.predict(inputs) as tf.Tensor);

    const deviation = maxDeviation(primaryLogits(prunedPath), frameworkLogits);
    console.log(`masked-model max deviation ${deviation.toExponential(3)}`);
    expect(deviation).toBeLessThanOrEqual(PASS_THRESHOLD);
  }, 120_000);
});

function tensorToRows(t: tf.Tensor): number[][] {
  const [n, k] = t.shape as [number, number];
  const flat = t.dataSync() as Float32Array;
  return Array.from({ length: n }, (_, i) => Array.from(flat.subarray(i * k, (i + 1) * k)));
}

/** Identify which original conv filters survive in a shrunken weight. */
function matchFilters(
  shrunk: TensorRecord, originalKernel: tf.Tensor, keptIn?: number[]
): number[] {
  const bundleOrig = originalKernel.transpose([3, 2, 0, 1]); // [out, in, kH, kW]
  const [outC, inC, kH, kW] = bundleOrig.shape as [number, number, number, number];
  const orig = bundleOrig.dataSync() as Float32Array;
  const per = kH * kW;
  const inSel = keptIn ?? Array.from({ length: inC }, (_, i) => i);
  const data = shrunk.data as Float64Array | Float32Array;
  const [sOut, sIn] = shrunk.shape;
  if (sIn !== inSel.length) throw new Error('unexpected input-channel count');
  const kept: number[] = [];
  for (let so = 0; so < sOut; so++) {
    let found = -1;
    for (let o = 0; o < outC && found < 0; o++) {
      let equal = true;
      for (let si = 0; si < inSel.length && equal; si++) {
        for (let p = 0; p < per && equal; p++) {
          const a = data[(so * sIn + si) * per + p];
          const b = orig[(o * inC + inSel[si]) * per + p];
          if (Math.abs(a - b) > 0) equal = false;
        }
      }
      if (equal && !kept.includes(o)) found = o;
    }
    if (found < 0) throw new Error(`no original filter matches shrunken filter ${so}`);
    kept.push(found);
  }
  return kept;
}

/** Identify surviving dense output units given the kept input channels. */
function matchDenseColumns(
  shrunk: TensorRecord, originalKernel: tf.Tensor, keptChannels: number[], blockSize: number
): number[] {
  const [rows, units] = originalKernel.shape as [number, number];
  const channels = rows / blockSize;
  const orig = originalKernel.dataSync() as Float32Array; // tfjs (h,w,c) row order
  // bundle rows are channel-major; rebuild the kept-channel row list there
  const mapHw = blockSize; // 2x2 map
  const hw = mapHw;
  const toBundleRow = (ij: number, ch: number) => ch * hw + ij;
  const tfRow = (ij: number, ch: number) => ij * channels + ch;
  const keptRows: number[] = [];
  for (const ch of keptChannels) {
    for (let ij = 0; ij < hw; ij++) keptRows.push(tfRow(ij, ch));
  }
  const bundleRows: number[] = [];
  for (const ch of keptChannels) {
    for (let ij = 0; ij < hw; ij++) bundleRows.push(toBundleRow(ij, ch));
  }
  const data = shrunk.data as Float64Array | Float32Array;
  const [sRows, sUnits] = shrunk.shape;
  if (sRows !== keptRows.length) throw new Error('unexpected dense row count');
  const kept: number[] = [];
  for (let su = 0; su < sUnits; su++) {
    let found = -1;
    for (let u = 0; u < units && found < 0; u++) {
      let equal = true;
      // shrunken bundle rows follow kept channel blocks in ascending order
      const sortedBundle = [...bundleRows].sort((a, b) => a - b);
      for (let r = 0; r < sortedBundle.length && equal; r++) {
        const ch = Math.floor(sortedBundle[r] / hw);
        const ij = sortedBundle[r] % hw;
        const a = data[r * sUnits + su];
        const b = orig[tfRow(ij, ch) * units + u];
        if (Math.abs(a - b) > 0) equal = false;
      }
      if (equal && !kept.includes(u)) found = u;
    }
    if (found < 0) throw new Error(`no original unit matches shrunken column ${su}`);
    kept.push(found);
  }
  return kept;
}

function zeroConvChannels(model: tf.LayersModel, name: string, kept: number[]) {
  const layer = model.getLayer(name);
  const [kernel, bias] = layer.getWeights();
  const kdata = kernel.dataSync().slice();
  const bdata = bias.dataSync().slice();
  const [kH, kW, inC, outC] = kernel.shape as [number, number, number, number];
  for (let o = 0; o < outC; o++) {
    if (kept.includes(o)) continue;
    bdata[o] = 0;
    for (let i = 0; i < kH * kW * inC; i++) kdata[i * outC + o] = 0;
  }
  layer.setWeights([tf.tensor(kdata, kernel.shape), tf.tensor(bdata, bias.shape)]);
}

function zeroDenseUnits(model: tf.LayersModel, name: string, kept: number[]) {
  const layer = model.getLayer(name);
  const [kernel, bias] = layer.getWeights();
  const kdata = kernel.dataSync().slice();
  const bdata = bias.dataSync().slice();
  const [rows, units] = kernel.shape as [number, number];
  for (let u = 0; u < units; u++) {
    if (kept.includes(u)) continue;
    bdata[u] = 0;
    for (let r = 0; r < rows; r++) kdata[r * units + u] = 0;
  }
  layer.setWeights([tf.tensor(kdata, kernel.shape), tf.tensor(bdata, bias.shape)]);
}
