/**
 * Exporter entry point.
 *
 *   npm run export -- --model lenet --samples 512 --seed 7 --out bundle.zip
 *
 * Builds (or loads) a sequential dense/conv/relu model, trains it
 * briefly on seeded synthetic data, captures weights and activations,
 * and writes a bundle the pruning toolkit consumes.  --check runs the
 * toolkit on the bundle and compares logits.
 */

import * as tf from '@tensorflow/tfjs';
import * as fs from 'fs';
import * as path from 'path';
import { exportBundle, writeLogitsCsv } from './export';
import { buildLenetToy, buildMlp, loadModelFromDir, makeInputs, metaFromModel, trainBriefly } from './models';
import { decodeTensor } from './tensor';
import { PASS_THRESHOLD, roundtripCheck } from './roundtrip';

interface Args {
  model: string;
  data: string;
  samples: number;
  verifySamples: number;
  seed: number;
  epochs: number;
  out: string;
  check: boolean;
}

function parseArgs(argv: string[]): Args {
  const args: Args = {
    model: 'lenet', data: 'synth', samples: 512, verifySamples: -1,
    seed: 0, epochs: 3, out: 'bundle.zip', check: false,
  };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const next = () => {
      i += 1;
      if (i >= argv.length) throw new Error(`missing value for ${flag}`);
      return argv[i];
    };
    switch (flag) {
      case '--model': args.model = next(); break;
      case '--data': args.data = next(); break;
      case '--samples': args.samples = Number(next()); break;
      case '--verify-samples': args.verifySamples = Number(next()); break;
      case '--seed': args.seed = Number(next()); break;
      case '--epochs': args.epochs = Number(next()); break;
      case '--out': args.out = next(); break;
      case '--check': args.check = true; break;
      default: throw new Error(`unknown flag ${flag}`);
    }
  }
  if (args.verifySamples < 0) args.verifySamples = args.samples;
  return args;
}

export async function run(argv: string[]): Promise<number> {
  const args = parseArgs(argv);
  await tf.setBackend('cpu');

  let built;
  if (args.model === 'lenet') {
    built = buildLenetToy(args.seed);
  } else if (args.model === 'mlp') {
    built = buildMlp(args.seed);
  } else {
    const model = await loadModelFromDir(args.model);
    built = { model, ...metaFromModel(model) };
  }

  const total = args.samples + args.verifySamples;
  let x: tf.Tensor;
  if (args.data === 'synth') {
    x = makeInputs(built.inputShape, total, args.seed + 1);
  } else {
    const rec = decodeTensor(fs.readFileSync(args.data), args.data);
    if (rec.shape[0] < total) {
      throw new Error(`data file has ${rec.shape[0]} rows, need ${total}`);
    }
    const values = Float32Array.from(rec.data as Float32Array | Float64Array);
    if (rec.shape.length === 4) {
      // stored channel-first; tfjs wants NHWC
      const [, c, h, w] = rec.shape;
      const nhwc = new Float32Array(total * h * w * c);
      for (let s = 0; s < total; s++) {
        for (let ch = 0; ch < c; ch++) {
          for (let i = 0; i < h; i++) {
            for (let j = 0; j < w; j++) {
              nhwc[((s * h + i) * w + j) * c + ch] = values[((s * c + ch) * h + i) * w + j];
            }
          }
        }
      }
      x = tf.tensor4d(nhwc, [total, h, w, c]);
    } else {
      x = tf.tensor2d(values.subarray(0, total * rec.shape[1]), [total, rec.shape[1]]);
    }
  }

  if (args.epochs > 0) {
    // brief training against seeded pseudo-random class labels
    const nClasses = built.model.outputs[0].shape.slice(-1)[0] as number;
    const raw: number[] = [];
    let state = (args.seed + 2) >>> 0;
    for (let i = 0; i < total; i++) {
      state = (state * 1664525 + 1013904223) >>> 0;
      raw.push(state % nClasses);
    }
    const labels = tf.tensor1d(raw, 'float32');
    await trainBriefly(built.model, x, labels, {
      epochs: args.epochs, batchSize: 32, learningRate: 0.05,
    });
    labels.dispose();
  }

  const result = await exportBundle(built, {
    samples: args.samples, verifySamples: args.verifySamples,
    seed: args.seed, outPath: args.out,
  }, x);
  const logitsPath = path.join(path.dirname(args.out), 'framework_logits.csv');
  writeLogitsCsv(result.logits, logitsPath);
  console.log(`wrote ${args.out} (+ ${logitsPath})`);

  if (args.check) {
    const deviation = roundtripCheck(args.out, result.logits);
    const ok = deviation <= PASS_THRESHOLD;
    console.log(
      `roundtrip max deviation ${deviation.toExponential(3)} ` +
      `(threshold ${PASS_THRESHOLD}): ${ok ? 'PASS' : 'FAIL'}`
    );
    return ok ? 0 : 1;
  }
  return 0;
}

if (require.main === module) {
  run(process.argv.slice(2))
    .then((code) => process.exit(code))
    .catch((err) => {
      console.error(err.message ?? err);
      process.exit(1);
    });
}
