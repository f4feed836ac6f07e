/**
 * Round-trip verification: feed the exported bundle to the pruning
 * toolkit's CLI, read back the logits its evaluator computes, and
 * compare them with the framework's own logits.
 */

import { spawnSync } from 'child_process';
import * as fs from 'fs';
import * as os from 'os';
import * as path from 'path';

export const PASS_THRESHOLD = 1e-3;

export function primaryLogits(bundlePath: string): number[][] {
  const python = process.env.SUBPRUNE_PY ?? 'python3';
  const outDir = fs.mkdtempSync(path.join(os.tmpdir(), 'subprune-report-'));
  const run = spawnSync(
    python,
    ['-m', 'subprune.cli', 'report', '--bundle', bundlePath, '--out', outDir],
    { encoding: 'utf-8' }
  );
  if (run.status !== 0) {
    throw new Error(
      `primary CLI failed (exit ${run.status}):\n${run.stdout}\n${run.stderr}`
    );
  }
  const text = fs.readFileSync(path.join(outDir, 'logits.csv'), 'utf-8');
  return text
    .trim()
    .split('\n')
    .map((line) => line.split(',').map(Number));
}

export function maxDeviation(a: number[][], b: number[][]): number {
  if (a.length !== b.length) {
    throw new Error(`logit row counts differ: ${a.length} vs ${b.length}`);
  }
  let worst = 0;
  for (let i = 0; i < a.length; i++) {
    if (a[i].length !== b[i].length) {
      throw new Error(`logit widths differ at row ${i}`);
    }
    for (let j = 0; j < a[i].length; j++) {
      worst = Math.max(worst, Math.abs(a[i][j] - b[i][j]));
    }
  }
  return worst;
}

export function roundtripCheck(bundlePath: string, frameworkLogits: number[][]): number {
  return maxDeviation(primaryLogits(bundlePath), frameworkLogits);
}
