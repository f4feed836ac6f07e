/**
 * Binary tensor encoding consumed by the pruning toolkit:
 * "PNT1" magic, dtype byte (0=f32, 1=f64, 2=i64), ndim byte,
 * 6 zero bytes, ndim little-endian u64 dims, row-major payload.
 */

export type Dtype = 'f32' | 'f64' | 'i64';

const DTYPE_CODES: Record<Dtype, number> = { f32: 0, f64: 1, i64: 2 };
const ELEMENT_SIZE: Record<Dtype, number> = { f32: 4, f64: 8, i64: 8 };

export interface TensorRecord {
  name: string;
  dtype: Dtype;
  shape: number[];
  data: Float32Array | Float64Array | BigInt64Array;
}

export function encodeTensor(rec: TensorRecord): Uint8Array {
  const count = rec.shape.reduce((a, b) => a * b, 1);
  if (rec.data.length !== count) {
    throw new Error(
      `tensor ${rec.name}: ${rec.data.length} values for shape [${rec.shape}]`
    );
  }
  const headerSize = 12 + 8 * rec.shape.length;
  const out = new Uint8Array(headerSize + count * ELEMENT_SIZE[rec.dtype]);
  const view = new DataView(out.buffer);
  out.set([0x50, 0x4e, 0x54, 0x31]); // "PNT1"
  view.setUint8(4, DTYPE_CODES[rec.dtype]);
  view.setUint8(5, rec.shape.length);
  rec.shape.forEach((dim, i) => view.setBigUint64(12 + 8 * i, BigInt(dim), true));
  let pos = headerSize;
  if (rec.dtype === 'f32') {
    for (let i = 0; i < count; i++, pos += 4) view.setFloat32(pos, rec.data[i] as number, true);
  } else if (rec.dtype === 'f64') {
    for (let i = 0; i < count; i++, pos += 8) view.setFloat64(pos, rec.data[i] as number, true);
  } else {
    const data = rec.data as BigInt64Array;
    for (let i = 0; i < count; i++, pos += 8) view.setBigInt64(pos, data[i], true);
  }
  return out;
}

export function decodeTensor(buf: Uint8Array, name = ''): TensorRecord {
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  if (buf.length < 12 || String.fromCharCode(...buf.subarray(0, 4)) !== 'PNT1') {
    throw new Error(`tensor ${name}: bad magic`);
  }
  const code = view.getUint8(4);
  const dtype = (Object.keys(DTYPE_CODES) as Dtype[]).find((d) => DTYPE_CODES[d] === code);
  if (!dtype) throw new Error(`tensor ${name}: unknown dtype code ${code}`);
  const ndim = view.getUint8(5);
  const shape: number[] = [];
  for (let i = 0; i < ndim; i++) shape.push(Number(view.getBigUint64(12 + 8 * i, true)));
  const count = shape.reduce((a, b) => a * b, 1);
  let pos = 12 + 8 * ndim;
  if (buf.length < pos + count * ELEMENT_SIZE[dtype]) {
    throw new Error(`tensor ${name}: truncated payload`);
  }
  if (dtype === 'f32') {
    const data = new Float32Array(count);
    for (let i = 0; i < count; i++, pos += 4) data[i] = view.getFloat32(pos, true);
    return { name, dtype, shape, data };
  }
  if (dtype === 'f64') {
    const data = new Float64Array(count);
    for (let i = 0; i < count; i++, pos += 8) data[i] = view.getFloat64(pos, true);
    return { name, dtype, shape, data };
  }
  const data = new BigInt64Array(count);
  for (let i = 0; i < count; i++, pos += 8) data[i] = view.getBigInt64(pos, true);
  return { name, dtype, shape, data };
}

export function f32Tensor(name: string, shape: number[], values: ArrayLike<number>): TensorRecord {
  return { name, dtype: 'f32', shape, data: Float32Array.from(values as number[]) };
}

export function i64Tensor(name: string, shape: number[], values: ArrayLike<number>): TensorRecord {
  return {
    name,
    dtype: 'i64',
    shape,
    data: BigInt64Array.from(Array.from(values as number[], (v) => BigInt(v))),
  };
}
