/** Image comparison metrics for viewer regression tests. */

export function psnr(a: Float32Array, b: Float32Array): number {
  if (a.length !== b.length) throw new Error(`length mismatch ${a.length} vs ${b.length}`);
  let mse = 0;
  for (let i = 0; i < a.length; i++) {
    const d = a[i] - b[i];
    mse += d * d;
  }
  mse /= a.length;
  if (mse <= 0) return 100;
  return Math.min(100, 10 * Math.log10(1 / mse));
}

function gaussianWindow(size = 11, sigma = 1.5): Float64Array {
  const half = (size - 1) / 2;
  const win = new Float64Array(size * size);
  let sum = 0;
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const v = Math.exp(-((x - half) ** 2 + (y - half) ** 2) / (2 * sigma * sigma));
      win[y * size + x] = v;
      sum += v;
    }
  }
  for (let i = 0; i < win.length; i++) win[i] /= sum;
  return win;
}

function toGray(img: Float32Array, width: number, height: number): Float64Array {
  const channels = img.length / (width * height);
  const out = new Float64Array(width * height);
  if (channels === 1) {
    out.set(img);
    return out;
  }
  for (let p = 0; p < width * height; p++) {
    let s = 0;
    for (let c = 0; c < channels; c++) s += img[p * channels + c];
    out[p] = s / channels;
  }
  return out;
}

/** Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5).
 *
 * Matches the service-side metric: grayscale by channel mean, data range 1.
 */
export function ssim(
  a: Float32Array,
  b: Float32Array,
  width: number,
  height: number,
  k1 = 0.01,
  k2 = 0.03,
): number {
  if (a.length !== b.length) throw new Error(`length mismatch ${a.length} vs ${b.length}`);
  const size = 11;
  if (width < size || height < size) throw new Error("image smaller than SSIM window");
  const ga = toGray(a, width, height);
  const gb = toGray(b, width, height);
  const win = gaussianWindow(size);
  const c1 = k1 * k1;
  const c2 = k2 * k2;
  let total = 0;
  let count = 0;
  for (let y = 0; y + size <= height; y++) {
    for (let x = 0; x + size <= width; x++) {
      let muA = 0, muB = 0, aa = 0, bb = 0, ab = 0;
      for (let wy = 0; wy < size; wy++) {
        for (let wx = 0; wx < size; wx++) {
          const w = win[wy * size + wx];
          const va = ga[(y + wy) * width + (x + wx)];
          const vb = gb[(y + wy) * width + (x + wx)];
          muA += w * va;
          muB += w * vb;
          aa += w * va * va;
          bb += w * vb * vb;
          ab += w * va * vb;
        }
      }
      const varA = aa - muA * muA;
      const varB = bb - muB * muB;
      const cov = ab - muA * muB;
      const num = (2 * muA * muB + c1) * (2 * cov + c2);
      const den = (muA * muA + muB * muB + c1) * (varA + varB + c2);
      total += num / den;
      count += 1;
    }
  }
  return total / count;
}
