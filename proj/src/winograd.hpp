#pragma once

// Winograd F(2x2, 3x3) transforms for same-padded 3x3 correlation
//   out[y][x] = sum_{ky,kx} w[ky][kx] * in[y+ky-1][x+kx-1]
// together with the exact adjoint of every transform, so gradients of the
// tiled computation are gradients of the convolution itself.
//
// Transformed tensors are [16][channels][tiles] with the 16 slots ordered
// (i, j) -> 4 * i + j. Tiles of a row range [begin, end) are indexed
// (ty - begin) * stride_x + tx; the last tile of every row (tx == tiles_x)
// is padding that keeps all transform loops flat. Its transformed input is
// arbitrary but finite, and output adjoints write zero there.

#include <algorithm>
#include <cstddef>
#include <vector>

namespace usb::winograd {

struct Tiling {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t tiles_y() const { return (height + 1) / 2; }
  std::size_t tiles_x() const { return (width + 1) / 2; }
  std::size_t stride_x() const { return tiles_x() + 1; }
};

// Tile rows [begin, end).
struct TileRows {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t count() const { return end - begin; }
};

// u[xi][co][ci] = (G g G^T)[xi] for every 3x3 kernel g = w[co][ci].
template <class S>
void transform_kernels(const S* w, int cout, int cin, S* u) {
  const std::size_t slot = static_cast<std::size_t>(cout) * cin;
  for (int co = 0; co < cout; ++co) {
    for (int ci = 0; ci < cin; ++ci) {
      const S* g = w + (static_cast<std::size_t>(co) * cin + ci) * 9;
      S gg[4][3];
      for (int c = 0; c < 3; ++c) {
        gg[0][c] = g[c];
        gg[1][c] = S(0.5) * (g[c] + g[3 + c] + g[6 + c]);
        gg[2][c] = S(0.5) * (g[c] - g[3 + c] + g[6 + c]);
        gg[3][c] = g[6 + c];
      }
      for (int r = 0; r < 4; ++r) {
        const S vals[4] = {gg[r][0], S(0.5) * (gg[r][0] + gg[r][1] + gg[r][2]),
                           S(0.5) * (gg[r][0] - gg[r][1] + gg[r][2]), gg[r][2]};
        for (int c = 0; c < 4; ++c) u[(4 * r + c) * slot + static_cast<std::size_t>(co) * cin + ci] = vals[c];
      }
    }
  }
}

// dw[co][ci] += G^T du[..][co][ci] G.
template <class S>
void kernels_adjoint(const S* du, int cout, int cin, S* dw) {
  const std::size_t slot = static_cast<std::size_t>(cout) * cin;
  for (int co = 0; co < cout; ++co) {
    for (int ci = 0; ci < cin; ++ci) {
      S d[4][4];
      for (int xi = 0; xi < 16; ++xi) d[xi / 4][xi % 4] = du[xi * slot + static_cast<std::size_t>(co) * cin + ci];
      S half[4][3];
      for (int r = 0; r < 4; ++r) {
        half[r][0] = d[r][0] + S(0.5) * (d[r][1] + d[r][2]);
        half[r][1] = S(0.5) * (d[r][1] - d[r][2]);
        half[r][2] = S(0.5) * (d[r][1] + d[r][2]) + d[r][3];
      }
      S* g = dw + (static_cast<std::size_t>(co) * cin + ci) * 9;
      for (int c = 0; c < 3; ++c) {
        g[c] += half[0][c] + S(0.5) * (half[1][c] + half[2][c]);
        g[3 + c] += S(0.5) * (half[1][c] - half[2][c]);
        g[6 + c] += S(0.5) * (half[1][c] + half[2][c]) + half[3][c];
      }
    }
  }
}

// Working memory for the plane transforms. The zero-bordered plane (padded
// row r = plane row r - 1, padded column j = plane column j - 1) is split by
// row and column parity into four arrays indexed q * stride_x + m, holding
// padded row 2q (+1 for odd rows) and padded column 2m (+1 for odd columns).
template <class S>
class Scratch {
 public:
  explicit Scratch(const Tiling& tiling)
      : flat_((tiling.tiles_y() + 1) * tiling.stride_x() + 1), padded_(4 * flat_), work_(12 * flat_) {}

  S* padded(int parity_row, int parity_col) { return padded_.data() + (2 * parity_row + parity_col) * flat_; }
  S* work(int k) { return work_.data() + static_cast<std::size_t>(k) * flat_; }

 private:
  std::size_t flat_;
  std::vector<S> padded_;
  std::vector<S> work_;
};

namespace detail {

// Plane rows touched by tile rows [begin, end).
inline std::size_t first_row(TileRows rows) { return rows.begin == 0 ? 0 : 2 * rows.begin - 1; }
inline std::size_t last_row(const Tiling& tiling, TileRows rows) { return std::min(tiling.height, 2 * rows.end + 1); }

template <class S>
void clear_padded(const Tiling& tiling, TileRows rows, Scratch<S>& scratch) {
  const std::size_t len = tiling.stride_x();
  for (int pr = 0; pr < 2; ++pr) {
    for (int pc = 0; pc < 2; ++pc) {
      S* p = scratch.padded(pr, pc) + rows.begin * len;
      std::fill(p, p + (rows.count() + 1) * len, S(0));
    }
  }
}

template <class S>
void load_padded(const S* plane, const Tiling& tiling, TileRows rows, Scratch<S>& scratch) {
  clear_padded(tiling, rows, scratch);
  const std::size_t w = tiling.width;
  const std::size_t len = tiling.stride_x();
  for (std::size_t y = first_row(rows); y < last_row(tiling, rows); ++y) {
    const std::size_t r = y + 1;
    const S* row = plane + y * w;
    S* e = scratch.padded(static_cast<int>(r % 2), 0) + (r / 2) * len;
    S* o = scratch.padded(static_cast<int>(r % 2), 1) + (r / 2) * len;
    for (std::size_t m = 0; 2 * m < w; ++m) o[m] = row[2 * m];
    for (std::size_t m = 1; 2 * m - 1 < w; ++m) e[m] = row[2 * m - 1];
  }
}

template <class S>
void store_padded_add(S* plane, const Tiling& tiling, TileRows rows, Scratch<S>& scratch) {
  const std::size_t w = tiling.width;
  const std::size_t len = tiling.stride_x();
  for (std::size_t y = first_row(rows); y < last_row(tiling, rows); ++y) {
    const std::size_t r = y + 1;
    S* row = plane + y * w;
    const S* e = scratch.padded(static_cast<int>(r % 2), 0) + (r / 2) * len;
    const S* o = scratch.padded(static_cast<int>(r % 2), 1) + (r / 2) * len;
    for (std::size_t m = 0; 2 * m < w; ++m) row[2 * m] += o[m];
    for (std::size_t m = 1; 2 * m - 1 < w; ++m) row[2 * m - 1] += e[m];
  }
}

// Row-combination kernels; restrict-qualified so every loop vectorizes.
template <class S>
void vertical(const S* __restrict r0, const S* __restrict r1, const S* __restrict r2, const S* __restrict r3,
              S* __restrict t0, S* __restrict t1, S* __restrict t2, S* __restrict t3, std::size_t n) {
  for (std::size_t f = 0; f < n; ++f) {
    t0[f] = r0[f] - r2[f];
    t1[f] = r1[f] + r2[f];
    t2[f] = r2[f] - r1[f];
    t3[f] = r1[f] - r3[f];
  }
  t0[n] = t1[n] = t2[n] = t3[n] = S(0);
}

template <class S>
void horizontal(const S* __restrict e, const S* __restrict o, S* __restrict v0, S* __restrict v1,
                S* __restrict v2, S* __restrict v3, std::size_t n) {
  for (std::size_t f = 0; f < n; ++f) {
    v0[f] = e[f] - e[f + 1];
    v1[f] = o[f] + e[f + 1];
    v2[f] = e[f + 1] - o[f];
    v3[f] = o[f] - o[f + 1];
  }
}

template <class S>
void horizontal_adjoint(const S* __restrict d0, const S* __restrict d1, const S* __restrict d2,
                        const S* __restrict d3, S* __restrict e, S* __restrict o, std::size_t n) {
  e[0] = S(0);
  o[0] = S(0);
  for (std::size_t f = 0; f < n; ++f) {
    e[f + 1] = -d0[f] + d1[f] + d2[f];
    o[f + 1] = -d3[f];
  }
  for (std::size_t f = 0; f < n; ++f) {
    e[f] += d0[f];
    o[f] += d1[f] - d2[f] + d3[f];
  }
}

template <class S>
void accumulate(S* __restrict dst, const S* __restrict a, S ka, const S* __restrict b, S kb, const S* __restrict c,
                S kc, const S* __restrict d, S kd, std::size_t n) {
  for (std::size_t f = 0; f < n; ++f) dst[f] += ka * a[f] + kb * b[f] + kc * c[f] + kd * d[f];
}

template <class S>
void sum_diff(const S* __restrict m0, const S* __restrict m1, const S* __restrict m2, const S* __restrict m3,
              S* __restrict s, S* __restrict d, std::size_t n) {
  for (std::size_t f = 0; f < n; ++f) {
    s[f] = m0[f] + m1[f] + m2[f];
    d[f] = m1[f] - m2[f] - m3[f];
  }
}

// Top and bottom output pixels from the row sums (or differences) a_i.
template <class S>
void output_pixels(const S* __restrict a0, const S* __restrict a1, const S* __restrict a2, const S* __restrict a3,
                   S* __restrict top, S* __restrict bottom, std::size_t n) {
  for (std::size_t f = 0; f < n; ++f) {
    top[f] = a0[f] + a1[f] + a2[f];
    bottom[f] = a1[f] - a2[f] - a3[f];
  }
}

template <class S>
void spread(const S* __restrict ya, S ka, const S* __restrict yb, S kb, const S* __restrict za, const S* __restrict zb,
            S* __restrict m0, S* __restrict m1, S* __restrict m2, S* __restrict m3, std::size_t n) {
  for (std::size_t f = 0; f < n; ++f) {
    const S ds = ka * ya[f] + kb * yb[f];
    const S dd = ka * za[f] + kb * zb[f];
    m0[f] = ds;
    m1[f] = ds + dd;
    m2[f] = ds - dd;
    m3[f] = -dd;
  }
}

}  // namespace detail

// v = B^T d B for every 4x4 input patch with origin (2ty - 1, 2tx - 1).
template <class S>
void transform_input(const S* planes, std::size_t plane_stride, int channels, const Tiling& tiling, TileRows rows,
                     S* v, Scratch<S>& scratch) {
  const std::size_t len = tiling.stride_x();
  const std::size_t flat = rows.count() * len;
  const std::size_t slot = static_cast<std::size_t>(channels) * flat;
  S* te[4] = {scratch.work(0), scratch.work(1), scratch.work(2), scratch.work(3)};
  S* to[4] = {scratch.work(4), scratch.work(5), scratch.work(6), scratch.work(7)};

  for (int c = 0; c < channels; ++c) {
    detail::load_padded(planes + static_cast<std::size_t>(c) * plane_stride, tiling, rows, scratch);
    for (int pc = 0; pc < 2; ++pc) {
      // Patch rows k = 0..3 of tile row ty are padded rows 2ty + k.
      const S* r0 = scratch.padded(0, pc) + rows.begin * len;
      const S* r1 = scratch.padded(1, pc) + rows.begin * len;
      S** t = pc == 0 ? te : to;
      detail::vertical(r0, r1, r0 + len, r1 + len, t[0], t[1], t[2], t[3], flat);
    }
    for (int i = 0; i < 4; ++i) {
      S* vi = v + 4 * i * slot + c * flat;
      detail::horizontal(te[i], to[i], vi, vi + slot, vi + 2 * slot, vi + 3 * slot, flat);
    }
  }
}

// Adds the adjoint of transform_input applied to dv into the planes. Padding
// tiles of dv must be zero.
template <class S>
void transform_input_adjoint(const S* dv, int channels, const Tiling& tiling, TileRows rows, S* planes,
                             std::size_t plane_stride, Scratch<S>& scratch) {
  const std::size_t len = tiling.stride_x();
  const std::size_t flat = rows.count() * len;
  const std::size_t slot = static_cast<std::size_t>(channels) * flat;
  S* de[4] = {scratch.work(0), scratch.work(1), scratch.work(2), scratch.work(3)};
  S* dod[4] = {scratch.work(4), scratch.work(5), scratch.work(6), scratch.work(7)};

  for (int c = 0; c < channels; ++c) {
    for (int i = 0; i < 4; ++i) {
      const S* di = dv + 4 * i * slot + c * flat;
      detail::horizontal_adjoint(di, di + slot, di + 2 * slot, di + 3 * slot, de[i], dod[i], flat);
    }
    detail::clear_padded(tiling, rows, scratch);
    for (int pc = 0; pc < 2; ++pc) {
      S* r0 = scratch.padded(0, pc) + rows.begin * len;
      S* r1 = scratch.padded(1, pc) + rows.begin * len;
      S** t = pc == 0 ? de : dod;
      // r0/r2 and r1/r3 overlap with a shift, so each target gets its own pass.
      detail::accumulate(r0, t[0], S(1), t[1], S(0), t[2], S(0), t[3], S(0), flat);
      detail::accumulate(r0 + len, t[0], S(-1), t[1], S(1), t[2], S(1), t[3], S(0), flat);
      detail::accumulate(r1, t[0], S(0), t[1], S(1), t[2], S(-1), t[3], S(1), flat);
      detail::accumulate(r1 + len, t[0], S(0), t[1], S(0), t[2], S(0), t[3], S(-1), flat);
    }
    detail::store_padded_add(planes + static_cast<std::size_t>(c) * plane_stride, tiling, rows, scratch);
  }
}

// Writes y = A^T m A for every tile into the planes (overwrites).
template <class S>
void transform_output(const S* m, int channels, const Tiling& tiling, TileRows rows, S* planes,
                      std::size_t plane_stride, Scratch<S>& scratch) {
  const std::size_t h = tiling.height;
  const std::size_t w = tiling.width;
  const std::size_t len = tiling.stride_x();
  const std::size_t flat = rows.count() * len;
  const std::size_t slot = static_cast<std::size_t>(channels) * flat;
  S* s[4] = {scratch.work(0), scratch.work(1), scratch.work(2), scratch.work(3)};
  S* d[4] = {scratch.work(4), scratch.work(5), scratch.work(6), scratch.work(7)};
  S* y[4] = {scratch.work(8), scratch.work(9), scratch.work(10), scratch.work(11)};

  for (int c = 0; c < channels; ++c) {
    for (int i = 0; i < 4; ++i) {
      const S* mi = m + 4 * i * slot + c * flat;
      detail::sum_diff(mi, mi + slot, mi + 2 * slot, mi + 3 * slot, s[i], d[i], flat);
    }
    detail::output_pixels(s[0], s[1], s[2], s[3], y[0], y[2], flat);
    detail::output_pixels(d[0], d[1], d[2], d[3], y[1], y[3], flat);
    S* plane = planes + static_cast<std::size_t>(c) * plane_stride;
    for (std::size_t ty = rows.begin; ty < rows.end; ++ty) {
      const std::size_t base = (ty - rows.begin) * len;
      for (std::size_t half = 0; half < 2 && 2 * ty + half < h; ++half) {
        S* row = plane + (2 * ty + half) * w;
        const S* even = y[2 * half] + base;
        const S* odd = y[2 * half + 1] + base;
        for (std::size_t tx = 0; 2 * tx < w; ++tx) row[2 * tx] = even[tx];
        for (std::size_t tx = 0; 2 * tx + 1 < w; ++tx) row[2 * tx + 1] = odd[tx];
      }
    }
  }
}

// dm = adjoint of transform_output applied to the plane gradients; padding
// tiles get zero.
template <class S>
void transform_output_adjoint(const S* planes, std::size_t plane_stride, int channels, const Tiling& tiling,
                              TileRows rows, S* dm, Scratch<S>& scratch) {
  const std::size_t h = tiling.height;
  const std::size_t w = tiling.width;
  const std::size_t len = tiling.stride_x();
  const std::size_t flat = rows.count() * len;
  const std::size_t slot = static_cast<std::size_t>(channels) * flat;
  S* y[4] = {scratch.work(0), scratch.work(1), scratch.work(2), scratch.work(3)};

  for (int c = 0; c < channels; ++c) {
    for (auto* p : y) std::fill(p, p + flat, S(0));
    const S* plane = planes + static_cast<std::size_t>(c) * plane_stride;
    for (std::size_t ty = rows.begin; ty < rows.end; ++ty) {
      const std::size_t base = (ty - rows.begin) * len;
      for (std::size_t half = 0; half < 2 && 2 * ty + half < h; ++half) {
        const S* row = plane + (2 * ty + half) * w;
        S* even = y[2 * half] + base;
        S* odd = y[2 * half + 1] + base;
        for (std::size_t tx = 0; 2 * tx < w; ++tx) even[tx] = row[2 * tx];
        for (std::size_t tx = 0; 2 * tx + 1 < w; ++tx) odd[tx] = row[2 * tx + 1];
      }
    }
    // Row i of the tile gradient: ds_i = top * y00 + bottom * y10 and dd_i
    // likewise from y01, y11.
    for (int i = 0; i < 4; ++i) {
      S* mi = dm + 4 * i * slot + c * flat;
      const S top = i < 3 ? S(1) : S(0);
      const S bottom = i == 0 ? S(0) : (i == 1 ? S(1) : S(-1));
      detail::spread(y[0], top, y[2], bottom, y[1], y[3], mi, mi + slot, mi + 2 * slot, mi + 3 * slot, flat);
    }
  }
}

}  // namespace usb::winograd
