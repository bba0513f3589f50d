#include "ono/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ono/errors.hpp"
#include "ono/rng.hpp"
#include "ono/serialize.hpp"

namespace ono::data {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

Mesh make_grid_1d(std::size_t nx) {
  Mesh mesh;
  const double h = 1.0 / static_cast<double>(nx - 1);
  mesh.points = DenseMatrix(nx, 1);
  for (std::size_t i = 0; i < nx; ++i) mesh.points(i, 0) = static_cast<double>(i) * h;
  mesh.grid = GridInfo{nx, 1, h};
  return mesh;
}

Mesh make_grid_2d(std::size_t n) {
  Mesh mesh;
  const double h = 1.0 / static_cast<double>(n - 1);
  mesh.points = DenseMatrix(n * n, 2);
  for (std::size_t iy = 0; iy < n; ++iy)
    for (std::size_t ix = 0; ix < n; ++ix) {
      const std::size_t r = iy * n + ix;
      mesh.points(r, 0) = static_cast<double>(ix) * h;
      mesh.points(r, 1) = static_cast<double>(iy) * h;
    }
  mesh.grid = GridInfo{n, n, h};
  return mesh;
}

/// Squared-exponential Gaussian random field by spectral synthesis on the
/// grid: sum over a truncated wavenumber lattice of Gaussian-weighted
/// cosine/sine modes, correlation length 0.1 of the unit domain.
std::vector<double> sample_grf(std::size_t n, Rng& rng) {
  const double corr = 0.1;
  const int q = 16;
  const double h = 1.0 / static_cast<double>(n - 1);

  // per-axis trig tables: cos/sin(2 pi m x_i) for m in [0, q]
  std::vector<double> cos_t((q + 1) * n), sin_t((q + 1) * n);
  for (int m = 0; m <= q; ++m)
    for (std::size_t i = 0; i < n; ++i) {
      const double a = kTwoPi * m * (static_cast<double>(i) * h);
      cos_t[m * n + i] = std::cos(a);
      sin_t[m * n + i] = std::sin(a);
    }

  std::vector<double> field(n * n, 0.0);
  for (int m1 = -q; m1 <= q; ++m1) {
    for (int m2 = -q; m2 <= q; ++m2) {
      const double k2 = kTwoPi * kTwoPi * (double(m1) * m1 + double(m2) * m2);
      const double amp = std::exp(-k2 * corr * corr / 4.0);
      if (amp < 1e-7) continue;
      const double xi = amp * rng.normal();
      const double eta = amp * rng.normal();
      const int am1 = std::abs(m1), am2 = std::abs(m2);
      const double s1sign = (m1 < 0) ? -1.0 : 1.0;
      const double s2sign = (m2 < 0) ? -1.0 : 1.0;
      for (std::size_t iy = 0; iy < n; ++iy) {
        const double c2 = cos_t[am2 * n + iy];
        const double s2 = s2sign * sin_t[am2 * n + iy];
        double* row = field.data() + iy * n;
        const double* c1p = cos_t.data() + am1 * n;
        const double* s1p = sin_t.data() + am1 * n;
        for (std::size_t ix = 0; ix < n; ++ix) {
          const double c1 = c1p[ix];
          const double s1 = s1sign * s1p[ix];
          const double cosk = c1 * c2 - s1 * s2;
          const double sink = s1 * c2 + c1 * s2;
          row[ix] += xi * cosk + eta * sink;
        }
      }
    }
  }
  return field;
}

struct DarcySystem {
  linalg::SparseSystem sys;
  std::vector<double> rhs;
  std::size_t n = 0;  // grid edge length

  static DarcySystem build(const std::vector<double>& a, std::size_t n) {
    DarcySystem out;
    out.n = n;
    const std::size_t m = n - 2;  // interior nodes per axis
    const double h = 1.0 / static_cast<double>(n - 1);
    const double inv_h2 = 1.0 / (h * h);
    out.sys.dimension = m * m;
    out.sys.spd = true;
    out.rhs.assign(m * m, 1.0);
    auto coeff = [&](std::size_t iy, std::size_t ix) { return a[iy * n + ix]; };
    for (std::size_t iy = 1; iy + 1 < n; ++iy) {
      for (std::size_t ix = 1; ix + 1 < n; ++ix) {
        const std::size_t r = (iy - 1) * m + (ix - 1);
        const double ae = 0.5 * (coeff(iy, ix) + coeff(iy, ix + 1));
        const double aw = 0.5 * (coeff(iy, ix) + coeff(iy, ix - 1));
        const double an = 0.5 * (coeff(iy, ix) + coeff(iy + 1, ix));
        const double as = 0.5 * (coeff(iy, ix) + coeff(iy - 1, ix));
        out.sys.entries.push_back({r, r, (ae + aw + an + as) * inv_h2});
        if (ix + 2 < n) out.sys.entries.push_back({r, r + 1, -ae * inv_h2});
        if (ix > 1) out.sys.entries.push_back({r, r - 1, -aw * inv_h2});
        if (iy + 2 < n) out.sys.entries.push_back({r, r + m, -an * inv_h2});
        if (iy > 1) out.sys.entries.push_back({r, r - m, -as * inv_h2});
      }
    }
    return out;
  }
};

}  // namespace

Dataset generate_darcy2d(std::size_t n, std::size_t resolution, std::uint64_t seed) {
  if (resolution < 8) throw ShapeMismatch("darcy2d needs resolution >= 8");
  const double solver_tol = 1e-10;
  Dataset ds;
  ds.mesh = make_grid_2d(resolution);
  ds.provenance = Provenance{"darcy2d-grf-se0.1-levels12-3", seed, solver_tol};
  Rng base(seed);
  const std::size_t res = resolution;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = base.stream(i);
    std::vector<double> field = sample_grf(res, rng);
    std::vector<double> sorted = field;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double median = sorted[sorted.size() / 2];
    std::vector<double> a(field.size());
    for (std::size_t j = 0; j < field.size(); ++j) a[j] = field[j] > median ? 12.0 : 3.0;

    DarcySystem fd = DarcySystem::build(a, res);
    std::vector<double> interior =
        linalg::conjugate_gradient(fd.sys, fd.rhs, solver_tol, 200000);

    DenseMatrix fv(res * res, 1), uv(res * res, 1);
    for (std::size_t j = 0; j < res * res; ++j) fv(j, 0) = a[j];
    const std::size_t m = res - 2;
    for (std::size_t iy = 1; iy + 1 < res; ++iy)
      for (std::size_t ix = 1; ix + 1 < res; ++ix)
        uv(iy * res + ix, 0) = interior[(iy - 1) * m + (ix - 1)];
    ds.f.push_back(std::move(fv));
    ds.u.push_back(std::move(uv));
  }
  return ds;
}

double darcy_residual(const FunctionPair& pair) {
  if (!pair.mesh.grid || pair.mesh.grid->ny < 3) throw NotAGrid("darcy_residual needs a 2-D grid");
  const std::size_t res = pair.mesh.grid->nx;
  std::vector<double> a(res * res);
  for (std::size_t j = 0; j < res * res; ++j) a[j] = pair.f_values(j, 0);
  DarcySystem fd = DarcySystem::build(a, res);
  const std::size_t m = res - 2;
  std::vector<double> interior(m * m);
  for (std::size_t iy = 1; iy + 1 < res; ++iy)
    for (std::size_t ix = 1; ix + 1 < res; ++ix)
      interior[(iy - 1) * m + (ix - 1)] = pair.u_values(iy * res + ix, 0);
  std::vector<double> au = fd.sys.apply(interior);
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < au.size(); ++j) {
    const double d = au[j] - fd.rhs[j];
    num += d * d;
    den += fd.rhs[j] * fd.rhs[j];
  }
  return std::sqrt(num / den);
}

Dataset generate_poisson1d(std::size_t n, std::size_t resolution, std::uint64_t seed) {
  if (resolution < 4) throw ShapeMismatch("poisson1d needs resolution >= 4");
  Dataset ds;
  ds.mesh = make_grid_1d(resolution);
  ds.provenance = Provenance{"poisson1d-sine4", seed, 0.0};
  Rng base(seed);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = base.stream(i);
    double c[4];
    for (double& v : c) v = rng.normal();
    DenseMatrix fv(resolution, 1), uv(resolution, 1);
    for (std::size_t j = 0; j < resolution; ++j) {
      const double x = ds.mesh.points(j, 0);
      double fsum = 0.0, usum = 0.0;
      for (int m = 1; m <= 4; ++m) {
        const double s = std::sin(m * kPi * x);
        fsum += c[m - 1] * s;
        usum += c[m - 1] * s / (m * kPi * m * kPi);
      }
      fv(j, 0) = fsum;
      uv(j, 0) = usum;
    }
    ds.f.push_back(std::move(fv));
    ds.u.push_back(std::move(uv));
  }
  return ds;
}

Mesh subsample_mesh(const Mesh& mesh, std::size_t factor) {
  if (!mesh.grid) throw NotAGrid("subsample requires grid metadata");
  if (factor == 0) throw IncompatibleFactor("factor must be positive");
  const GridInfo& g = *mesh.grid;
  if ((g.nx - 1) % factor != 0 || (g.ny > 1 && (g.ny - 1) % factor != 0))
    throw IncompatibleFactor("factor " + std::to_string(factor) + " does not divide grid " +
                             std::to_string(g.nx) + "x" + std::to_string(g.ny));
  const std::size_t nx2 = (g.nx - 1) / factor + 1;
  const std::size_t ny2 = g.ny > 1 ? (g.ny - 1) / factor + 1 : 1;
  Mesh out;
  out.points = DenseMatrix(nx2 * ny2, mesh.points.cols());
  for (std::size_t iy = 0; iy < ny2; ++iy)
    for (std::size_t ix = 0; ix < nx2; ++ix) {
      const std::size_t src = (iy * factor) * g.nx + ix * factor;
      const std::size_t dst = iy * nx2 + ix;
      for (std::size_t c = 0; c < mesh.points.cols(); ++c)
        out.points(dst, c) = mesh.points(src, c);
    }
  out.grid = GridInfo{nx2, ny2, g.spacing * static_cast<double>(factor)};
  return out;
}

FunctionPair subsample(const FunctionPair& pair, std::size_t factor) {
  Mesh mesh = subsample_mesh(pair.mesh, factor);
  const GridInfo& g = *pair.mesh.grid;
  const std::size_t nx2 = mesh.grid->nx, ny2 = mesh.grid->ny;
  DenseMatrix fv(mesh.size(), pair.f_values.cols());
  DenseMatrix uv(mesh.size(), pair.u_values.cols());
  for (std::size_t iy = 0; iy < ny2; ++iy)
    for (std::size_t ix = 0; ix < nx2; ++ix) {
      const std::size_t src = (iy * factor) * g.nx + ix * factor;
      const std::size_t dst = iy * nx2 + ix;
      for (std::size_t c = 0; c < fv.cols(); ++c) fv(dst, c) = pair.f_values(src, c);
      for (std::size_t c = 0; c < uv.cols(); ++c) uv(dst, c) = pair.u_values(src, c);
    }
  return {std::move(mesh), std::move(fv), std::move(uv)};
}

Dataset subsample(const Dataset& ds, std::size_t factor) {
  Dataset out;
  out.mesh = subsample_mesh(ds.mesh, factor);
  out.provenance = ds.provenance;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    FunctionPair p = subsample(ds.pair(i), factor);
    out.f.push_back(std::move(p.f_values));
    out.u.push_back(std::move(p.u_values));
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  io::Writer head;
  head.bytes("ONOD", 4);
  head.u32(1);  // version
  head.u32(static_cast<std::uint32_t>(ds.size()));
  head.u32(static_cast<std::uint32_t>(ds.mesh.size()));
  head.u32(static_cast<std::uint32_t>(ds.mesh.coord_dim()));
  head.u32(static_cast<std::uint32_t>(ds.in_channels()));
  head.u32(static_cast<std::uint32_t>(ds.out_channels()));
  head.u8(ds.mesh.grid ? 1 : 0);
  if (ds.mesh.grid) {
    head.u32(static_cast<std::uint32_t>(ds.mesh.grid->nx));
    head.u32(static_cast<std::uint32_t>(ds.mesh.grid->ny));
    head.f64(ds.mesh.grid->spacing);
  }

  io::Writer payload;
  for (double v : ds.mesh.points.data()) payload.f64(v);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.f[i].data()) payload.f64(v);
    for (double v : ds.u[i].data()) payload.f64(v);
  }

  io::Writer file;
  file.bytes(head.buffer().data(), head.size());
  file.bytes(payload.buffer().data(), payload.size());
  file.u32(io::crc32(payload.buffer().data(), payload.size()));
  io::write_file(path, file.buffer());
}

Dataset load_dataset(const std::string& path) {
  io::Reader r(io::read_file(path));
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "ONOD", 4) != 0) throw BadMagic("not a dataset file: " + path);
  const std::uint32_t version = r.u32();
  if (version != 1) throw VersionUnsupported("dataset version " + std::to_string(version));
  const std::uint32_t n = r.u32();
  const std::uint32_t m = r.u32();
  const std::uint32_t d0 = r.u32();
  const std::uint32_t df = r.u32();
  const std::uint32_t du = r.u32();
  const bool has_grid = r.u8() != 0;
  Dataset ds;
  if (has_grid) {
    GridInfo g;
    g.nx = r.u32();
    g.ny = r.u32();
    g.spacing = r.f64();
    ds.mesh.grid = g;
  }

  const std::size_t payload_start = r.position();
  const std::size_t payload_len =
      8ull * (std::size_t(m) * d0 + std::size_t(n) * m * (df + std::size_t(du)));
  if (r.remaining() < payload_len + 4) throw TruncatedFile("dataset payload incomplete");

  ds.mesh.points = DenseMatrix(m, d0);
  for (double& v : ds.mesh.points.data()) v = r.f64();
  for (std::uint32_t i = 0; i < n; ++i) {
    DenseMatrix fv(m, df), uv(m, du);
    for (double& v : fv.data()) v = r.f64();
    for (double& v : uv.data()) v = r.f64();
    ds.f.push_back(std::move(fv));
    ds.u.push_back(std::move(uv));
  }
  const std::uint32_t stored = r.u32();
  const std::uint32_t actual = io::crc32(r.buffer().data() + payload_start, payload_len);
  if (stored != actual) throw ChecksumMismatch("dataset payload CRC");
  return ds;
}

NormStats compute_norm_stats(const Dataset& ds, const std::vector<std::size_t>& indices) {
  NormStats stats;
  const std::size_t df = ds.in_channels(), du = ds.out_channels();
  stats.f_mean.assign(df, 0.0);
  stats.f_std.assign(df, 1.0);
  stats.u_mean.assign(du, 0.0);
  stats.u_std.assign(du, 1.0);
  if (indices.empty()) return stats;

  const double count = static_cast<double>(indices.size() * ds.mesh.size());
  auto accumulate = [&](const std::vector<DenseMatrix>& vals, std::vector<double>& mean,
                        std::vector<double>& std_dev, std::size_t channels) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t i : indices)
        for (std::size_t r = 0; r < vals[i].rows(); ++r) s += vals[i](r, c);
      mean[c] = s / count;
      double v = 0.0;
      for (std::size_t i : indices)
        for (std::size_t r = 0; r < vals[i].rows(); ++r) {
          const double d = vals[i](r, c) - mean[c];
          v += d * d;
        }
      std_dev[c] = std::max(std::sqrt(v / count), 1e-12);
    }
  };
  accumulate(ds.f, stats.f_mean, stats.f_std, df);
  accumulate(ds.u, stats.u_mean, stats.u_std, du);
  return stats;
}

Split split_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng = Rng(seed).stream("split");
  shuffle(idx, rng);
  Split split;
  const std::size_t n_train = (n * 8) / 10;
  const std::size_t n_val = n / 10;
  split.train.assign(idx.begin(), idx.begin() + n_train);
  split.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  split.test.assign(idx.begin() + n_train + n_val, idx.end());
  return split;
}

DenseMatrix interpolate_to_mesh(const Mesh& from, const DenseMatrix& values, const Mesh& to) {
  if (!from.grid) throw NotAGrid("interpolate_to_mesh needs source grid metadata");
  const GridInfo& g = *from.grid;
  const std::size_t channels = values.cols();
  DenseMatrix out(to.size(), channels);

  if (g.ny == 1) {
    for (std::size_t r = 0; r < to.size(); ++r) {
      const double t = to.points(r, 0) / g.spacing;
      std::size_t i0 = static_cast<std::size_t>(std::max(0.0, std::floor(t)));
      i0 = std::min(i0, g.nx - 2);
      const double w = std::min(std::max(t - static_cast<double>(i0), 0.0), 1.0);
      for (std::size_t c = 0; c < channels; ++c)
        out(r, c) = (1.0 - w) * values(i0, c) + w * values(i0 + 1, c);
    }
    return out;
  }

  for (std::size_t r = 0; r < to.size(); ++r) {
    const double tx = to.points(r, 0) / g.spacing;
    const double ty = to.points(r, 1) / g.spacing;
    std::size_t ix = static_cast<std::size_t>(std::max(0.0, std::floor(tx)));
    std::size_t iy = static_cast<std::size_t>(std::max(0.0, std::floor(ty)));
    ix = std::min(ix, g.nx - 2);
    iy = std::min(iy, g.ny - 2);
    const double wx = std::min(std::max(tx - static_cast<double>(ix), 0.0), 1.0);
    const double wy = std::min(std::max(ty - static_cast<double>(iy), 0.0), 1.0);
    const std::size_t i00 = iy * g.nx + ix;
    const std::size_t i01 = i00 + 1;
    const std::size_t i10 = i00 + g.nx;
    const std::size_t i11 = i10 + 1;
    for (std::size_t c = 0; c < channels; ++c) {
      const double v0 = (1.0 - wx) * values(i00, c) + wx * values(i01, c);
      const double v1 = (1.0 - wx) * values(i10, c) + wx * values(i11, c);
      out(r, c) = (1.0 - wy) * v0 + wy * v1;
    }
  }
  return out;
}

}  // namespace ono::data
