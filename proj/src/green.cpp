#include "cft/green.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "cft/util.hpp"

namespace cft {

namespace {
constexpr int kD = 4;
}

GreenOperator::GreenOperator(const LinearizedOperator& op, GreenKind kind)
    : op_(&op), kind_(kind) {
  const auto& lat = op.lattice();
  nt_ = lat.n_t();
  nx_ = lat.n_x();
  n_ = op.dim();

  auto nh = op.is_normally_hyperbolic(1e-9);
  if (!nh.ok) throw std::runtime_error("operator not normally hyperbolic");
  if (lat.dt() / lat.dx() > lat.cfl_limit() * (1.0 + 1e-12))
    throw std::runtime_error("unstable discretization");

  const auto& blocks = op.blocks();
  const int n = n_;
  const int M = 2 * n;
  // mixed principal blocks would couple next-row unknowns across columns
  double mixed = 0.0, scale = 0.0;
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        mixed = std::max(mixed, std::abs(blocks.m[idx * M * M + (0 * n + j) * M + (1 * n + i)]));
        scale = std::max(scale, std::abs(blocks.m[idx * M * M + (0 * n + j) * M + (0 * n + i)]));
      }
  if (mixed > 1e-11 * std::max(1.0, scale))
    throw std::runtime_error("unstable discretization: mixed principal term in time marching");

  time_sign_ = nh.factor * (1.0 / lat.g_tt(0)) < 0.0 ? -1.0 : 1.0;

  // Precompute per-site inverses of the next-row coefficient matrix.
  // Forward (row-t equation, unknown u(t+1)):
  //   M_ji = b^t_ji/(2 dt) - vol_{t+1} c^t_ji(t+1)/(2 dt vol_t)
  //          - Kbar_{t+1/2,ji}/(dt^2 vol_t),  K = vol m^{tt}.
  const double dt = lat.dt();
  auto Ktt = [&](std::size_t idx, int j, int i) {
    return lat.vol_weight(idx) * blocks.m[idx * M * M + (0 * n + j) * M + (0 * n + i)];
  };
  minv_fwd_.assign(lat.n_sites() * n * n, 0.0);
  minv_bwd_.assign(lat.n_sites() * n * n, 0.0);
  std::vector<double> Mco(n * n), rhs(n);
  for (int it = 0; it < nt_; ++it)
    for (int ix = 0; ix < nx_; ++ix) {
      const std::size_t idx = lat.index(it, ix);
      const double vol = lat.vol_weight(idx);
      if (it + 1 < nt_) {
        const std::size_t up = lat.index(it + 1, ix);
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < n; ++i) {
            const double kbar = 0.5 * (Ktt(idx, j, i) + Ktt(up, j, i));
            Mco[j * n + i] = blocks.b[idx * 2 * n * n + (0 * n + j) * n + i] / (2.0 * dt) -
                             lat.vol_weight(up) * blocks.c[up * 2 * n * n + (0 * n + j) * n + i] /
                                 (2.0 * dt * vol) -
                             kbar / (dt * dt * vol);
          }
        // invert by solving against unit vectors
        for (int col = 0; col < n; ++col) {
          std::vector<double> A(Mco);
          std::fill(rhs.begin(), rhs.end(), 0.0);
          rhs[col] = 1.0;
          solve_small(n, A.data(), rhs.data());
          for (int r = 0; r < n; ++r) minv_fwd_[idx * n * n + r * n + col] = rhs[r];
        }
      }
      if (it > 0) {
        const std::size_t dn = lat.index(it - 1, ix);
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < n; ++i) {
            const double kbar = 0.5 * (Ktt(idx, j, i) + Ktt(dn, j, i));
            Mco[j * n + i] = -blocks.b[idx * 2 * n * n + (0 * n + j) * n + i] / (2.0 * dt) +
                             lat.vol_weight(dn) * blocks.c[dn * 2 * n * n + (0 * n + j) * n + i] /
                                 (2.0 * dt * vol) -
                             kbar / (dt * dt * vol);
          }
        for (int col = 0; col < n; ++col) {
          std::vector<double> A(Mco);
          std::fill(rhs.begin(), rhs.end(), 0.0);
          rhs[col] = 1.0;
          solve_small(n, A.data(), rhs.data());
          for (int r = 0; r < n; ++r) minv_bwd_[idx * n * n + r * n + col] = rhs[r];
        }
      }
    }
}

// (P u)_j at one site for the ZeroExt discretization, matching blocks_apply.
// Out-of-window rows are zero; mixed principal blocks are known to vanish.
namespace {

struct RowContext {
  const LorentzianLattice* lat;
  const OperatorBlocks* blocks;
  int n;
};

double p_entry(const RowContext& ctx, const std::vector<double>& u, int it, int ix, int j) {
  const auto& lat = *ctx.lat;
  const auto& B = *ctx.blocks;
  const int n = ctx.n;
  const int M = 2 * n;
  const int nt = lat.n_t(), nx = lat.n_x();
  const double dt = lat.dt(), dx = lat.dx();
  const std::size_t idx = lat.index(it, ix);
  const double vol = lat.vol_weight(idx);

  auto uval = [&](int t, int x, int i) -> double {
    if (t < 0 || t >= nt) return 0.0;
    return u[(lat.index(t, (x % nx + nx) % nx)) * n + i];
  };
  auto Ktt = [&](int t, int x, int jj, int ii) {
    const std::size_t q = lat.index(t, (x % nx + nx) % nx);
    return lat.vol_weight(q) * B.m[q * M * M + (0 * n + jj) * M + (0 * n + ii)];
  };
  auto Kxx = [&](int t, int x, int jj, int ii) {
    const std::size_t q = lat.index(t, (x % nx + nx) % nx);
    return lat.vol_weight(q) * B.m[q * M * M + (1 * n + jj) * M + (1 * n + ii)];
  };
  auto cW = [&](int mu, int t, int x, int jj) -> double {
    if (t < 0 || t >= nt) return 0.0;
    const std::size_t q = lat.index(t, (x % nx + nx) % nx);
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      s += B.c[q * 2 * n * n + (mu * n + jj) * n + i] * u[q * n + i];
    return lat.vol_weight(q) * s;
  };

  double out = 0.0;
  for (int i = 0; i < n; ++i) {
    out += B.a[idx * n * n + j * n + i] * u[idx * n + i];
    out += B.b[idx * 2 * n * n + (0 * n + j) * n + i] *
           (uval(it + 1, ix, i) - uval(it - 1, ix, i)) / (2.0 * dt);
    out += B.b[idx * 2 * n * n + (1 * n + j) * n + i] *
           (uval(it, ix + 1, i) - uval(it, ix - 1, i)) / (2.0 * dx);
  }
  out -= (cW(0, it + 1, ix, j) - cW(0, it - 1, ix, j)) / (2.0 * dt * vol);
  out -= (cW(1, it, ix + 1, j) - cW(1, it, ix - 1, j)) / (2.0 * dx * vol);

  // compact flux form for the diagonal principal blocks
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double yc = uval(it, ix, i);
    const double yp = uval(it + 1, ix, i);
    const double ym = uval(it - 1, ix, i);
    const double kp =
        (it + 1 < nt) ? 0.5 * (Ktt(it, ix, j, i) + Ktt(it + 1, ix, j, i)) : Ktt(it, ix, j, i);
    const double km = (it > 0) ? 0.5 * (Ktt(it, ix, j, i) + Ktt(it - 1, ix, j, i)) : Ktt(it, ix, j, i);
    acc += (kp * (yp - yc) - km * (yc - ym)) / (dt * dt);
    const double xp = uval(it, ix + 1, i);
    const double xm = uval(it, ix - 1, i);
    const double kxp = 0.5 * (Kxx(it, ix, j, i) + Kxx(it, ix + 1, j, i));
    const double kxm = 0.5 * (Kxx(it, ix, j, i) + Kxx(it, ix - 1, j, i));
    acc += (kxp * (xp - yc) - kxm * (yc - xm)) / (dx * dx);
  }
  out -= acc / vol;
  return out;
}

}  // namespace

std::vector<double> GreenOperator::march(const std::vector<double>& rhs, bool forward) const {
  const auto& lat = op_->lattice();
  const int n = n_;
  std::vector<double> u(lat.n_sites() * n, 0.0);
  RowContext ctx{&lat, &op_->blocks(), n};
  std::vector<double> known(nx_ * n), sol(n);

  if (forward) {
    for (int it = 0; it + 1 < nt_; ++it) {
      // rows <= it are final, row it+1 is still zero
      parallel_for(static_cast<std::size_t>(nx_), [&](std::size_t sx) {
        const int ix = static_cast<int>(sx);
        for (int j = 0; j < n; ++j) known[sx * n + j] = p_entry(ctx, u, it, ix, j);
      });
      for (int ix = 0; ix < nx_; ++ix) {
        const std::size_t idx = lat.index(it, ix);
        bool trivial = true;
        for (int j = 0; j < n; ++j) {
          sol[j] = rhs[idx * n + j] - known[ix * n + j];
          if (sol[j] != 0.0) trivial = false;
        }
        if (trivial) continue;  // exact zero propagates outside the cone
        const double* Mi = minv_fwd_.data() + idx * n * n;
        const std::size_t up = lat.index(it + 1, ix);
        for (int r = 0; r < n; ++r) {
          double s = 0.0;
          for (int c2 = 0; c2 < n; ++c2) s += Mi[r * n + c2] * sol[c2];
          u[up * n + r] = s;
        }
      }
    }
  } else {
    for (int it = nt_ - 1; it > 0; --it) {
      parallel_for(static_cast<std::size_t>(nx_), [&](std::size_t sx) {
        const int ix = static_cast<int>(sx);
        for (int j = 0; j < n; ++j) known[sx * n + j] = p_entry(ctx, u, it, ix, j);
      });
      for (int ix = 0; ix < nx_; ++ix) {
        const std::size_t idx = lat.index(it, ix);
        bool trivial = true;
        for (int j = 0; j < n; ++j) {
          sol[j] = rhs[idx * n + j] - known[ix * n + j];
          if (sol[j] != 0.0) trivial = false;
        }
        if (trivial) continue;
        const double* Mi = minv_bwd_.data() + idx * n * n;
        const std::size_t dn = lat.index(it - 1, ix);
        for (int r = 0; r < n; ++r) {
          double s = 0.0;
          for (int c2 = 0; c2 < n; ++c2) s += Mi[r * n + c2] * sol[c2];
          u[dn * n + r] = s;
        }
      }
    }
  }
  return u;
}

std::vector<double> GreenOperator::solve_vector(const std::vector<double>& v) const {
  // D u = v  <=>  P u = -h_flat v
  const auto& lat = op_->lattice();
  const int n = n_;
  std::vector<double> rhs(v.size(), 0.0);
  const auto& hm = op_->hmat();
  parallel_for(lat.n_sites(), [&](std::size_t idx) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += hm[idx * n * n + j * n + k] * v[idx * n + k];
      rhs[idx * n + j] = -s;
    }
  });
  if (kind_ == GreenKind::Retarded) return march(rhs, true);
  if (kind_ == GreenKind::Advanced) return march(rhs, false);
  std::vector<double> ret = march(rhs, true);
  std::vector<double> adv = march(rhs, false);
  for (std::size_t i = 0; i < ret.size(); ++i) ret[i] -= adv[i];
  return ret;
}

Variation GreenOperator::apply_vector(const Variation& v) const {
  return Variation(op_->lattice_ptr(), op_->target_ptr(), solve_vector(v.components()));
}

Variation GreenOperator::apply_covector(const std::vector<double>& s) const {
  // density-weighted source: raise the index and strip the volume factor
  const auto& lat = op_->lattice();
  const int n = n_;
  std::vector<double> v(s.size(), 0.0);
  const auto& hi = op_->hinv();
  parallel_for(lat.n_sites(), [&](std::size_t idx) {
    const double inv_vol = 1.0 / lat.vol_weight(idx);
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += hi[idx * n * n + i * n + j] * s[idx * n + j];
      v[idx * n + i] = acc * inv_vol;
    }
  });
  return Variation(op_->lattice_ptr(), op_->target_ptr(), solve_vector(v));
}

std::vector<double> GreenOperator::dense_kernel(std::size_t max_sites) const {
  const auto& lat = op_->lattice();
  if (lat.n_sites() > max_sites)
    throw std::runtime_error("dense assembly refused: lattice exceeds the size gate");
  const int n = n_;
  const std::size_t N = lat.n_sites() * n;
  std::vector<double> K(N * N, 0.0);
  parallel_for(lat.n_sites(), [&](std::size_t q) {
    for (int j = 0; j < n; ++j) {
      std::vector<double> e(lat.n_sites() * n, 0.0);
      e[q * n + j] = 1.0;
      Variation col = apply_covector(e);
      const double inv_volq = 1.0 / lat.vol_weight(q);
      for (std::size_t p = 0; p < lat.n_sites(); ++p)
        for (int i = 0; i < n; ++i)
          K[(p * n + i) * N + (q * n + j)] = col.components()[p * n + i] * inv_volq;
    }
  });
  return K;
}

Variation propagator_derivative_apply(const GreenOperator& retarded, const GreenOperator& advanced,
                                      const LinearizedOperator::Delta& dop, GreenKind kind,
                                      const Variation& source) {
  switch (kind) {
    case GreenKind::Retarded: {
      Variation g = retarded.apply_vector(source);
      return retarded.apply_vector(dop.apply(g)).scaled(-1.0);
    }
    case GreenKind::Advanced: {
      Variation g = advanced.apply_vector(source);
      return advanced.apply_vector(dop.apply(g)).scaled(-1.0);
    }
    case GreenKind::Causal:
    default: {
      // -G D'(X) G+  -  G- D'(X) G
      Variation gp = retarded.apply_vector(source);
      Variation gm = advanced.apply_vector(source);
      Variation g = gp.plus(gm.scaled(-1.0));
      Variation t1r = retarded.apply_vector(dop.apply(gp));
      Variation t1a = advanced.apply_vector(dop.apply(gp));
      Variation t1 = t1r.plus(t1a.scaled(-1.0));
      Variation t2 = advanced.apply_vector(dop.apply(g));
      return t1.plus(t2).scaled(-1.0);
    }
  }
}

}  // namespace cft
