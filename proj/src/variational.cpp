#include "cft/variational.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "cft/util.hpp"

namespace cft {

namespace {
constexpr int kD = 4;  // max fiber dimension
}

std::vector<double> dt_apply(const LorentzianLattice& lat, int ncomp, const std::vector<double>& u,
                             TimeMode mode) {
  const int nt = lat.n_t(), nx = lat.n_x();
  std::vector<double> out(u.size(), 0.0);
  const double dt = lat.dt();
  auto at = [&](int it, int ix, int c) -> double {
    if (it < 0 || it >= nt) return 0.0;
    return u[(static_cast<std::size_t>(it) * nx + ix) * ncomp + c];
  };
  for (int it = 0; it < nt; ++it)
    for (int ix = 0; ix < nx; ++ix)
      for (int c = 0; c < ncomp; ++c) {
        double v;
        if (mode == TimeMode::OneSided && it == 0)
          v = (at(1, ix, c) - at(0, ix, c)) / dt;
        else if (mode == TimeMode::OneSided && it == nt - 1)
          v = (at(nt - 1, ix, c) - at(nt - 2, ix, c)) / dt;
        else
          v = (at(it + 1, ix, c) - at(it - 1, ix, c)) / (2.0 * dt);
        out[(static_cast<std::size_t>(it) * nx + ix) * ncomp + c] = v;
      }
  return out;
}

std::vector<double> dt_transpose(const LorentzianLattice& lat, int ncomp,
                                 const std::vector<double>& w, TimeMode mode) {
  const int nt = lat.n_t(), nx = lat.n_x();
  const double dt = lat.dt();
  std::vector<double> out(w.size(), 0.0);
  auto wat = [&](int it, int ix, int c) -> double {
    return w[(static_cast<std::size_t>(it) * nx + ix) * ncomp + c];
  };
  auto add = [&](int it, int ix, int c, double v) {
    if (it < 0 || it >= nt) return;
    out[(static_cast<std::size_t>(it) * nx + ix) * ncomp + c] += v;
  };
  for (int it = 0; it < nt; ++it)
    for (int ix = 0; ix < nx; ++ix)
      for (int c = 0; c < ncomp; ++c) {
        const double v = wat(it, ix, c);
        if (v == 0.0) continue;
        if (mode == TimeMode::OneSided && it == 0) {
          add(1, ix, c, v / dt);
          add(0, ix, c, -v / dt);
        } else if (mode == TimeMode::OneSided && it == nt - 1) {
          add(nt - 1, ix, c, v / dt);
          add(nt - 2, ix, c, -v / dt);
        } else {
          add(it + 1, ix, c, v / (2.0 * dt));
          add(it - 1, ix, c, -v / (2.0 * dt));
        }
      }
  return out;
}

std::vector<double> dx_apply(const LorentzianLattice& lat, int ncomp,
                             const std::vector<double>& u) {
  const int nt = lat.n_t(), nx = lat.n_x();
  const double dx = lat.dx();
  std::vector<double> out(u.size(), 0.0);
  for (int it = 0; it < nt; ++it)
    for (int ix = 0; ix < nx; ++ix) {
      const int xp = (ix + 1) % nx, xm = (ix + nx - 1) % nx;
      for (int c = 0; c < ncomp; ++c)
        out[(static_cast<std::size_t>(it) * nx + ix) * ncomp + c] =
            (u[(static_cast<std::size_t>(it) * nx + xp) * ncomp + c] -
             u[(static_cast<std::size_t>(it) * nx + xm) * ncomp + c]) /
            (2.0 * dx);
    }
  return out;
}

std::vector<double> dx_transpose(const LorentzianLattice& lat, int ncomp,
                                 const std::vector<double>& w) {
  std::vector<double> out = dx_apply(lat, ncomp, w);
  for (auto& v : out) v = -v;
  return out;
}

JetField jets_of(const FieldConfig& phi, TimeMode mode) {
  JetField j;
  j.y = phi.values();
  j.yt = dt_apply(phi.lattice(), phi.dim(), phi.values(), mode);
  j.yx = dx_apply(phi.lattice(), phi.dim(), phi.values());
  return j;
}

double ELKernel::max_interior_abs() const {
  const int nx = lat->n_x(), n = tgt->dim();
  double m = 0.0;
  for (int it = interior_lo; it <= interior_hi; ++it)
    for (int ix = 0; ix < nx; ++ix)
      for (int c = 0; c < n; ++c)
        m = std::max(m, std::abs(comp[(static_cast<std::size_t>(it) * nx + ix) * n + c]));
  return m;
}

namespace {

struct SiteJet {
  double ymu[2 * kD];
  LagrangianDensity::Jet jet;
};

inline void load_jet(const JetField& jets, int n, std::size_t idx, SiteJet& sj) {
  for (int i = 0; i < n; ++i) {
    sj.ymu[i] = jets.yt[idx * n + i];
    sj.ymu[n + i] = jets.yx[idx * n + i];
  }
  sj.jet.y = jets.y.data() + idx * n;
  sj.jet.ymu = sj.ymu;
}

// Coordinate Hessian blocks of the density at the section's one-sided jets.
OperatorBlocks assemble_coordinate_blocks(const LorentzianLattice& lat,
                                          const LagrangianDensity& density,
                                          const JetField& jets) {
  const int n = density.components();
  const int M = 2 * n;
  OperatorBlocks B;
  B.n = n;
  const std::size_t N = lat.n_sites();
  B.a.assign(N * n * n, 0.0);
  B.b.assign(N * 2 * n * n, 0.0);
  B.c.assign(N * 2 * n * n, 0.0);
  B.m.assign(N * M * M, 0.0);
  parallel_for(N, [&](std::size_t idx) {
    SiteJet sj;
    load_jet(jets, n, idx, sj);
    double ayy[kD * kD], dmy[2 * kD * kD], dmm[4 * kD * kD];
    density.d2_yy(lat, idx, sj.jet, ayy);
    density.d2_ymu_y(lat, idx, sj.jet, dmy);
    density.d2_ymu_ymu(lat, idx, sj.jet, dmm);
    double* a = B.a.data() + idx * n * n;
    double* b = B.b.data() + idx * 2 * n * n;
    double* c = B.c.data() + idx * 2 * n * n;
    double* m = B.m.data() + idx * M * M;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) a[j * n + i] = ayy[j * n + i];
    for (int mu = 0; mu < 2; ++mu)
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          b[(mu * n + j) * n + i] = dmy[(mu * n + i) * n + j];  // d2 / dy^j dy^i_mu
          c[(mu * n + j) * n + i] = dmy[(mu * n + j) * n + i];  // d2 / dy^j_mu dy^i
        }
    std::memcpy(m, dmm, sizeof(double) * M * M);
  });
  return B;
}

}  // namespace

std::vector<double> blocks_apply(const LorentzianLattice& lat, const OperatorBlocks& blocks,
                                 const std::vector<double>& Y, TimeMode mode) {
  const int n = blocks.n;
  const int M = 2 * n;
  const std::size_t N = lat.n_sites();
  std::vector<double> JtY = dt_apply(lat, n, Y, mode);
  std::vector<double> JxY = dx_apply(lat, n, Y);
  std::vector<double> out(N * n, 0.0), Vt(N * n, 0.0), Vx(N * n, 0.0);

  const bool flux_mode = (mode == TimeMode::ZeroExt);
  parallel_for(N, [&](std::size_t idx) {
    const double vol = lat.vol_weight(idx);
    const double* a = blocks.a.data() + idx * n * n;
    const double* b = blocks.b.data() + idx * 2 * n * n;
    const double* c = blocks.c.data() + idx * 2 * n * n;
    const double* m = blocks.m.data() + idx * M * M;
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < n; ++i)
        s += a[j * n + i] * Y[idx * n + i] + b[(0 * n + j) * n + i] * JtY[idx * n + i] +
             b[(1 * n + j) * n + i] * JxY[idx * n + i];
      out[idx * n + j] = s;
      double vt = 0.0, vx = 0.0;
      for (int i = 0; i < n; ++i) {
        vt += c[(0 * n + j) * n + i] * Y[idx * n + i];
        vx += c[(1 * n + j) * n + i] * Y[idx * n + i];
        // mixed principal terms always go through the derivative pair
        vt += m[(0 * n + j) * M + (1 * n + i)] * JxY[idx * n + i];
        vx += m[(1 * n + j) * M + (0 * n + i)] * JtY[idx * n + i];
        if (!flux_mode) {
          vt += m[(0 * n + j) * M + (0 * n + i)] * JtY[idx * n + i];
          vx += m[(1 * n + j) * M + (1 * n + i)] * JxY[idx * n + i];
        }
      }
      Vt[idx * n + j] = vol * vt;
      Vx[idx * n + j] = vol * vx;
    }
  });

  std::vector<double> Tt = dt_transpose(lat, n, Vt, mode);
  std::vector<double> Tx = dx_transpose(lat, n, Vx);
  parallel_for(N, [&](std::size_t idx) {
    const double inv_vol = 1.0 / lat.vol_weight(idx);
    for (int j = 0; j < n; ++j)
      out[idx * n + j] += inv_vol * (Tt[idx * n + j] + Tx[idx * n + j]);
  });

  if (flux_mode) {
    // Compact conservative form of the diagonal principal blocks:
    // (PY)_j -= (1/vol) sum_mu [ Kbar_{+}(Y_{+}-Y) - Kbar_{-}(Y-Y_{-}) ] / h_mu^2
    // with K = vol * m^{mu mu}, edge coefficients averaged.
    const int nt = lat.n_t(), nx = lat.n_x();
    const double dt2 = lat.dt() * lat.dt(), dx2 = lat.dx() * lat.dx();
    auto K = [&](std::size_t idx, int mu, int j, int i) {
      return lat.vol_weight(idx) * blocks.m[idx * M * M + (mu * n + j) * M + (mu * n + i)];
    };
    parallel_for(N, [&](std::size_t idx) {
      const int it = static_cast<int>(idx) / nx;
      const int ix = static_cast<int>(idx) % nx;
      const double inv_vol = 1.0 / lat.vol_weight(idx);
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        // time direction, zero extension beyond the window
        for (int i = 0; i < n; ++i) {
          const double Yc = Y[idx * n + i];
          const double Yp = (it + 1 < nt) ? Y[(idx + nx) * n + i] : 0.0;
          const double Ym = (it > 0) ? Y[(idx - nx) * n + i] : 0.0;
          const double Kp =
              (it + 1 < nt) ? 0.5 * (K(idx, 0, j, i) + K(idx + nx, 0, j, i)) : K(idx, 0, j, i);
          const double Km =
              (it > 0) ? 0.5 * (K(idx, 0, j, i) + K(idx - nx, 0, j, i)) : K(idx, 0, j, i);
          acc += (Kp * (Yp - Yc) - Km * (Yc - Ym)) / dt2;
        }
        // space direction, periodic
        const std::size_t idxp = static_cast<std::size_t>(it) * nx + (ix + 1) % nx;
        const std::size_t idxm = static_cast<std::size_t>(it) * nx + (ix + nx - 1) % nx;
        for (int i = 0; i < n; ++i) {
          const double Kp = 0.5 * (K(idx, 1, j, i) + K(idxp, 1, j, i));
          const double Km = 0.5 * (K(idx, 1, j, i) + K(idxm, 1, j, i));
          acc += (Kp * (Y[idxp * n + i] - Y[idx * n + i]) -
                  Km * (Y[idx * n + i] - Y[idxm * n + i])) /
                 dx2;
        }
        out[idx * n + j] -= inv_vol * acc;
      }
    });
  }
  return out;
}

GeneralizedLagrangian::GeneralizedLagrangian(DensityPtr density) : density_(std::move(density)) {
  if (!density_) throw std::invalid_argument("null density");
  if (density_->order() > 1) throw std::invalid_argument("densities of jet order >= 2 rejected");
}

double GeneralizedLagrangian::evaluate_action(const std::vector<double>& cutoff,
                                              const FieldConfig& phi) const {
  const auto& lat = phi.lattice();
  if (cutoff.size() != lat.n_sites())
    throw std::invalid_argument("cutoff must be defined on all sites");
  const int n = density_->components();
  if (n != phi.dim()) throw std::invalid_argument("density/field component mismatch");
  JetField jets = jets_of(phi, TimeMode::OneSided);
  std::vector<double> dens(lat.n_sites());
  parallel_for(lat.n_sites(), [&](std::size_t idx) {
    SiteJet sj;
    load_jet(jets, n, idx, sj);
    dens[idx] = cutoff[idx] * density_->eval(lat, idx, sj.jet);
  });
  return lat.integrate(dens);
}

std::vector<double> GeneralizedLagrangian::first_variation_kernel(
    const FieldConfig& phi, const std::vector<double>& w) const {
  const auto& lat = phi.lattice();
  const int n = density_->components();
  JetField jets = jets_of(phi, TimeMode::OneSided);
  const std::size_t N = lat.n_sites();
  std::vector<double> out(N * n, 0.0), Wt(N * n), Wx(N * n);
  parallel_for(N, [&](std::size_t idx) {
    SiteJet sj;
    load_jet(jets, n, idx, sj);
    double dy[kD], dymu[2 * kD];
    density_->d_y(lat, idx, sj.jet, dy);
    density_->d_ymu(lat, idx, sj.jet, dymu);
    const double vol = lat.vol_weight(idx);
    for (int i = 0; i < n; ++i) {
      out[idx * n + i] = w[idx] * dy[i];
      Wt[idx * n + i] = vol * w[idx] * dymu[0 * n + i];
      Wx[idx * n + i] = vol * w[idx] * dymu[1 * n + i];
    }
  });
  std::vector<double> Tt = dt_transpose(lat, n, Wt, TimeMode::OneSided);
  std::vector<double> Tx = dx_transpose(lat, n, Wx);
  parallel_for(N, [&](std::size_t idx) {
    const double inv_vol = 1.0 / lat.vol_weight(idx);
    for (int i = 0; i < n; ++i) out[idx * n + i] += inv_vol * (Tt[idx * n + i] + Tx[idx * n + i]);
  });
  return out;
}

ELKernel GeneralizedLagrangian::el_kernel(const FieldConfig& phi) const {
  const auto& lat = phi.lattice();
  ELKernel E;
  E.lat = phi.lattice_ptr();
  E.tgt = phi.target_ptr();
  E.comp = first_variation_kernel(phi, std::vector<double>(lat.n_sites(), 1.0));
  E.interior_lo = 2;
  E.interior_hi = lat.n_t() - 3;
  return E;
}

std::vector<double> GeneralizedLagrangian::hessian_apply(const FieldConfig& phi,
                                                         const std::vector<double>& w,
                                                         const Variation& Y) const {
  const auto& lat = phi.lattice();
  const int n = density_->components();
  JetField jets = jets_of(phi, TimeMode::OneSided);
  OperatorBlocks B = assemble_coordinate_blocks(lat, *density_, jets);
  // fold the window into the blocks: form = sum vol w [ ... ]
  const int M = 2 * n;
  parallel_for(lat.n_sites(), [&](std::size_t idx) {
    for (int q = 0; q < n * n; ++q) B.a[idx * n * n + q] *= w[idx];
    for (int q = 0; q < 2 * n * n; ++q) {
      B.b[idx * 2 * n * n + q] *= w[idx];
      B.c[idx * 2 * n * n + q] *= w[idx];
    }
    for (int q = 0; q < M * M; ++q) B.m[idx * M * M + q] *= w[idx];
  });
  return blocks_apply(lat, B, Y.components(), TimeMode::OneSided);
}

double GeneralizedLagrangian::hessian_form(const FieldConfig& phi, const std::vector<double>& w,
                                           const Variation& X, const Variation& Y) const {
  const auto& lat = phi.lattice();
  const int n = density_->components();
  std::vector<double> PY = hessian_apply(phi, w, Y);
  std::vector<double> terms(lat.n_sites(), 0.0);
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += X.components()[idx * n + j] * PY[idx * n + j];
    terms[idx] = s * lat.vol_weight(idx);
  }
  return pairwise_sum(terms);
}

double GeneralizedLagrangian::chart_hessian_form(const FieldConfig& phi, const Variation& X,
                                                 const Variation& Y) const {
  const auto& lat = phi.lattice();
  const int n = density_->components();
  const std::vector<double> ones(lat.n_sites(), 1.0);
  double coord = hessian_form(phi, ones, X, Y);
  ELKernel E = el_kernel(phi);
  const auto& tgt = phi.target();
  std::vector<double> terms(lat.n_sites(), 0.0);
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx) {
    double G[kD * kD * kD];
    tgt.christoffel(phi.site_vec(idx), G);
    double s = 0.0;
    for (int m = 0; m < n; ++m)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k)
          s += E.comp[idx * n + m] * G[(m * n + j) * n + k] * X.components()[idx * n + j] *
               Y.components()[idx * n + k];
    terms[idx] = -s * lat.vol_weight(idx);
  }
  return coord + pairwise_sum(terms);
}

std::vector<double> GeneralizedLagrangian::delta_el_apply(const FieldConfig& phi,
                                                          const Variation& X) const {
  const std::vector<double> ones(phi.lattice().n_sites(), 1.0);
  return hessian_apply(phi, ones, X);
}

std::vector<double> GeneralizedLagrangian::third_variation_kernel(const FieldConfig& phi,
                                                                  const Variation& V,
                                                                  const Variation& W) const {
  if (!density_->has_third_partials()) throw std::runtime_error("missing third partials");
  const auto& lat = phi.lattice();
  const auto& tgt = phi.target();
  const int n = density_->components();
  const int M = 2 * n;
  const std::size_t N = lat.n_sites();
  JetField jets = jets_of(phi, TimeMode::OneSided);
  std::vector<double> JVt = dt_apply(lat, n, V.components(), TimeMode::OneSided);
  std::vector<double> JVx = dx_apply(lat, n, V.components());
  std::vector<double> JWt = dt_apply(lat, n, W.components(), TimeMode::OneSided);
  std::vector<double> JWx = dx_apply(lat, n, W.components());

  std::vector<double> tau(N * n, 0.0), Vec_t(N * n, 0.0), Vec_x(N * n, 0.0);

  parallel_for(N, [&](std::size_t idx) {
    SiteJet sj;
    load_jet(jets, n, idx, sj);
    double t3a[kD * kD * kD], t3b[2 * kD * kD * kD], t3c[4 * kD * kD * kD];
    density_->d3_yyy(lat, idx, sj.jet, t3a);
    density_->d3_ymu_yy(lat, idx, sj.jet, t3b);
    density_->d3_ymu_ymu_y(lat, idx, sj.jet, t3c);
    const double* v = V.site(idx);
    const double* w = W.site(idx);
    const double* jv[2] = {JVt.data() + idx * n, JVx.data() + idx * n};
    const double* jw[2] = {JWt.data() + idx * n, JWx.data() + idx * n};
    const double vol = lat.vol_weight(idx);
    for (int a = 0; a < n; ++a) {
      double u = 0.0;
      for (int b = 0; b < n; ++b)
        for (int c = 0; c < n; ++c) u += t3a[(a * n + b) * n + c] * v[b] * w[c];
      for (int rho = 0; rho < 2; ++rho)
        for (int b = 0; b < n; ++b)
          for (int c = 0; c < n; ++c)
            u += t3b[((rho * n + b) * n + a) * n + c] * (jv[rho][b] * w[c] + jw[rho][b] * v[c]);
      for (int rho = 0; rho < 2; ++rho)
        for (int sg = 0; sg < 2; ++sg)
          for (int b = 0; b < n; ++b)
            for (int c = 0; c < n; ++c)
              u += t3c[((rho * n + b) * M + (sg * n + c)) * n + a] * jv[rho][b] * jw[sg][c];
      tau[idx * n + a] = u;
      for (int mu = 0; mu < 2; ++mu) {
        double s = 0.0;
        for (int b = 0; b < n; ++b)
          for (int c = 0; c < n; ++c) s += t3b[((mu * n + a) * n + b) * n + c] * v[b] * w[c];
        for (int sg = 0; sg < 2; ++sg)
          for (int b = 0; b < n; ++b)
            for (int c = 0; c < n; ++c)
              s += t3c[((mu * n + a) * M + (sg * n + b)) * n + c] *
                   (jv[sg][b] * w[c] + jw[sg][b] * v[c]);
        (mu == 0 ? Vec_t : Vec_x)[idx * n + a] = vol * s;
      }
    }
  });

  std::vector<double> Tt = dt_transpose(lat, n, Vec_t, TimeMode::OneSided);
  std::vector<double> Tx = dx_transpose(lat, n, Vec_x);
  parallel_for(N, [&](std::size_t idx) {
    const double inv_vol = 1.0 / lat.vol_weight(idx);
    for (int a = 0; a < n; ++a) tau[idx * n + a] += inv_vol * (Tt[idx * n + a] + Tx[idx * n + a]);
  });

  if (!tgt.is_flat()) {
    // Connection corrections from the exp Taylor expansion: subtract
    // B(Gamma(Z,V),W) + B(Gamma(Z,W),V) + B(Gamma(V,W),Z), add E . e3(Z,V,W).
    PullbackConnection conn(phi);
    Variation GVW = conn.apply(V, W);
    const std::vector<double> ones(N, 1.0);
    std::vector<double> PV = hessian_apply(phi, ones, V);
    std::vector<double> PW = hessian_apply(phi, ones, W);
    std::vector<double> PGVW = hessian_apply(phi, ones, GVW);
    ELKernel E = el_kernel(phi);
    parallel_for(N, [&](std::size_t idx) {
      double G[kD * kD * kD], dG[kD * kD * kD * kD];
      tgt.christoffel(phi.site_vec(idx), G);
      tgt.dchristoffel(phi.site_vec(idx), dG);
      const double* v = V.site(idx);
      const double* w = W.site(idx);
      for (int a = 0; a < n; ++a) {
        double u = -PGVW[idx * n + a];
        for (int j = 0; j < n; ++j)
          for (int b = 0; b < n; ++b)
            u -= G[(j * n + a) * n + b] * (v[b] * PW[idx * n + j] + w[b] * PV[idx * n + j]);
        // e3-term coefficients of the free slot
        double e3 = 0.0;
        for (int m = 0; m < n; ++m) {
          double t = 0.0;
          for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) {
              t -= (1.0 / 3.0) * dG[((a * n + m) * n + j) * n + k] * v[j] * w[k];
              t -= (1.0 / 3.0) * dG[((j * n + m) * n + k) * n + a] * v[j] * w[k];
              t -= (1.0 / 3.0) * dG[((j * n + m) * n + a) * n + k] * w[j] * v[k];
            }
          for (int p = 0; p < n; ++p)
            for (int j = 0; j < n; ++j)
              for (int k = 0; k < n; ++k) {
                t += (2.0 / 3.0) * G[(m * n + p) * n + k] * G[(p * n + a) * n + j] * v[j] * w[k];
                t += (2.0 / 3.0) * G[(m * n + p) * n + a] * G[(p * n + j) * n + k] * v[j] * w[k];
                t += (2.0 / 3.0) * G[(m * n + p) * n + k] * G[(p * n + j) * n + a] * w[j] * v[k];
              }
          e3 += E.comp[idx * n + m] * t;
        }
        tau[idx * n + a] = u + e3 + tau[idx * n + a];
      }
    });
  }
  return tau;
}

LinearizedOperator GeneralizedLagrangian::linearize(const FieldConfig& phi,
                                                    FiberMetric fiber) const {
  return LinearizedOperator(*this, phi, fiber);
}

std::pair<double, double> GeneralizedLagrangian::directional_derivative_check(
    const std::vector<double>& cutoff, const FieldConfig& phi, const Variation& X) const {
  const auto& lat = phi.lattice();
  const int n = phi.dim();
  // cutoff must be exactly 1 within stencil reach (2 rows/columns) of supp(X)
  SiteSet supp = X.support();
  for (const SitePoint& p : supp.points())
    for (int dtr = -2; dtr <= 2; ++dtr)
      for (int dxr = -2; dxr <= 2; ++dxr) {
        const int it = p.it + dtr;
        if (it < 0 || it >= lat.n_t()) continue;
        if (cutoff[lat.index(it, lat.wrap_x(p.ix + dxr))] != 1.0)
          throw std::runtime_error("cutoff too small: not identically 1 near supp(X)");
      }
  ELKernel E = el_kernel(phi);
  std::vector<double> terms(lat.n_sites(), 0.0);
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += E.comp[idx * n + i] * X.components()[idx * n + i];
    terms[idx] = s * lat.vol_weight(idx);
  }
  const double analytic = pairwise_sum(terms);

  const double step = 1e-5 / (1.0 + X.max_abs());
  auto action_at = [&](double t) {
    return evaluate_action(cutoff, chart_backward(phi, X.scaled(t)));
  };
  auto central = [&](double t) { return (action_at(t) - action_at(-t)) / (2.0 * t); };
  const double d1 = central(step);
  const double d2 = central(0.5 * step);
  const double numeric = (4.0 * d2 - d1) / 3.0;
  return {analytic, numeric};
}

LinearizedOperator::LinearizedOperator(const GeneralizedLagrangian& gl, const FieldConfig& phi,
                                       FiberMetric fiber)
    : LinearizedOperator(gl, phi, fiber, OperatorBlocks{}) {}

LinearizedOperator::LinearizedOperator(const GeneralizedLagrangian& gl, const FieldConfig& phi,
                                       FiberMetric fiber, OperatorBlocks blocks)
    : gl_(gl),
      lat_(phi.lattice_ptr()),
      tgt_(phi.target_ptr()),
      base_(phi),
      fiber_(fiber),
      blocks_(std::move(blocks)),
      jets_(jets_of(phi, TimeMode::OneSided)) {
  const auto& lat = *lat_;
  const auto& density = gl.density();
  const int n = density.components();
  const bool assemble = blocks_.n == 0;
  if (assemble) blocks_ = assemble_coordinate_blocks(lat, density, jets_);

  // geodesic-chart correction of the zeroth-order block: a -= E_m {h}^m_ji
  if (assemble && !tgt_->is_flat()) {
    ELKernel E = gl.el_kernel(phi);
    parallel_for(lat.n_sites(), [&](std::size_t idx) {
      double G[kD * kD * kD];
      tgt_->christoffel(phi.site_vec(idx), G);
      double* a = blocks_.a.data() + idx * n * n;
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          double s = 0.0;
          for (int m = 0; m < n; ++m) s += E.comp[idx * n + m] * G[(m * n + j) * n + i];
          a[j * n + i] -= s;
        }
    });
  }

  hinv_.assign(lat.n_sites() * n * n, 0.0);
  hmat_.assign(lat.n_sites() * n * n, 0.0);
  parallel_for(lat.n_sites(), [&](std::size_t idx) {
    double* hi = hinv_.data() + idx * n * n;
    double* hm = hmat_.data() + idx * n * n;
    if (fiber_ == FiberMetric::Euclidean || tgt_->is_flat()) {
      for (int i = 0; i < n; ++i) {
        hi[i * n + i] = 1.0;
        hm[i * n + i] = 1.0;
      }
    } else {
      tgt_->metric(base_.site_vec(idx), hm);
      tgt_->metric_inverse(base_.site_vec(idx), hi);
    }
  });
}

Variation LinearizedOperator::apply(const Variation& X) const {
  const auto& lat = *lat_;
  const int n = blocks_.n;
  std::vector<double> P = blocks_apply(lat, blocks_, X.components(), TimeMode::ZeroExt);
  std::vector<double> out(P.size(), 0.0);
  parallel_for(lat.n_sites(), [&](std::size_t idx) {
    const double* hi = hinv_.data() + idx * n * n;
    for (int k = 0; k < n; ++k) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += hi[k * n + j] * P[idx * n + j];
      out[idx * n + k] = -s;
    }
  });
  return Variation(lat_, tgt_, std::move(out));
}

std::vector<double> LinearizedOperator::principal_symbol() const {
  const auto& lat = *lat_;
  const int n = blocks_.n;
  const int M = 2 * n;
  std::vector<double> sig(lat.n_sites() * 4 * n * n, 0.0);
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx) {
    const double* hi = hinv_.data() + idx * n * n;
    const double* m = blocks_.m.data() + idx * M * M;
    for (int mu = 0; mu < 2; ++mu)
      for (int nu = 0; nu < 2; ++nu)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int k = 0; k < n; ++k) s += hi[i * n + k] * m[(mu * n + k) * M + (nu * n + j)];
            sig[idx * 4 * n * n + (mu * 2 + nu) * n * n + i * n + j] = s;
          }
  }
  return sig;
}

LinearizedOperator::NHReport LinearizedOperator::is_normally_hyperbolic(double tol) const {
  const auto& lat = *lat_;
  const int n = blocks_.n;
  std::vector<double> sig = principal_symbol();
  NHReport rep;
  rep.site_factor.resize(lat.n_sites(), 0.0);
  rep.ok = true;
  double sum_c = 0.0;
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx) {
    const double gtt_inv = 1.0 / lat.g_tt(idx);
    const double gxx_inv = 1.0 / lat.g_xx(idx);
    const double c = sig[idx * 4 * n * n + (0 * 2 + 0) * n * n] / gtt_inv;
    rep.site_factor[idx] = c;
    sum_c += c;
    if (!(c > 0.0)) rep.ok = false;
    const double scale = std::max(1.0, std::abs(c));
    for (int mu = 0; mu < 2; ++mu)
      for (int nu = 0; nu < 2; ++nu) {
        const double gref = (mu != nu) ? 0.0 : (mu == 0 ? gtt_inv : gxx_inv);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const double want = c * gref * (i == j ? 1.0 : 0.0);
            const double dev =
                std::abs(sig[idx * 4 * n * n + (mu * 2 + nu) * n * n + i * n + j] - want);
            rep.max_deviation = std::max(rep.max_deviation, dev);
            if (dev > tol * scale) rep.ok = false;
          }
      }
  }
  rep.factor = sum_c / static_cast<double>(lat.n_sites());
  return rep;
}

double LinearizedOperator::pair_h(const Variation& X, const Variation& Y) const {
  const auto& lat = *lat_;
  const int n = blocks_.n;
  std::vector<double> terms(lat.n_sites(), 0.0);
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx) {
    const double* hm = hmat_.data() + idx * n * n;
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        s += hm[i * n + j] * X.components()[idx * n + i] * Y.components()[idx * n + j];
    terms[idx] = s * lat.vol_weight(idx);
  }
  return pairwise_sum(terms);
}

LinearizedOperator::Delta LinearizedOperator::directional_derivative(const Variation& X) const {
  const auto& density = gl_.density();
  if (!density.has_third_partials()) throw std::runtime_error("missing third partials");
  const auto& lat = *lat_;
  const int n = blocks_.n;
  const int M = 2 * n;
  const std::size_t N = lat.n_sites();

  std::vector<double> JXt = dt_apply(lat, n, X.components(), TimeMode::OneSided);
  std::vector<double> JXx = dx_apply(lat, n, X.components());

  Delta d;
  d.lat = lat_;
  d.tgt = tgt_;
  d.parent = this;
  d.dblocks.n = n;
  d.dblocks.a.assign(N * n * n, 0.0);
  d.dblocks.b.assign(N * 2 * n * n, 0.0);
  d.dblocks.c.assign(N * 2 * n * n, 0.0);
  d.dblocks.m.assign(N * M * M, 0.0);
  d.dhinv.assign(N * n * n, 0.0);

  parallel_for(N, [&](std::size_t idx) {
    SiteJet sj;
    load_jet(jets_, n, idx, sj);
    double t3a[kD * kD * kD], t3b[2 * kD * kD * kD], t3c[4 * kD * kD * kD], t3m[8 * kD * kD * kD];
    density.d3_yyy(lat, idx, sj.jet, t3a);
    density.d3_ymu_yy(lat, idx, sj.jet, t3b);
    density.d3_ymu_ymu_y(lat, idx, sj.jet, t3c);
    density.d3_ymu_ymu_ymu(lat, idx, sj.jet, t3m);
    const double* x = X.site(idx);
    const double* jx[2] = {JXt.data() + idx * n, JXx.data() + idx * n};
    double* da = d.dblocks.a.data() + idx * n * n;
    double* db = d.dblocks.b.data() + idx * 2 * n * n;
    double* dc = d.dblocks.c.data() + idx * 2 * n * n;
    double* dm = d.dblocks.m.data() + idx * M * M;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int k = 0; k < n; ++k) s += t3a[(j * n + i) * n + k] * x[k];
        for (int rho = 0; rho < 2; ++rho)
          for (int k = 0; k < n; ++k) s += t3b[((rho * n + k) * n + j) * n + i] * jx[rho][k];
        da[j * n + i] = s;
      }
    for (int mu = 0; mu < 2; ++mu)
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          double sb = 0.0, sc = 0.0;
          for (int k = 0; k < n; ++k) {
            sb += t3b[((mu * n + i) * n + j) * n + k] * x[k];
            sc += t3b[((mu * n + j) * n + i) * n + k] * x[k];
          }
          for (int rho = 0; rho < 2; ++rho)
            for (int k = 0; k < n; ++k) {
              sb += t3c[((mu * n + i) * M + (rho * n + k)) * n + j] * jx[rho][k];
              sc += t3c[((mu * n + j) * M + (rho * n + k)) * n + i] * jx[rho][k];
            }
          db[(mu * n + j) * n + i] = sb;
          dc[(mu * n + j) * n + i] = sc;
        }
    for (int mu = 0; mu < 2; ++mu)
      for (int nu = 0; nu < 2; ++nu)
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int k = 0; k < n; ++k)
              s += t3c[((mu * n + j) * M + (nu * n + i)) * n + k] * x[k];
            for (int rho = 0; rho < 2; ++rho)
              for (int k = 0; k < n; ++k)
                s += t3m[(((mu * n + j) * M + (nu * n + i)) * 2 + rho) * n + k] * jx[rho][k];
            dm[(mu * n + j) * M + (nu * n + i)] = s;
          }
  });

  if (!tgt_->is_flat()) {
    // d/dt of the chart correction -E_m {h}^m_ji and of h#.
    ELKernel E = gl_.el_kernel(base_);
    std::vector<double> dE = gl_.delta_el_apply(base_, X);
    parallel_for(N, [&](std::size_t idx) {
      double G[kD * kD * kD], dG[kD * kD * kD * kD], dh[kD * kD * kD];
      const Vec y = base_.site_vec(idx);
      tgt_->christoffel(y, G);
      tgt_->dchristoffel(y, dG);
      tgt_->dmetric(y, dh);
      const double* x = X.site(idx);
      double* da = d.dblocks.a.data() + idx * n * n;
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          double s = 0.0;
          for (int m = 0; m < n; ++m) {
            s += dE[idx * n + m] * G[(m * n + j) * n + i];
            double dGx = 0.0;
            for (int l = 0; l < n; ++l) dGx += dG[((l * n + m) * n + j) * n + i] * x[l];
            s += E.comp[idx * n + m] * dGx;
          }
          da[j * n + i] -= s;
        }
      if (fiber_ == FiberMetric::TargetMetric) {
        // d(h^-1) = -h^-1 (dh . X) h^-1
        const double* hi = hinv_.data() + idx * n * n;
        double dhx[kD * kD];
        for (int a2 = 0; a2 < n; ++a2)
          for (int b2 = 0; b2 < n; ++b2) {
            double s = 0.0;
            for (int k = 0; k < n; ++k) s += dh[(k * n + a2) * n + b2] * x[k];
            dhx[a2 * n + b2] = s;
          }
        double* dhi = d.dhinv.data() + idx * n * n;
        for (int a2 = 0; a2 < n; ++a2)
          for (int b2 = 0; b2 < n; ++b2) {
            double s = 0.0;
            for (int p = 0; p < n; ++p)
              for (int q = 0; q < n; ++q) s += hi[a2 * n + p] * dhx[p * n + q] * hi[q * n + b2];
            dhi[a2 * n + b2] = -s;
          }
      }
    });
  }
  return d;
}

Variation LinearizedOperator::Delta::apply(const Variation& Y) const {
  const auto& lattice = *lat;
  const int n = dblocks.n;
  std::vector<double> P = blocks_apply(lattice, parent->blocks_, Y.components(), TimeMode::ZeroExt);
  std::vector<double> dP = blocks_apply(lattice, dblocks, Y.components(), TimeMode::ZeroExt);
  std::vector<double> out(P.size(), 0.0);
  parallel_for(lattice.n_sites(), [&](std::size_t idx) {
    const double* hi = parent->hinv_.data() + idx * n * n;
    const double* dhi = dhinv.data() + idx * n * n;
    for (int k = 0; k < n; ++k) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += dhi[k * n + j] * P[idx * n + j] + hi[k * n + j] * dP[idx * n + j];
      out[idx * n + k] = -s;
    }
  });
  return Variation(lat, tgt, std::move(out));
}

}  // namespace cft
