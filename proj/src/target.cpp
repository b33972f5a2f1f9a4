#include "cft/target.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "cft/util.hpp"

namespace cft {

namespace {

constexpr int kMaxDim = 4;

bool all_finite(const double* y, int n) {
  for (int i = 0; i < n; ++i)
    if (!std::isfinite(y[i])) return false;
  return true;
}

}  // namespace

std::shared_ptr<const TargetGeometry> TargetGeometry::flat(int n) {
  if (n <= 0 || n > kMaxDim) throw std::invalid_argument("flat target dimension out of range");
  auto tg = std::shared_ptr<TargetGeometry>(new TargetGeometry());
  tg->dim_ = n;
  tg->flat_ = true;
  tg->name_ = "flat(" + std::to_string(n) + ")";
  tg->safe_step_ = 1e30;
  tg->chart_domain_ = [n](const Vec& y) { return all_finite(y.data(), n); };
  tg->metric_ = [n](const Vec&, double* h) {
    std::memset(h, 0, sizeof(double) * n * n);
    for (int i = 0; i < n; ++i) h[i * n + i] = 1.0;
  };
  tg->dmetric_ = [n](const Vec&, double* dh) { std::memset(dh, 0, sizeof(double) * n * n * n); };
  tg->d2metric_ = [n](const Vec&, double* o) { std::memset(o, 0, sizeof(double) * n * n * n * n); };
  tg->d3metric_ = [n](const Vec&, double* o) {
    std::memset(o, 0, sizeof(double) * n * n * n * n * n);
  };
  tg->christoffel_ = [n](const Vec&, double* G) { std::memset(G, 0, sizeof(double) * n * n * n); };
  tg->dchristoffel_ = [n](const Vec&, double* o) {
    std::memset(o, 0, sizeof(double) * n * n * n * n);
  };
  tg->riemann_ = [n](const Vec&, double* R) { std::memset(R, 0, sizeof(double) * n * n * n * n); };
  return tg;
}

std::shared_ptr<const TargetGeometry> TargetGeometry::sphere2_stereographic() {
  // Unit round sphere; h_ij = rho delta_ij with rho = 4/(1+|y|^2)^2.
  // With w_k = -2 y_k/(1+|y|^2):  {h}^i_jk = d^i_j w_k + d^i_k w_j - d_jk w^i,
  // and constant curvature K = 1 gives R^k_ilj = d^k_l h_ij - d^k_j h_il.
  auto tg = std::shared_ptr<TargetGeometry>(new TargetGeometry());
  const int n = 2;
  tg->dim_ = n;
  tg->flat_ = false;
  tg->name_ = "sphere2_stereographic";
  tg->safe_step_ = 1.5707963267948966;  // quarter great circle
  // the chart misses one point (at infinity); coordinates this large sit in
  // its numerically unusable neighborhood
  tg->chart_domain_ = [](const Vec& y) {
    return all_finite(y.data(), 2) && y[0] * y[0] + y[1] * y[1] < 1e12;
  };

  auto rho_of = [](const Vec& y) {
    const double s = y[0] * y[0] + y[1] * y[1];
    return 4.0 / ((1.0 + s) * (1.0 + s));
  };
  auto w_of = [](const Vec& y, double* w) {
    const double s = y[0] * y[0] + y[1] * y[1];
    w[0] = -2.0 * y[0] / (1.0 + s);
    w[1] = -2.0 * y[1] / (1.0 + s);
  };
  auto dw_of = [](const Vec& y, double* dw) {
    // dw[l*2+k] = d_l w_k
    const double s = y[0] * y[0] + y[1] * y[1];
    const double a = 1.0 + s;
    for (int l = 0; l < 2; ++l)
      for (int k = 0; k < 2; ++k)
        dw[l * 2 + k] = -2.0 * (l == k ? 1.0 : 0.0) / a + 4.0 * y[k] * y[l] / (a * a);
  };
  auto d2w_of = [](const Vec& y, double* d2w) {
    // d2w[(m*2+l)*2+k] = d_m d_l w_k
    const double s = y[0] * y[0] + y[1] * y[1];
    const double a = 1.0 + s;
    for (int m = 0; m < 2; ++m)
      for (int l = 0; l < 2; ++l)
        for (int k = 0; k < 2; ++k) {
          double v = 4.0 * (l == k ? 1.0 : 0.0) * y[m] / (a * a);
          v += 4.0 * ((k == m ? 1.0 : 0.0) * y[l] + (l == m ? 1.0 : 0.0) * y[k]) / (a * a);
          v -= 16.0 * y[k] * y[l] * y[m] / (a * a * a);
          d2w[(m * 2 + l) * 2 + k] = v;
        }
  };

  tg->metric_ = [rho_of](const Vec& y, double* h) {
    const double r = rho_of(y);
    h[0] = r;
    h[1] = 0.0;
    h[2] = 0.0;
    h[3] = r;
  };
  tg->dmetric_ = [rho_of, w_of](const Vec& y, double* dh) {
    // d_k h_ij = 2 rho w_k delta_ij
    const double r = rho_of(y);
    double w[2];
    w_of(y, w);
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          dh[(k * 2 + i) * 2 + j] = (i == j) ? 2.0 * r * w[k] : 0.0;
  };
  tg->d2metric_ = [rho_of, w_of, dw_of](const Vec& y, double* d2h) {
    // d_l d_k h_ij = 2 rho (2 w_l w_k + d_l w_k) delta_ij
    const double r = rho_of(y);
    double w[2], dw[4];
    w_of(y, w);
    dw_of(y, dw);
    for (int l = 0; l < 2; ++l)
      for (int k = 0; k < 2; ++k) {
        const double c = 2.0 * r * (2.0 * w[l] * w[k] + dw[l * 2 + k]);
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j)
            d2h[((l * 2 + k) * 2 + i) * 2 + j] = (i == j) ? c : 0.0;
      }
  };
  tg->d3metric_ = [rho_of, w_of, dw_of, d2w_of](const Vec& y, double* d3h) {
    // d_m of 2 rho (2 w_l w_k + d_l w_k); d_m rho = 2 rho w_m
    const double r = rho_of(y);
    double w[2], dw[4], d2w[8];
    w_of(y, w);
    dw_of(y, dw);
    d2w_of(y, d2w);
    for (int m = 0; m < 2; ++m)
      for (int l = 0; l < 2; ++l)
        for (int k = 0; k < 2; ++k) {
          double c = 2.0 * w[m] * 2.0 * r * (2.0 * w[l] * w[k] + dw[l * 2 + k]);
          c += 2.0 * r *
               (2.0 * dw[m * 2 + l] * w[k] + 2.0 * w[l] * dw[m * 2 + k] + d2w[(m * 2 + l) * 2 + k]);
          for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
              d3h[(((m * 2 + l) * 2 + k) * 2 + i) * 2 + j] = (i == j) ? c : 0.0;
        }
  };
  tg->christoffel_ = [w_of](const Vec& y, double* G) {
    double w[2];
    w_of(y, w);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) {
          double v = 0.0;
          if (i == j) v += w[k];
          if (i == k) v += w[j];
          if (j == k) v -= w[i];
          G[(i * 2 + j) * 2 + k] = v;
        }
  };
  tg->dchristoffel_ = [dw_of](const Vec& y, double* dG) {
    double dw[4];
    dw_of(y, dw);
    for (int l = 0; l < 2; ++l)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          for (int k = 0; k < 2; ++k) {
            double v = 0.0;
            if (i == j) v += dw[l * 2 + k];
            if (i == k) v += dw[l * 2 + j];
            if (j == k) v -= dw[l * 2 + i];
            dG[((l * 2 + i) * 2 + j) * 2 + k] = v;
          }
  };
  tg->riemann_ = [rho_of](const Vec& y, double* R) {
    const double r = rho_of(y);
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < 2; ++i)
        for (int l = 0; l < 2; ++l)
          for (int j = 0; j < 2; ++j) {
            const double h_ij = (i == j) ? r : 0.0;
            const double h_il = (i == l) ? r : 0.0;
            R[((k * 2 + i) * 2 + l) * 2 + j] =
                (k == l ? h_ij : 0.0) - (k == j ? h_il : 0.0);
          }
  };
  return tg;
}

std::shared_ptr<const TargetGeometry> TargetGeometry::builtin(const std::string& name) {
  if (name == "sphere2_stereographic") return sphere2_stereographic();
  if (name.rfind("flat(", 0) == 0 && name.back() == ')') {
    const int n = std::stoi(name.substr(5, name.size() - 6));
    return flat(n);
  }
  throw std::runtime_error("unknown target geometry: " + name);
}

bool TargetGeometry::in_chart(const Vec& y) const {
  if (static_cast<int>(y.size()) != dim_) return false;
  return chart_domain_(y);
}

void TargetGeometry::metric_inverse(const Vec& y, double* hinv) const {
  const int n = dim_;
  double h[kMaxDim * kMaxDim];
  metric(y, h);
  if (n == 1) {
    hinv[0] = 1.0 / h[0];
    return;
  }
  if (n == 2) {
    const double det = h[0] * h[3] - h[1] * h[2];
    hinv[0] = h[3] / det;
    hinv[1] = -h[1] / det;
    hinv[2] = -h[2] / det;
    hinv[3] = h[0] / det;
    return;
  }
  // generic small inverse via column solves
  std::vector<double> A(n * n), b(n);
  for (int col = 0; col < n; ++col) {
    std::copy(h, h + n * n, A.begin());
    std::fill(b.begin(), b.end(), 0.0);
    b[col] = 1.0;
    solve_small(n, A.data(), b.data());
    for (int r = 0; r < n; ++r) hinv[r * n + col] = b[r];
  }
}

double TargetGeometry::h_norm(const Vec& y, const Vec& v) const {
  const int n = dim_;
  double h[kMaxDim * kMaxDim];
  metric(y, h);
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s += h[i * n + j] * v[i] * v[j];
  return std::sqrt(s);
}

void TargetGeometry::geodesic_rhs(const double* y, const double* u, double* dy, double* du) const {
  const int n = dim_;
  Vec yv(y, y + n);
  double G[kMaxDim * kMaxDim * kMaxDim];
  christoffel_(yv, G);
  for (int i = 0; i < n; ++i) {
    dy[i] = u[i];
    double s = 0.0;
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) s += G[(i * n + j) * n + k] * u[j] * u[k];
    du[i] = -s;
  }
}

Vec TargetGeometry::exp_map(const Vec& base, const Vec& v, int steps) const {
  const int n = dim_;
  if (!in_chart(base)) throw std::runtime_error("chart overflow: base point outside chart");
  if (flat_) {
    Vec out(base);
    for (int i = 0; i < n; ++i) out[i] += v[i];
    return out;
  }
  if (steps <= 0) steps = geodesic_steps_;
  double y[kMaxDim], u[kMaxDim];
  for (int i = 0; i < n; ++i) {
    y[i] = base[i];
    u[i] = v[i];
  }
  const double hstep = 1.0 / steps;
  double k1y[kMaxDim], k1u[kMaxDim], k2y[kMaxDim], k2u[kMaxDim], k3y[kMaxDim], k3u[kMaxDim],
      k4y[kMaxDim], k4u[kMaxDim], ty[kMaxDim], tu[kMaxDim];
  for (int s = 0; s < steps; ++s) {
    geodesic_rhs(y, u, k1y, k1u);
    for (int i = 0; i < n; ++i) {
      ty[i] = y[i] + 0.5 * hstep * k1y[i];
      tu[i] = u[i] + 0.5 * hstep * k1u[i];
    }
    geodesic_rhs(ty, tu, k2y, k2u);
    for (int i = 0; i < n; ++i) {
      ty[i] = y[i] + 0.5 * hstep * k2y[i];
      tu[i] = u[i] + 0.5 * hstep * k2u[i];
    }
    geodesic_rhs(ty, tu, k3y, k3u);
    for (int i = 0; i < n; ++i) {
      ty[i] = y[i] + hstep * k3y[i];
      tu[i] = u[i] + hstep * k3u[i];
    }
    geodesic_rhs(ty, tu, k4y, k4u);
    for (int i = 0; i < n; ++i) {
      y[i] += hstep / 6.0 * (k1y[i] + 2.0 * k2y[i] + 2.0 * k3y[i] + k4y[i]);
      u[i] += hstep / 6.0 * (k1u[i] + 2.0 * k2u[i] + 2.0 * k3u[i] + k4u[i]);
    }
    Vec probe(y, y + n);
    if (!all_finite(y, n) || !chart_domain_(probe))
      throw std::runtime_error("chart overflow: geodesic left the chart domain");
  }
  return Vec(y, y + n);
}

Vec TargetGeometry::exp_map_dv(const Vec& base, const Vec& v, const Vec& dir) const {
  const int n = dim_;
  if (flat_) return dir;
  double scale = 0.0;
  for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(v[i]));
  const double eps = 1e-6 * (1.0 + scale);
  Vec vp(v), vm(v);
  for (int i = 0; i < n; ++i) {
    vp[i] += eps * dir[i];
    vm[i] -= eps * dir[i];
  }
  Vec yp = exp_map(base, vp);
  Vec ym = exp_map(base, vm);
  Vec out(n);
  for (int i = 0; i < n; ++i) out[i] = (yp[i] - ym[i]) / (2.0 * eps);
  return out;
}

Vec TargetGeometry::exp_inverse(const Vec& base, const Vec& target, double tol) const {
  const int n = dim_;
  if (base == target) return Vec(n, 0.0);
  if (flat_) {
    Vec out(n);
    for (int i = 0; i < n; ++i) out[i] = target[i] - base[i];
    return out;
  }
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = target[i] - base[i];

  auto residual = [&](const Vec& vv, Vec& r) {
    Vec e = exp_map(base, vv);
    double norm = 0.0;
    for (int i = 0; i < n; ++i) {
      r[i] = e[i] - target[i];
      norm = std::max(norm, std::abs(r[i]));
    }
    return norm;
  };

  Vec r(n), rtrial(n), vtrial(n);
  double rn = residual(v, r);
  for (int iter = 0; iter < 60; ++iter) {
    if (rn < tol) return v;
    // finite-difference Jacobian of exp_map in v
    double vscale = 0.0;
    for (int i = 0; i < n; ++i) vscale = std::max(vscale, std::abs(v[i]));
    const double eps = 1e-7 * (1.0 + vscale);
    std::vector<double> J(n * n);
    Vec vp(v), vm(v);
    for (int c = 0; c < n; ++c) {
      vp[c] += eps;
      vm[c] -= eps;
      Vec ep = exp_map(base, vp);
      Vec em = exp_map(base, vm);
      for (int rrow = 0; rrow < n; ++rrow) J[rrow * n + c] = (ep[rrow] - em[rrow]) / (2.0 * eps);
      vp[c] = v[c];
      vm[c] = v[c];
    }
    Vec step(r);
    solve_small(n, J.data(), step.data());
    double damp = 1.0;
    bool accepted = false;
    for (int k = 0; k < 12; ++k) {
      for (int i = 0; i < n; ++i) vtrial[i] = v[i] - damp * step[i];
      double rtn;
      try {
        rtn = residual(vtrial, rtrial);
      } catch (const std::runtime_error&) {
        damp *= 0.5;
        continue;
      }
      if (rtn < rn) {
        v = vtrial;
        r = rtrial;
        rn = rtn;
        accepted = true;
        break;
      }
      damp *= 0.5;
    }
    if (!accepted && rn >= tol) break;
  }
  if (rn < tol) return v;
  throw std::runtime_error("outside injectivity radius: exp_inverse did not converge");
}

}  // namespace cft
