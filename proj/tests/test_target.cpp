#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cft/target.hpp"
#include "cft/util.hpp"

using namespace cft;

namespace {

// finite-difference Riemann from the Christoffel oracle:
// R^k_ilj = d_l G^k_ij - d_j G^k_il + G^k_lm G^m_ij - G^k_jm G^m_il
void fd_riemann(const TargetGeometry& tg, const Vec& y, double* R) {
  const int n = tg.dim();
  const double eps = 1e-6;
  std::vector<double> Gp(n * n * n), Gm(n * n * n), G0(n * n * n);
  std::vector<double> dG(n * n * n * n);
  for (int l = 0; l < n; ++l) {
    Vec yp(y), ym(y);
    yp[l] += eps;
    ym[l] -= eps;
    tg.christoffel(yp, Gp.data());
    tg.christoffel(ym, Gm.data());
    for (int q = 0; q < n * n * n; ++q) dG[l * n * n * n + q] = (Gp[q] - Gm[q]) / (2 * eps);
  }
  tg.christoffel(y, G0.data());
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int l = 0; l < n; ++l)
        for (int j = 0; j < n; ++j) {
          double v = dG[l * n * n * n + (k * n + i) * n + j] - dG[j * n * n * n + (k * n + i) * n + l];
          for (int m = 0; m < n; ++m)
            v += G0[(k * n + l) * n + m] * G0[(m * n + i) * n + j] -
                 G0[(k * n + j) * n + m] * G0[(m * n + i) * n + l];
          R[((k * n + i) * n + l) * n + j] = v;
        }
}

}  // namespace

TEST_CASE("flat target is Euclidean") {
  auto tg = TargetGeometry::flat(1);
  double h[1], G[1], R[1];
  tg->metric({0.4}, h);
  tg->christoffel({0.4}, G);
  tg->riemann({0.4}, R);
  CHECK(h[0] == 1.0);
  CHECK(G[0] == 0.0);
  CHECK(R[0] == 0.0);
  Vec e = tg->exp_map({0.3}, {0.5});
  CHECK(e[0] == doctest::Approx(0.8).epsilon(1e-15));
  Vec v = tg->exp_inverse({0.3}, {0.8});
  CHECK(v[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("stereographic sphere at the origin") {
  auto tg = TargetGeometry::sphere2_stereographic();
  double h[4], G[8];
  tg->metric({0.0, 0.0}, h);
  CHECK(h[0] == doctest::Approx(4.0));
  CHECK(h[3] == doctest::Approx(4.0));
  CHECK(h[1] == 0.0);
  tg->christoffel({0.0, 0.0}, G);
  for (int q = 0; q < 8; ++q) CHECK(G[q] == doctest::Approx(0.0));
}

TEST_CASE("analytic curvature data matches finite differences") {
  auto tg = TargetGeometry::sphere2_stereographic();
  CounterRng rng(5);
  for (int rep = 0; rep < 6; ++rep) {
    Vec y = {rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)};
    double Ra[16], Rf[16];
    tg->riemann(y, Ra);
    fd_riemann(*tg, y, Rf);
    for (int q = 0; q < 16; ++q)
      CHECK(Ra[q] == doctest::Approx(Rf[q]).epsilon(5e-5).scale(4.0));

    // sectional curvature equals 1
    double h[4];
    tg->metric(y, h);
    const double det = h[0] * h[3] - h[1] * h[2];
    // <R(e1,e2)e2, e1> = h_1k R^k_212
    double num = 0.0;
    for (int k = 0; k < 2; ++k) num += h[0 * 2 + k] * Rf[((k * 2 + 1) * 2 + 0) * 2 + 1];
    CHECK(num / det == doctest::Approx(1.0).epsilon(1e-4));

    // metric compatibility d_k h_ij = {h}^l_ki h_lj + {h}^l_kj h_il
    double dh[8], G[8];
    tg->dmetric(y, dh);
    tg->christoffel(y, G);
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          double rhs = 0.0;
          for (int l = 0; l < 2; ++l)
            rhs += G[(l * 2 + k) * 2 + i] * h[l * 2 + j] + G[(l * 2 + k) * 2 + j] * h[i * 2 + l];
          CHECK(dh[(k * 2 + i) * 2 + j] == doctest::Approx(rhs).epsilon(1e-10).scale(1.0));
        }
  }
}

TEST_CASE("metric derivative oracles match finite differences") {
  auto tg = TargetGeometry::sphere2_stereographic();
  CounterRng rng(17);
  const double eps = 1e-5;
  for (int rep = 0; rep < 4; ++rep) {
    Vec y = {rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7)};
    double dh[8], d2h[16], d3h[32];
    tg->dmetric(y, dh);
    tg->d2metric(y, d2h);
    tg->d3metric(y, d3h);
    for (int k = 0; k < 2; ++k) {
      Vec yp(y), ym(y);
      yp[k] += eps;
      ym[k] -= eps;
      double hp[4], hm[4], dhp[8], dhm[8], d2hp[16], d2hm[16];
      tg->metric(yp, hp);
      tg->metric(ym, hm);
      tg->dmetric(yp, dhp);
      tg->dmetric(ym, dhm);
      tg->d2metric(yp, d2hp);
      tg->d2metric(ym, d2hm);
      for (int q = 0; q < 4; ++q)
        CHECK(dh[k * 4 + q] ==
              doctest::Approx((hp[q] - hm[q]) / (2 * eps)).epsilon(1e-6).scale(1.0));
      for (int q = 0; q < 8; ++q)
        CHECK(d2h[k * 8 + q] ==
              doctest::Approx((dhp[q] - dhm[q]) / (2 * eps)).epsilon(1e-6).scale(1.0));
      for (int q = 0; q < 16; ++q)
        CHECK(d3h[k * 16 + q] ==
              doctest::Approx((d2hp[q] - d2hm[q]) / (2 * eps)).epsilon(1e-5).scale(10.0));
      // dchristoffel against christoffel differences
      double dG[16], Gp[8], Gm[8];
      tg->dchristoffel(y, dG);
      tg->christoffel(yp, Gp);
      tg->christoffel(ym, Gm);
      for (int q = 0; q < 8; ++q)
        CHECK(dG[k * 8 + q] ==
              doctest::Approx((Gp[q] - Gm[q]) / (2 * eps)).epsilon(1e-6).scale(1.0));
    }
  }
}

TEST_CASE("radial geodesics through the origin have the closed form") {
  auto tg = TargetGeometry::sphere2_stereographic();
  // |v|_h = t at the origin means |v| = t/2; endpoint tan(t/2) along v
  for (double t : {0.3, 0.8, 1.4}) {
    Vec e = tg->exp_map({0.0, 0.0}, {0.5 * t, 0.0});
    CHECK(e[0] == doctest::Approx(std::tan(0.5 * t)).epsilon(1e-7));
    CHECK(e[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  }
  // exp(y, 0) = y exactly
  Vec y0 = {0.2, -0.4};
  Vec e0 = tg->exp_map(y0, {0.0, 0.0});
  CHECK(e0[0] == y0[0]);
  CHECK(e0[1] == y0[1]);
}

TEST_CASE("exp_inverse round trips and radial inversion") {
  auto tg = TargetGeometry::sphere2_stereographic();
  CounterRng rng(23);
  for (int rep = 0; rep < 8; ++rep) {
    Vec base = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    Vec v = {rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)};
    Vec target = tg->exp_map(base, v);
    Vec w = tg->exp_inverse(base, target, 1e-13);
    CHECK(w[0] == doctest::Approx(v[0]).epsilon(1e-9).scale(1.0));
    CHECK(w[1] == doctest::Approx(v[1]).epsilon(1e-9).scale(1.0));
  }
  // base == target gives exactly zero
  Vec z = tg->exp_inverse({0.3, 0.1}, {0.3, 0.1});
  CHECK(z[0] == 0.0);
  CHECK(z[1] == 0.0);
  // radial inversion: target (1,0) from the origin is a quarter circle
  Vec v = tg->exp_inverse({0.0, 0.0}, {1.0, 0.0}, 1e-13);
  CHECK(2.0 * v[0] == doctest::Approx(1.5707963267948966).epsilon(1e-7));  // h-norm pi/2
  CHECK(v[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("geodesic energy is conserved along exp_map") {
  auto tg = TargetGeometry::sphere2_stereographic();
  CounterRng rng(31);
  for (int rep = 0; rep < 5; ++rep) {
    Vec base = {rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)};
    Vec v = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    const double e0 = tg->h_norm(base, v);
    for (double t : {0.25, 0.5, 0.75}) {
      Vec vt(v);
      for (auto& c : vt) c *= t;
      Vec mid = tg->exp_map(base, vt);
      // the remaining geodesic distance must be (1-t) of the budget
      Vec rest = tg->exp_inverse(mid, tg->exp_map(base, v), 1e-13);
      const double e_rest = tg->h_norm(mid, rest);
      CHECK(e_rest == doctest::Approx((1.0 - t) * e0).epsilon(1e-8));
    }
  }
}

TEST_CASE("reparametrized segments agree with a finer integration") {
  auto tg = TargetGeometry::sphere2_stereographic();
  Vec base = {0.15, -0.2};
  Vec v = {0.6, 0.3};
  for (double t : {0.2, 0.5, 0.9}) {
    Vec vt(v);
    for (auto& c : vt) c *= t;
    Vec a = tg->exp_map(base, vt);
    Vec b = tg->exp_map(base, vt, 256);
    CHECK(a[0] == doctest::Approx(b[0]).epsilon(1e-9));
    CHECK(a[1] == doctest::Approx(b[1]).epsilon(1e-9));
  }
}

TEST_CASE("chart overflow is reported") {
  auto tg = TargetGeometry::sphere2_stereographic();
  // a geodesic through the missed point blows up in chart coordinates
  CHECK_THROWS_WITH_AS(tg->exp_map({0.0, 0.0}, {400.0, 0.0}, 8),
                       doctest::Contains("chart overflow"), std::runtime_error);
  CHECK_THROWS_AS(tg->exp_inverse({0.0, 0.0}, {5000.0, 0.0}, 1e-13), std::runtime_error);
  CHECK_THROWS_WITH_AS(TargetGeometry::builtin("torus"), doctest::Contains("unknown target"),
                       std::runtime_error);
}
