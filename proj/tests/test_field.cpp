#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cft/field.hpp"
#include "cft/util.hpp"

using namespace cft;

namespace {

Variation bump(LatticePtr lat, TargetPtr tgt, int t0, int x0, int rt, int rx, double amp,
               int comp = 0) {
  const int n = tgt->dim();
  std::vector<double> c(lat->n_sites() * n, 0.0);
  for (int it = 0; it < lat->n_t(); ++it)
    for (int ix = 0; ix < lat->n_x(); ++ix) {
      const double ut = static_cast<double>(it - t0) / rt;
      const double ux = static_cast<double>(lat->cyclic_distance(ix, x0)) / rx;
      if (std::abs(ut) < 1.0 && std::abs(ux) < 1.0) {
        const double ct = std::cos(1.5707963267948966 * ut);
        const double cx = std::cos(1.5707963267948966 * ux);
        c[lat->index(it, ix) * n + comp] = amp * ct * ct * cx * cx;
      }
    }
  return Variation(lat, tgt, std::move(c));
}

Variation random_var(LatticePtr lat, TargetPtr tgt, CounterRng rng, double amp) {
  const int n = tgt->dim();
  std::vector<double> c(lat->n_sites() * n);
  for (auto& v : c) v = amp * (rng.uniform() - 0.5);
  return Variation(lat, tgt, std::move(c));
}

}  // namespace

TEST_CASE("chart maps on a flat target are affine") {
  auto lat = LorentzianLattice::minkowski(8, 8, 0.1, 0.1);
  auto tgt = TargetGeometry::flat(2);
  FieldConfig phi = FieldConfig::constant(lat, tgt, {0.3, -0.1});
  CounterRng rng(3);
  Variation X = random_var(lat, tgt, rng, 0.7);
  FieldConfig psi = chart_backward(phi, X);
  for (std::size_t idx = 0; idx < lat->n_sites(); ++idx)
    for (int i = 0; i < 2; ++i)
      CHECK(psi.site(idx)[i] == doctest::Approx(phi.site(idx)[i] + X.site(idx)[i]).epsilon(1e-15));
  Variation back = chart_forward(phi, psi);
  for (std::size_t q = 0; q < back.components().size(); ++q)
    CHECK(back.components()[q] == doctest::Approx(X.components()[q]).epsilon(1e-14).scale(1.0));
}

TEST_CASE("chart round trip on the sphere") {
  auto lat = LorentzianLattice::minkowski(8, 6, 0.1, 0.1);
  auto tgt = TargetGeometry::sphere2_stereographic();
  FieldConfig phi = FieldConfig::constant(lat, tgt, {0.1, 0.07});
  CounterRng rng(9);
  Variation X = random_var(lat, tgt, rng, 0.3);
  FieldConfig psi = chart_backward(phi, X);
  FieldConfig back = chart_backward(phi, chart_forward(phi, psi));
  for (std::size_t q = 0; q < psi.values().size(); ++q)
    CHECK(back.values()[q] == doctest::Approx(psi.values()[q]).epsilon(1e-10).scale(1.0));

  // chart_forward is exactly zero where the sections agree
  Variation z = chart_forward(phi, phi);
  CHECK(z.support().empty());
  // chart_backward with zero variation returns phi bitwise
  FieldConfig same = chart_backward(phi, Variation::zero(lat, tgt));
  for (std::size_t q = 0; q < phi.values().size(); ++q)
    CHECK(same.values()[q] == phi.values()[q]);
}

TEST_CASE("relative support is the exact nonequal set") {
  auto lat = LorentzianLattice::minkowski(6, 6, 0.1, 0.1);
  auto tgt = TargetGeometry::flat(1);
  FieldConfig phi = FieldConfig::constant(lat, tgt, {0.0});
  CHECK(relative_support(phi, phi).empty());

  std::vector<double> vals(phi.values());
  vals[lat->index(3, 2)] = 0.5;
  FieldConfig psi(lat, tgt, vals);
  SiteSet s = relative_support(phi, psi);
  CHECK(s.size() == 1);
  CHECK(s.contains({3, 2}));
  SiteSet s2 = relative_support(psi, phi);
  CHECK(s2.size() == 1);
  CHECK(s2.contains({3, 2}));
}

TEST_CASE("chart_backward support equals the variation support") {
  auto lat = LorentzianLattice::minkowski(10, 8, 0.1, 0.1);
  auto tgt = TargetGeometry::sphere2_stereographic();
  FieldConfig phi = FieldConfig::constant(lat, tgt, {0.05, 0.0});
  Variation X = bump(lat, tgt, 4, 3, 2, 2, 0.2);
  FieldConfig psi = chart_backward(phi, X);
  SiteSet rs = relative_support(phi, psi);
  SiteSet xs = X.support();
  CHECK(rs.size() == xs.size());
  for (SitePoint p : xs.points()) CHECK(rs.contains(p));
}

TEST_CASE("transition maps compose to the identity and are nonlinear") {
  auto lat = LorentzianLattice::minkowski(8, 6, 0.1, 0.1);
  auto tgt = TargetGeometry::sphere2_stereographic();
  FieldConfig phi1 = FieldConfig::constant(lat, tgt, {0.12, -0.02});
  CounterRng rng(21);
  FieldConfig phi2 = chart_backward(phi1, random_var(lat, tgt, rng.fork(0), 0.2));
  Variation X = random_var(lat, tgt, rng.fork(1), 0.25);

  Variation same = transition_map(phi1, phi1, X);
  for (std::size_t q = 0; q < X.components().size(); ++q)
    CHECK(same.components()[q] == doctest::Approx(X.components()[q]).epsilon(1e-10).scale(1.0));

  Variation there = transition_map(phi1, phi2, X);
  Variation back = transition_map(phi2, phi1, there);
  for (std::size_t q = 0; q < X.components().size(); ++q)
    CHECK(back.components()[q] == doctest::Approx(X.components()[q]).epsilon(1e-9).scale(1.0));

  // nonlinearity witness: u(t X) != t u(X) beyond 1e-6
  Variation half = transition_map(phi1, phi2, X.scaled(0.5));
  double dev = 0.0;
  for (std::size_t q = 0; q < X.components().size(); ++q)
    dev = std::max(dev, std::abs(half.components()[q] - 0.5 * there.components()[q]));
  CHECK(dev > 1e-6);

  // on a flat target the transition is exactly affine
  auto flat = TargetGeometry::flat(1);
  FieldConfig f1 = FieldConfig::constant(lat, flat, {0.2});
  FieldConfig f2 = FieldConfig::constant(lat, flat, {-0.3});
  std::vector<double> xc(lat->n_sites(), 0.4);
  Variation Xf(lat, flat, xc);
  Variation tf = transition_map(f1, f2, Xf);
  for (std::size_t q = 0; q < tf.components().size(); ++q)
    CHECK(tf.components()[q] == doctest::Approx(0.4 + (-0.3 - 0.2)).epsilon(1e-14));
}

TEST_CASE("interpolation glues sections with disjoint supports") {
  auto lat = LorentzianLattice::minkowski(12, 10, 0.1, 0.1);
  auto tgt = TargetGeometry::sphere2_stereographic();
  FieldConfig phi0 = FieldConfig::constant(lat, tgt, {0.06, 0.01});
  Variation X1 = bump(lat, tgt, 3, 2, 2, 2, 0.35);
  Variation Xm1 = bump(lat, tgt, 8, 7, 2, 2, -0.3, 1);
  FieldConfig phi1 = chart_backward(phi0, X1);
  FieldConfig phim1 = chart_backward(phi0, Xm1);

  InterpolationResult ir = interpolate_sections(phi0, phi1, phim1);

  SiteSet s1 = relative_support(phi0, phi1);
  SiteSet sm1 = relative_support(phi0, phim1);
  for (std::size_t idx = 0; idx < lat->n_sites(); ++idx) {
    SitePoint p = lat->site(idx);
    const double* expect = phi0.site(idx);
    if (s1.contains(p)) expect = phi1.site(idx);
    if (sm1.contains(p)) expect = phim1.site(idx);
    CHECK(ir.glued.site(idx)[0] == expect[0]);
    CHECK(ir.glued.site(idx)[1] == expect[1]);
  }

  SiteSet u = s1;
  u.unite(sm1);
  SiteSet gs = relative_support(phi0, ir.glued);
  CHECK(gs.size() == u.size());

  const int nst = ir.n_steps;
  REQUIRE(static_cast<int>(ir.family.size()) == nst + 1);
  for (std::size_t q = 0; q < phi1.values().size(); ++q) {
    CHECK(ir.family[nst][0].values()[q] ==
          doctest::Approx(phi1.values()[q]).epsilon(1e-10).scale(1.0));
    CHECK(ir.family[0][nst].values()[q] ==
          doctest::Approx(phim1.values()[q]).epsilon(1e-10).scale(1.0));
    CHECK(ir.family[nst][nst].values()[q] ==
          doctest::Approx(ir.glued.values()[q]).epsilon(1e-10).scale(1.0));
  }

  // exponential flows applied in either order give the same section: the
  // X1 flow acts on phim1 (which agrees with phi0 on supp(X1)) and vice versa
  FieldConfig a = chart_backward(phim1, X1);
  FieldConfig b = chart_backward(phi1, Xm1);
  for (std::size_t q = 0; q < a.values().size(); ++q)
    CHECK(a.values()[q] == doctest::Approx(b.values()[q]).epsilon(1e-12).scale(1.0));

  // exp acts sitewise: gluing equals the exponential of the summed variation
  FieldConfig direct = chart_backward(phi0, X1.plus(Xm1));
  for (std::size_t q = 0; q < direct.values().size(); ++q)
    CHECK(direct.values()[q] == ir.glued.values()[q]);

  InterpolationResult triv = interpolate_sections(phi0, phi0, phi0);
  for (std::size_t q = 0; q < phi0.values().size(); ++q)
    CHECK(triv.glued.values()[q] == phi0.values()[q]);

  Variation overlap = bump(lat, tgt, 3, 2, 2, 2, 0.1);
  FieldConfig phi_bad = chart_backward(phi0, overlap);
  CHECK_THROWS_WITH_AS(interpolate_sections(phi0, phi1, phi_bad), "supports not disjoint",
                       std::runtime_error);
}

TEST_CASE("flat-target gluing is additive") {
  auto lat = LorentzianLattice::minkowski(10, 8, 0.1, 0.1);
  auto tgt = TargetGeometry::flat(1);
  FieldConfig phi0 = FieldConfig::constant(lat, tgt, {0.1});
  Variation X1 = bump(lat, tgt, 2, 2, 2, 2, 0.6);
  Variation Xm1 = bump(lat, tgt, 7, 6, 2, 2, -0.4);
  FieldConfig phi1 = chart_backward(phi0, X1);
  FieldConfig phim1 = chart_backward(phi0, Xm1);
  InterpolationResult ir = interpolate_sections(phi0, phi1, phim1);
  for (std::size_t idx = 0; idx < lat->n_sites(); ++idx)
    CHECK(ir.glued.site(idx)[0] ==
          doctest::Approx(phi0.site(idx)[0] + (phi1.site(idx)[0] - phi0.site(idx)[0]) +
                          (phim1.site(idx)[0] - phi0.site(idx)[0]))
              .epsilon(1e-14));
}

TEST_CASE("mismatched lattices are rejected") {
  auto lat1 = LorentzianLattice::minkowski(6, 6, 0.1, 0.1);
  auto lat2 = LorentzianLattice::minkowski(6, 8, 0.1, 0.1);
  auto tgt = TargetGeometry::flat(1);
  FieldConfig a = FieldConfig::constant(lat1, tgt, {0.0});
  FieldConfig b = FieldConfig::constant(lat2, tgt, {0.0});
  CHECK_THROWS_AS(relative_support(a, b), std::invalid_argument);
  CHECK_THROWS_AS(chart_forward(a, b), std::invalid_argument);
}

TEST_CASE("pullback connection") {
  auto lat = LorentzianLattice::minkowski(6, 6, 0.1, 0.1);
  auto tgt = TargetGeometry::sphere2_stereographic();
  FieldConfig phi = FieldConfig::constant(lat, tgt, {0.3, 0.1});
  PullbackConnection conn(phi);
  CounterRng rng(5);
  Variation X = random_var(lat, tgt, rng.fork(0), 0.5);
  Variation Y = random_var(lat, tgt, rng.fork(1), 0.5);
  Variation a = conn.apply(X, Y);
  Variation b = conn.apply(Y, X);
  for (std::size_t q = 0; q < a.components().size(); ++q)
    CHECK(a.components()[q] == doctest::Approx(b.components()[q]).epsilon(1e-14).scale(1.0));
  // bilinear and pointwise: disjoint supports give the zero field exactly
  Variation Xd = bump(lat, tgt, 1, 1, 1, 1, 0.3);
  Variation Yd = bump(lat, tgt, 4, 4, 1, 1, 0.3, 1);
  CHECK(conn.apply(Xd, Yd).max_abs() == 0.0);
}
