#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cft/lattice.hpp"
#include "cft/util.hpp"

using namespace cft;

TEST_CASE("unit light cone on a Minkowski lattice") {
  auto lat = LorentzianLattice::minkowski(8, 16, 0.1, 0.1);
  SiteSet jp = lat->causal_future(SitePoint{0, 0});
  // at it = 2 the cone covers ix in {-2..2} mod 16
  int count = 0;
  for (int ix = 0; ix < 16; ++ix)
    if (jp.contains({2, ix})) ++count;
  CHECK(count == 5);
  for (int d : {-2, -1, 0, 1, 2}) CHECK(jp.contains({2, lat->wrap_x(d)}));
  CHECK(!jp.contains({2, 3}));
  CHECK(!jp.contains({2, 13}));

  // the vertex row contains only the vertex
  int vertex_count = 0;
  for (int ix = 0; ix < 16; ++ix)
    if (jp.contains({0, ix})) ++vertex_count;
  CHECK(vertex_count == 1);
  CHECK(jp.contains({0, 0}));
}

TEST_CASE("cone wraps around the cylinder") {
  auto lat = LorentzianLattice::minkowski(8, 8, 0.1, 0.1);
  SiteSet jp = lat->causal_future(SitePoint{0, 0});
  for (int ix = 0; ix < 8; ++ix) CHECK(jp.contains({4, ix}));
  // one step earlier the slice is not yet full
  int count = 0;
  for (int ix = 0; ix < 8; ++ix)
    if (jp.contains({3, ix})) ++count;
  CHECK(count == 7);
}

TEST_CASE("closed-form cone predicate for the constant metric") {
  auto lat = LorentzianLattice::minkowski(10, 12, 0.05, 0.1);
  // c = 1, width per step = ceil(dt/dx) = 1: |dx_cyc| <= steps
  SitePoint p{2, 5};
  SiteSet jp = lat->causal_future(p);
  for (int it = 0; it < 10; ++it)
    for (int ix = 0; ix < 12; ++ix) {
      const bool inside = it >= p.it && lat->cyclic_distance(ix, p.ix) <= (it - p.it);
      CHECK(jp.contains({it, ix}) == inside);
    }
}

TEST_CASE("causal symmetry and transitivity") {
  std::vector<double> gxx(10, 1.0);
  for (int i = 0; i < 10; ++i) gxx[i] = 1.0 + 0.5 * std::sin(0.6 * i) * std::sin(0.6 * i);
  auto lat = LorentzianLattice::diagonal(9, 10, 0.08, 0.1, gxx);

  for (int it = 0; it < 9; ++it)
    for (int ix = 0; ix < 10; ++ix) {
      SitePoint p{it, ix};
      SiteSet jp = lat->causal_future(p);
      for (int jt = 0; jt < 9; ++jt)
        for (int jx = 0; jx < 10; ++jx) {
          SitePoint q{jt, jx};
          CHECK(jp.contains(q) == lat->causal_past(q).contains(p));
        }
    }

  CounterRng rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    SitePoint p{rng.uniform_int(0, 4), rng.uniform_int(0, 9)};
    SiteSet jp = lat->causal_future(p);
    for (SitePoint q : jp.points()) {
      SiteSet jq = lat->causal_future(q);
      for (SitePoint r : jq.points()) CHECK(jp.contains(r));
    }
  }
}

TEST_CASE("causally disjoint pairs") {
  auto lat = LorentzianLattice::minkowski(16, 16, 0.1, 0.1);
  auto single = [&](int it, int ix) {
    SiteSet s(16, 16);
    s.insert({it, ix});
    return s;
  };
  CHECK(lat->causally_disjoint(single(5, 0), single(5, 4)));
  CHECK(!lat->causally_disjoint(single(0, 0), single(3, 1)));
  CHECK(lat->causally_disjoint(single(0, 0), single(2, 7)));
  CHECK(lat->causally_disjoint(single(5, 4), single(5, 0)));  // symmetry

  SiteSet empty(16, 16);
  CHECK_THROWS_WITH_AS(lat->causally_disjoint(empty, single(0, 0)), "empty support",
                       std::runtime_error);
}

TEST_CASE("integration against the volume element") {
  const int nt = 6, nx = 32;
  const double dt = 0.05, dx = 0.1;
  auto lat = LorentzianLattice::minkowski(nt, nx, dt, dx);
  std::vector<double> one(lat->n_sites(), 1.0);
  CHECK(lat->integrate(one) == doctest::Approx(nt * nx * dt * dx).epsilon(1e-14));

  std::vector<double> zero(lat->n_sites(), 0.0);
  CHECK(lat->integrate(zero) == 0.0);

  // sin^2 on one row: trapezoid on the periodic grid is exact, integral L/2
  const double L = nx * dx;
  std::vector<double> sin2(lat->n_sites(), 0.0);
  for (int ix = 0; ix < nx; ++ix) {
    const double x = ix * dx;
    const double s = std::sin(2.0 * 3.14159265358979324 * x / L);
    sin2[lat->index(2, ix)] = s * s;
  }
  CHECK(lat->integrate(sin2) == doctest::Approx(0.5 * L * dt).epsilon(1e-13));
}

TEST_CASE("volume weights and CFL guard") {
  std::vector<double> gxx(8, 4.0);
  auto lat = LorentzianLattice::diagonal(4, 8, 0.1, 0.1, gxx);
  // vol = sqrt(-gtt gxx) dt dx = 2 dt dx
  CHECK(lat->vol_weight(0) == doctest::Approx(2.0 * 0.1 * 0.1));
  CHECK(lat->light_speed(0) == doctest::Approx(0.5));
  CHECK(lat->cone_width(0) == 1);

  // dt/dx > min sqrt(gxx/-gtt) must be rejected
  std::vector<double> tight(8, 0.25);  // light speed 2, cfl limit 0.5
  CHECK_THROWS_AS(LorentzianLattice::diagonal(4, 8, 0.08, 0.1, tight), std::invalid_argument);
}
