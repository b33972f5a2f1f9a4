#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cft/peierls.hpp"
#include "cft/util.hpp"

using namespace cft;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<double> bump_window(const LorentzianLattice& lat, int t0, int x0, int rt, int rx,
                                double amp = 1.0) {
  std::vector<double> w(lat.n_sites(), 0.0);
  for (int it = 0; it < lat.n_t(); ++it)
    for (int ix = 0; ix < lat.n_x(); ++ix) {
      const double ut = static_cast<double>(it - t0) / rt;
      const double ux = static_cast<double>(lat.cyclic_distance(ix, x0)) / rx;
      if (std::abs(ut) < 1.0 && std::abs(ux) < 1.0) {
        const double ct = std::cos(0.5 * kPi * ut);
        const double cx = std::cos(0.5 * kPi * ux);
        w[lat.index(it, ix)] = amp * ct * ct * cx * cx;
      }
    }
  return w;
}

FunctionalPtr linear_bump(LatticePtr lat, TargetPtr tgt, int t0, int x0, int rt, int rx,
                          double amp = 1.0, int comp = 0) {
  const int n = tgt->dim();
  std::vector<double> f(lat->n_sites() * n, 0.0);
  std::vector<double> w = bump_window(*lat, t0, x0, rt, rx, amp);
  for (std::size_t idx = 0; idx < lat->n_sites(); ++idx) f[idx * n + comp] = w[idx];
  return make_linear_smeared(lat, tgt, f);
}

Variation random_var(LatticePtr lat, TargetPtr tgt, CounterRng rng, double amp, int margin = 1) {
  const int n = tgt->dim();
  std::vector<double> c(lat->n_sites() * n, 0.0);
  for (int it = margin; it < lat->n_t() - margin; ++it)
    for (int ix = 0; ix < lat->n_x(); ++ix)
      for (int i = 0; i < n; ++i)
        c[lat->index(it, ix) * n + i] = amp * (rng.uniform() - 0.5);
  return Variation(lat, tgt, std::move(c));
}

struct FlatSetup {
  LatticePtr lat;
  TargetPtr tgt;
  GeneralizedLagrangian L;
  FieldConfig phi;
};

FlatSetup flat_setup(int nt = 32, int nx = 24) {
  LatticePtr lat = LorentzianLattice::minkowski(nt, nx, 0.07, 0.1);
  TargetPtr tgt = TargetGeometry::flat(1);
  CounterRng rng(101);
  FieldConfig phi = chart_backward(FieldConfig::constant(lat, tgt, {0.0}),
                                   random_var(lat, tgt, rng, 0.3));
  return {lat, tgt, GeneralizedLagrangian(make_free_scalar_density(1, 0.0)), phi};
}

}  // namespace

TEST_CASE("bracket antisymmetry and form equivalence") {
  FlatSetup s = flat_setup();
  FunctionalPtr F = linear_bump(s.lat, s.tgt, 8, 6, 3, 3);
  FunctionalPtr G = linear_bump(s.lat, s.tgt, 24, 16, 3, 3);

  BracketReport self = peierls_bracket(s.L, *F, *F, s.phi, false);
  CHECK(std::abs(self.value) <= 1e-12 * self.scale);

  BracketReport fg = peierls_bracket(s.L, *F, *G, s.phi, true);
  BracketReport gf = peierls_bracket(s.L, *G, *F, s.phi, false);
  CHECK(std::abs(fg.value + gf.value) <= 1e-12 * fg.scale);
  CHECK(std::abs(fg.value) > 1e-6);  // timelike-separated bumps couple
  CHECK(fg.form_equivalence_dev < 1e-10);
  CHECK(fg.support_check);
  CHECK(fg.value == doctest::Approx(fg.retarded_product - fg.advanced_product));
}

TEST_CASE("causally disjoint supports give a vanishing bracket") {
  FlatSetup s = flat_setup();
  FunctionalPtr F = linear_bump(s.lat, s.tgt, 8, 4, 2, 2);
  FunctionalPtr G = linear_bump(s.lat, s.tgt, 8, 16, 2, 2);
  SiteSet sf = *F->declared_support();
  SiteSet sg = *G->declared_support();
  REQUIRE(s.lat->causally_disjoint(sf, sg));
  BracketReport rep = peierls_bracket(s.L, *F, *G, s.phi, false);
  CHECK(std::abs(rep.value) <= 1e-12 * rep.scale);
}

TEST_CASE("retarded product respects time ordering") {
  FlatSetup s = flat_setup();
  // F strictly after G in time: A = 0 and R finite; swapped, R = 0
  FunctionalPtr F = linear_bump(s.lat, s.tgt, 24, 8, 3, 3);
  FunctionalPtr G = linear_bump(s.lat, s.tgt, 6, 8, 3, 3);
  BracketEngine eng(s.L, s.phi);
  const double R = retarded_product(eng, *F, *G, s.phi).real();
  const double A = advanced_product(eng, *F, *G, s.phi).real();
  CHECK(std::abs(R) > 1e-8);
  CHECK(A == 0.0);
  const double Rswap = retarded_product(eng, *G, *F, s.phi).real();
  CHECK(Rswap == 0.0);

  // spacelike pointlike probes have vanishing self-products
  FunctionalPtr P1 = make_point_probe(s.lat, s.tgt, {10, 2}, 0);
  FunctionalPtr P2 = make_point_probe(s.lat, s.tgt, {10, 14}, 0);
  CHECK(retarded_product(eng, *P1, *P2, s.phi).real() == 0.0);
}

TEST_CASE("bracket of point probes equals the dense kernel entry") {
  LatticePtr lat = LorentzianLattice::minkowski(20, 14, 0.05, 0.1);
  TargetPtr tgt = TargetGeometry::flat(1);
  GeneralizedLagrangian L(make_free_scalar_density(1, 0.0));
  FieldConfig phi = FieldConfig::constant(lat, tgt, {0.0});
  const SitePoint p1{16, 7}, p2{4, 7};
  FunctionalPtr F = make_point_probe(lat, tgt, p1, 0);
  FunctionalPtr G = make_point_probe(lat, tgt, p2, 0);
  BracketReport rep = peierls_bracket(L, *F, *G, phi, false);

  LinearizedOperator op = L.linearize(phi);
  GreenOperator Gp(op, GreenKind::Retarded), Gm(op, GreenKind::Advanced);
  const std::size_t N = lat->n_sites();
  std::vector<double> e(N, 0.0);
  e[lat->index(p2)] = 1.0;
  Variation colp = Gp.apply_covector(e);
  Variation colm = Gm.apply_covector(e);
  const double kernel_entry = (colp.components()[lat->index(p1)] -
                               colm.components()[lat->index(p1)]) /
                              lat->vol_weight(lat->index(p2));
  // the point-probe bracket picks the dense entry times the source volume
  const double expected = kernel_entry * lat->vol_weight(lat->index(p2));
  CHECK(rep.value == doctest::Approx(expected).epsilon(1e-10));
  // timelike-separated sites sit deep in the cone where the kernel is ~ 1/2
  CHECK(std::abs(rep.value) == doctest::Approx(0.5).epsilon(0.15));
}

TEST_CASE("Leibniz rule") {
  FlatSetup s = flat_setup();
  FunctionalPtr F = linear_bump(s.lat, s.tgt, 8, 6, 3, 3);
  FunctionalPtr G = linear_bump(s.lat, s.tgt, 22, 14, 3, 3);
  FunctionalPtr H = make_monomial_smeared(s.lat, s.tgt, bump_window(*s.lat, 20, 6, 3, 3), 0, 2);

  // H = unit: both sides reduce to {F, G}
  FunctionalPtr unit = make_unit_functional(s.lat, s.tgt);
  CHECK(leibniz_check(s.L, *F, *G, *unit, s.phi) < 1e-12);
  CHECK(leibniz_check(s.L, *F, *G, *H, s.phi) < 1e-10);

  // random built-in mix
  FunctionalPtr Q = make_monomial_smeared(s.lat, s.tgt, bump_window(*s.lat, 10, 18, 3, 3), 0, 3);
  const double scale = std::max(1.0, std::abs(peierls_bracket(s.L, *F, *G, s.phi, false).value));
  CHECK(leibniz_check(s.L, *F, *Q, *H, s.phi) < 1e-10 * scale);
}

TEST_CASE("bracket kernel1 against finite differences") {
  // cross-check mode for the analytic outer-derivative assembly
  LatticePtr lat = LorentzianLattice::minkowski(20, 14, 0.06, 0.1);
  TargetPtr s2 = TargetGeometry::sphere2_stereographic();
  GeneralizedLagrangian L(make_wave_map_density(s2));
  CounterRng rng(7);
  std::vector<double> base(lat->n_sites() * 2, 0.0);
  for (int it = 0; it < 20; ++it)
    for (int ix = 0; ix < 14; ++ix) {
      base[lat->index(it, ix) * 2] = 0.1 + 0.08 * std::sin(2.0 * kPi * ix / 14);
      base[lat->index(it, ix) * 2 + 1] = 0.06 * std::cos(2.0 * kPi * (it + ix) / 20);
    }
  FieldConfig phi(lat, s2, base);
  FunctionalPtr F = linear_bump(lat, s2, 5, 4, 2, 2, 1.0, 0);
  FunctionalPtr G = linear_bump(lat, s2, 14, 9, 2, 2, 1.0, 1);

  std::vector<double> k1 = bracket_kernel1(L, *F, *G, phi);
  Variation X = random_var(lat, s2, rng, 0.2, 2);
  std::vector<double> terms(lat->n_sites(), 0.0);
  for (std::size_t idx = 0; idx < lat->n_sites(); ++idx) {
    double acc = 0.0;
    for (int i = 0; i < 2; ++i) acc += k1[idx * 2 + i] * X.components()[idx * 2 + i];
    terms[idx] = acc * lat->vol_weight(idx);
  }
  const double analytic = pairwise_sum(terms);

  auto bracket_at = [&](double t) {
    FieldConfig p = chart_backward(phi, X.scaled(t));
    return peierls_bracket(L, *F, *G, p, false).value;
  };
  const double t = 1e-4;
  const double numeric = (bracket_at(t) - bracket_at(-t)) / (2.0 * t);
  CHECK(std::abs(analytic - numeric) < 1e-5 * (1.0 + std::abs(analytic)));
}

TEST_CASE("Jacobi identity") {
  FlatSetup s = flat_setup(28, 20);

  // linear functionals: inner brackets are field constants
  FunctionalPtr Fl = linear_bump(s.lat, s.tgt, 6, 4, 2, 2);
  FunctionalPtr Gl = linear_bump(s.lat, s.tgt, 14, 10, 2, 2);
  FunctionalPtr Hl = linear_bump(s.lat, s.tgt, 22, 16, 2, 2);
  CHECK(jacobi_residual(s.L, *Fl, *Gl, *Hl, s.phi) < 1e-14);

  // quadratic functionals, field-independent propagator
  FunctionalPtr Fq = make_monomial_smeared(s.lat, s.tgt, bump_window(*s.lat, 7, 5, 3, 3), 0, 2);
  FunctionalPtr Gq = make_monomial_smeared(s.lat, s.tgt, bump_window(*s.lat, 14, 11, 3, 3), 0, 2);
  FunctionalPtr Hq = make_monomial_smeared(s.lat, s.tgt, bump_window(*s.lat, 21, 17, 3, 3), 0, 2);
  CHECK(jacobi_residual(s.L, *Fq, *Gq, *Hq, s.phi) < 1e-10);

  // wave maps with cubic functionals: the discrete assembly reuses the same
  // adjointness identities, so the residual stays at the numerical floor
  LatticePtr lat = LorentzianLattice::minkowski(24, 18, 0.06, 0.09);
  TargetPtr s2 = TargetGeometry::sphere2_stereographic();
  GeneralizedLagrangian Lw(make_wave_map_density(s2));
  std::vector<double> base(lat->n_sites() * 2, 0.0);
  for (int it = 0; it < 24; ++it)
    for (int ix = 0; ix < 18; ++ix) {
      base[lat->index(it, ix) * 2] = 0.08 * std::sin(2.0 * kPi * ix / 18.0 + 0.3 * it / 24.0);
      base[lat->index(it, ix) * 2 + 1] = 0.05 * std::cos(2.0 * kPi * ix / 18.0);
    }
  FieldConfig phiw(lat, s2, base);
  FunctionalPtr Fw = make_monomial_smeared(lat, s2, bump_window(*lat, 6, 4, 3, 3), 0, 3);
  FunctionalPtr Gw = make_monomial_smeared(lat, s2, bump_window(*lat, 12, 9, 3, 3), 1, 3);
  FunctionalPtr Hw = make_monomial_smeared(lat, s2, bump_window(*lat, 18, 14, 3, 3), 0, 3);
  const double scale =
      std::max(1.0, std::abs(peierls_bracket(Lw, *Fw, *Gw, phiw, false).value));
  CHECK(jacobi_residual(Lw, *Fw, *Gw, *Hw, phiw) < 1e-9 * scale);
}

TEST_CASE("bracket depends on the Lagrangian only inside the causal hull") {
  FlatSetup s = flat_setup();
  FunctionalPtr F = linear_bump(s.lat, s.tgt, 8, 6, 2, 2);
  FunctionalPtr G = linear_bump(s.lat, s.tgt, 24, 10, 2, 2);
  SiteSet hull = bracket_causal_hull(*F, *G, s.phi);

  // positive control: a mass bump well outside the hull
  int out_t = -1, out_x = -1;
  for (int it = 0; it < s.lat->n_t() && out_t < 0; ++it)
    for (int ix = 0; ix < s.lat->n_x() && out_t < 0; ++ix) {
      bool clear = true;
      for (int a = -4; a <= 4 && clear; ++a)
        for (int b = -4; b <= 4 && clear; ++b) {
          const int qt = it + a;
          if (qt < 0 || qt >= s.lat->n_t()) continue;
          if (hull.contains({qt, s.lat->wrap_x(ix + b)})) clear = false;
        }
      if (clear) {
        out_t = it;
        out_x = ix;
      }
    }
  REQUIRE(out_t >= 0);
  std::vector<double> wout = bump_window(*s.lat, out_t, out_x, 2, 2);
  SiteSet mod(s.lat->n_t(), s.lat->n_x());
  for (std::size_t idx = 0; idx < s.lat->n_sites(); ++idx)
    if (wout[idx] != 0.0) mod.insert(s.lat->site(idx));
  GeneralizedLagrangian L2(make_sum_density(
      {make_free_scalar_density(1, 0.0), make_mass_window_density(1, wout, 5.0)}));
  LocalityReport pos = lagrangian_locality_check(s.L, L2, *F, *G, s.phi, mod);
  CHECK(pos.equal);
  CHECK(pos.deviation <= 1e-10 * pos.scale);

  // negative control: the bump sits between the supports
  std::vector<double> win = bump_window(*s.lat, 16, 8, 4, 4);
  GeneralizedLagrangian L3(make_sum_density(
      {make_free_scalar_density(1, 0.0), make_mass_window_density(1, win, 5.0)}));
  LocalityReport neg = locality_compare(s.L, L3, *F, *G, s.phi);
  CHECK(neg.deviation > 1e-6);

  // declared modification windows may not overlap the hull
  SiteSet bad(s.lat->n_t(), s.lat->n_x());
  bad.insert({16, 8});
  CHECK_THROWS_WITH_AS(lagrangian_locality_check(s.L, L3, *F, *G, s.phi, bad),
                       doctest::Contains("overlaps the causal hull"), std::runtime_error);

  // identical Lagrangians trivially agree
  LocalityReport same = locality_compare(s.L, s.L, *F, *G, s.phi);
  CHECK(same.equal);
}

TEST_CASE("composition chain rule through the bracket") {
  FlatSetup s = flat_setup();
  FunctionalPtr F1 = linear_bump(s.lat, s.tgt, 8, 6, 2, 2);
  FunctionalPtr F2 = make_monomial_smeared(s.lat, s.tgt, bump_window(*s.lat, 10, 16, 2, 2), 0, 2);
  FunctionalPtr G = linear_bump(s.lat, s.tgt, 24, 10, 2, 2);

  SmoothMap psi;
  psi.value = [](const std::vector<CValue>& z) { return std::sin(z[0].real()) + z[0] * z[1]; };
  psi.d1 = [](int j, const std::vector<CValue>& z) {
    if (j == 0) return CValue(std::cos(z[0].real())) + z[1];
    return z[0];
  };
  psi.d2 = [](int j, int k, const std::vector<CValue>& z) {
    if (j == 0 && k == 0) return CValue(-std::sin(z[0].real()));
    if (j != k) return CValue(1.0);
    return CValue(0.0);
  };
  FunctionalPtr comp = smooth_compose(psi, {F1, F2});

  BracketEngine eng(s.L, s.phi);
  const CValue lhs = eng.pair(comp->kernel1(s.phi), eng.apply(GreenKind::Causal, G->kernel1(s.phi)));
  std::vector<CValue> z = {F1->evaluate(s.phi), F2->evaluate(s.phi)};
  const CValue b1 = eng.pair(F1->kernel1(s.phi), eng.apply(GreenKind::Causal, G->kernel1(s.phi)));
  const CValue b2 = eng.pair(F2->kernel1(s.phi), eng.apply(GreenKind::Causal, G->kernel1(s.phi)));
  const CValue rhs = psi.d1(0, z) * b1 + psi.d1(1, z) * b2;
  CHECK(std::abs(lhs - rhs) < 1e-10 * (1.0 + std::abs(rhs)));
}

TEST_CASE("on-shell ideal closure") {
  auto flat1 = TargetGeometry::flat(1);
  const int nn = 28;
  LatticePtr lat = LorentzianLattice::minkowski(nn, nn, 2.0 * kPi / nn, 2.0 * kPi / nn);
  GeneralizedLagrangian L(make_free_scalar_density(1, 0.0));
  std::vector<double> vals(lat->n_sites());
  for (int it = 0; it < nn; ++it)
    for (int ix = 0; ix < nn; ++ix)
      vals[lat->index(it, ix)] = 0.3 * std::cos(it * lat->dt() - ix * lat->dx());
  FieldConfig pw(lat, flat1, vals);

  ELKernel E = L.el_kernel(pw);
  const double el_scale = std::max(E.max_interior_abs(), 1e-13);

  const int n = 1;
  std::vector<double> xc(lat->n_sites() * n, 0.0);
  std::vector<double> w = bump_window(*lat, nn / 2, nn / 2, nn / 4, nn / 4);
  for (std::size_t idx = 0; idx < lat->n_sites(); ++idx) xc[idx] = w[idx];
  Variation X(lat, flat1, xc);
  FunctionalPtr ideal = make_onshell_element(make_free_scalar_density(1, 0.0), lat, flat1, X);

  double vol_norm = 0.0;
  for (std::size_t idx = 0; idx < lat->n_sites(); ++idx)
    vol_norm += std::abs(X.components()[idx]) * lat->vol_weight(idx);
  CHECK(std::abs(ideal->evaluate(pw)) <= 2.0 * el_scale * vol_norm + 1e-12);

  // bracket closure: {F_ideal, G} vanishes at the solution background
  FunctionalPtr G = linear_bump(lat, flat1, nn / 4, nn / 4, 3, 3);
  BracketEngine eng(L, pw);
  const CValue br = eng.pair(ideal->kernel1(pw), eng.apply(GreenKind::Causal, G->kernel1(pw)));
  CHECK(std::abs(br) < 1e-9);

  // product closure: G * F_ideal also vanishes on shell
  FunctionalPtr GF = operator_product(G, ideal);
  CHECK(std::abs(GF->evaluate(pw)) <=
        std::abs(G->evaluate(pw)) * (2.0 * el_scale * vol_norm + 1e-12));

  // constant wave maps are exactly on shell
  TargetPtr s2 = TargetGeometry::sphere2_stereographic();
  LatticePtr lat2 = LorentzianLattice::minkowski(12, 10, 0.07, 0.1);
  FieldConfig cst = FieldConfig::constant(lat2, s2, {0.2, -0.1});
  std::vector<double> xc2(lat2->n_sites() * 2, 0.0);
  for (std::size_t idx = 0; idx < lat2->n_sites(); ++idx) xc2[idx * 2] = 1.0;
  FunctionalPtr ideal2 =
      make_onshell_element(make_wave_map_density(s2), lat2, s2, Variation(lat2, s2, xc2));
  CHECK(ideal2->evaluate(cst) == CValue(0.0));
}

TEST_CASE("the bracket functional stays regular") {
  FlatSetup s = flat_setup(24, 18);
  FunctionalPtr Fq = make_monomial_smeared(s.lat, s.tgt, bump_window(*s.lat, 6, 5, 3, 3), 0, 2);
  FunctionalPtr Gq = make_monomial_smeared(s.lat, s.tgt, bump_window(*s.lat, 17, 12, 3, 3), 0, 2);
  FunctionalPtr B = make_bracket_functional(s.L, Fq, Gq);

  CHECK(B->has_kernel1());
  CHECK(B->has_kernel2());

  // kernel1 against finite differences of the bracket value
  CounterRng rng(3);
  Variation X = random_var(s.lat, s.tgt, rng, 0.3, 2);
  const CValue analytic = pair_kernel(*s.lat, B->kernel1(s.phi), X);
  auto at = [&](double t) { return B->evaluate(chart_backward(s.phi, X.scaled(t))).real(); };
  const double numeric = (at(1e-4) - at(-1e-4)) / 2e-4;
  CHECK(std::abs(analytic.real() - numeric) < 1e-5 * (1.0 + std::abs(numeric)));

  std::vector<FieldConfig> samples = {s.phi};
  ClassReport rep = classify(*B, samples);
  CHECK(rep.regular);
  CHECK(rep.tag != FunctionalClass::Generic);
}

TEST_CASE("missing kernels are reported") {
  FlatSetup s = flat_setup(16, 12);
  FunctionalPtr F = linear_bump(s.lat, s.tgt, 5, 4, 2, 2);
  FunctionalPtr sup = make_sup_functional(s.lat, s.tgt);
  CHECK_THROWS_WITH_AS(peierls_bracket(s.L, *F, *sup, s.phi, false), "missing kernels",
                       std::runtime_error);
}
