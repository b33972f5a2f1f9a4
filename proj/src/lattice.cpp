#include "cft/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cft {

SiteSet& SiteSet::unite(const SiteSet& other) {
  for (std::size_t i = 0; i < mask_.size(); ++i) {
    if (other.mask_[i] && !mask_[i]) {
      mask_[i] = 1;
      ++count_;
    }
  }
  return *this;
}

bool SiteSet::intersects(const SiteSet& other) const {
  for (std::size_t i = 0; i < mask_.size(); ++i)
    if (mask_[i] && other.mask_[i]) return true;
  return false;
}

std::vector<SitePoint> SiteSet::points() const {
  std::vector<SitePoint> out;
  out.reserve(count_);
  for (int it = 0; it < nt_; ++it)
    for (int ix = 0; ix < nx_; ++ix)
      if (mask_[static_cast<std::size_t>(it) * nx_ + ix]) out.push_back({it, ix});
  return out;
}

LorentzianLattice::LorentzianLattice(int n_t, int n_x, double dt, double dx,
                                     std::vector<double> gtt, std::vector<double> gxx)
    : nt_(n_t), nx_(n_x), dt_(dt), dx_(dx), gtt_(std::move(gtt)), gxx_(std::move(gxx)) {
  if (n_t <= 0 || n_x <= 0) throw std::invalid_argument("lattice dimensions must be positive");
  if (dt <= 0.0 || dx <= 0.0) throw std::invalid_argument("lattice spacings must be positive");
  vol_.resize(n_sites());
  width_.resize(n_sites());
  cfl_limit_ = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n_sites(); ++i) {
    if (!(gtt_[i] < 0.0) || !(gxx_[i] > 0.0))
      throw std::invalid_argument("metric signature must be (g_tt < 0, g_xx > 0)");
    vol_[i] = std::sqrt(-gtt_[i] * gxx_[i]) * dt_ * dx_;
    const double c = std::sqrt(-gtt_[i] / gxx_[i]);
    // ceil with a guard so c dt/dx == 1 maps to width 1 despite rounding
    width_[i] = std::max(1, static_cast<int>(std::ceil(c * dt_ / dx_ - 1e-9)));
    cfl_limit_ = std::min(cfl_limit_, std::sqrt(gxx_[i] / -gtt_[i]));
  }
  if (dt_ / dx_ > cfl_limit_ * (1.0 + 1e-12))
    throw std::invalid_argument("discrete causal-stability condition violated: dt/dx > min sqrt(g_xx/-g_tt)");
}

std::shared_ptr<const LorentzianLattice> LorentzianLattice::minkowski(int n_t, int n_x, double dt,
                                                                      double dx) {
  const std::size_t n = static_cast<std::size_t>(n_t) * n_x;
  return std::shared_ptr<const LorentzianLattice>(
      new LorentzianLattice(n_t, n_x, dt, dx, std::vector<double>(n, -1.0),
                            std::vector<double>(n, 1.0)));
}

std::shared_ptr<const LorentzianLattice> LorentzianLattice::diagonal(
    int n_t, int n_x, double dt, double dx, std::vector<double> gxx_profile, double gtt) {
  if (static_cast<int>(gxx_profile.size()) != n_x)
    throw std::invalid_argument("g_xx profile must have n_x entries");
  const std::size_t n = static_cast<std::size_t>(n_t) * n_x;
  std::vector<double> gxx(n);
  for (int it = 0; it < n_t; ++it)
    for (int ix = 0; ix < n_x; ++ix) gxx[static_cast<std::size_t>(it) * n_x + ix] = gxx_profile[ix];
  return std::shared_ptr<const LorentzianLattice>(
      new LorentzianLattice(n_t, n_x, dt, dx, std::vector<double>(n, gtt), std::move(gxx)));
}

int LorentzianLattice::cyclic_distance(int a, int b) const {
  int d = std::abs(wrap_x(a) - wrap_x(b));
  return std::min(d, nx_ - d);
}

double LorentzianLattice::light_speed(std::size_t idx) const {
  return std::sqrt(-gtt_[idx] / gxx_[idx]);
}

SiteSet LorentzianLattice::grow(const SiteSet& seed, bool forward) const {
  SiteSet out(nt_, nx_);
  std::vector<unsigned char> frontier(nx_, 0);
  const int step = forward ? 1 : -1;
  const int start = forward ? 0 : nt_ - 1;
  // Rows are processed in causal order; the frontier carries the reachable
  // columns from all seed rows processed so far.
  std::vector<unsigned char> next(nx_, 0);
  bool any = false;
  for (int it = start; it >= 0 && it < nt_; it += step) {
    for (int ix = 0; ix < nx_; ++ix)
      if (seed.contains({it, ix})) frontier[ix] = 1;
    for (int ix = 0; ix < nx_; ++ix)
      if (frontier[ix]) {
        out.insert({it, ix});
        any = true;
      }
    if (!any) continue;
    const int next_row = it + step;
    if (next_row < 0 || next_row >= nt_) break;
    std::fill(next.begin(), next.end(), 0);
    if (forward) {
      // step r -> r +/- w(r), width at the earlier-row site
      for (int ix = 0; ix < nx_; ++ix) {
        if (!frontier[ix]) continue;
        const int w = width_[index(it, ix)];
        for (int d = -w; d <= w; ++d) next[wrap_x(ix + d)] = 1;
      }
    } else {
      // transpose relation: r' reached from q iff |q - r'| <= w(r'),
      // width at the earlier-row (target) site
      for (int ixp = 0; ixp < nx_; ++ixp) {
        const int w = width_[index(next_row, ixp)];
        for (int d = -w; d <= w && !next[ixp]; ++d)
          if (frontier[wrap_x(ixp + d)]) next[ixp] = 1;
      }
    }
    frontier.swap(next);
  }
  return out;
}

SiteSet LorentzianLattice::causal_future(SitePoint p) const {
  SiteSet seed(nt_, nx_);
  seed.insert({p.it, wrap_x(p.ix)});
  return grow(seed, true);
}

SiteSet LorentzianLattice::causal_past(SitePoint p) const {
  SiteSet seed(nt_, nx_);
  seed.insert({p.it, wrap_x(p.ix)});
  return grow(seed, false);
}

SiteSet LorentzianLattice::causal_future(const SiteSet& seed) const { return grow(seed, true); }
SiteSet LorentzianLattice::causal_past(const SiteSet& seed) const { return grow(seed, false); }

bool LorentzianLattice::causally_disjoint(const SiteSet& A, const SiteSet& B) const {
  if (A.empty() || B.empty()) throw std::runtime_error("empty support");
  SiteSet hull = causal_future(A);
  hull.unite(causal_past(A));
  return !hull.intersects(B);
}

SiteSet LorentzianLattice::causal_hull(const SiteSet& A, const SiteSet& B) const {
  if (A.empty() || B.empty()) throw std::runtime_error("empty support");
  SiteSet ha = causal_future(A);
  ha.unite(causal_past(A));
  SiteSet hb = causal_future(B);
  hb.unite(causal_past(B));
  SiteSet out(nt_, nx_);
  for (int it = 0; it < nt_; ++it)
    for (int ix = 0; ix < nx_; ++ix)
      if (ha.contains({it, ix}) && hb.contains({it, ix})) out.insert({it, ix});
  return out;
}

double LorentzianLattice::integrate(const std::vector<double>& density) const {
  if (density.size() != n_sites()) throw std::invalid_argument("density must cover all sites");
  std::vector<double> terms(density.size());
  for (std::size_t i = 0; i < density.size(); ++i) terms[i] = density[i] * vol_[i];
  return pairwise_sum(terms);
}

}  // namespace cft
