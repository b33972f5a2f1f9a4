#ifndef CFT_LATTICE_HPP
#define CFT_LATTICE_HPP

#include <memory>
#include <vector>

#include "cft/util.hpp"

namespace cft {

class LorentzianLattice;
using LatticePtr = std::shared_ptr<const LorentzianLattice>;

struct SitePoint {
  int it = 0;
  int ix = 0;
};

inline bool operator==(SitePoint a, SitePoint b) { return a.it == b.it && a.ix == b.ix; }

/// Subset of lattice sites stored as a mask.
class SiteSet {
 public:
  SiteSet() = default;
  SiteSet(int n_t, int n_x) : nt_(n_t), nx_(n_x), mask_(static_cast<std::size_t>(n_t) * n_x, 0) {}

  int n_t() const { return nt_; }
  int n_x() const { return nx_; }
  bool empty() const { return count_ == 0; }
  std::size_t size() const { return count_; }

  bool contains(SitePoint p) const { return mask_[index(p)] != 0; }
  void insert(SitePoint p) {
    auto& m = mask_[index(p)];
    if (!m) {
      m = 1;
      ++count_;
    }
  }

  SiteSet& unite(const SiteSet& other);
  bool intersects(const SiteSet& other) const;
  std::vector<SitePoint> points() const;

 private:
  std::size_t index(SitePoint p) const { return static_cast<std::size_t>(p.it) * nx_ + p.ix; }
  int nt_ = 0, nx_ = 0;
  std::vector<unsigned char> mask_;
  std::size_t count_ = 0;
};

/// Discretized cylinder spacetime R_t x S^1_x with a diagonal Lorentzian
/// metric (g_tt < 0, g_xx > 0), volume weights and the lattice causal
/// relation. Immutable after construction.
///
/// The lattice cone widens by ceil(c dt/dx) columns per time step, where
/// c = sqrt(-g_tt/g_xx) is the local coordinate light speed, so the explicit
/// solver stencil (one column per step under the CFL bound) is contained in
/// every lattice cone.
class LorentzianLattice {
 public:
  static std::shared_ptr<const LorentzianLattice> minkowski(int n_t, int n_x, double dt,
                                                            double dx);
  /// g_xx varies with the spatial column, g_tt is constant.
  static std::shared_ptr<const LorentzianLattice> diagonal(int n_t, int n_x, double dt, double dx,
                                                           std::vector<double> gxx_profile,
                                                           double gtt = -1.0);

  int n_t() const { return nt_; }
  int n_x() const { return nx_; }
  double dt() const { return dt_; }
  double dx() const { return dx_; }
  std::size_t n_sites() const { return static_cast<std::size_t>(nt_) * nx_; }

  std::size_t index(SitePoint p) const { return static_cast<std::size_t>(p.it) * nx_ + p.ix; }
  std::size_t index(int it, int ix) const { return static_cast<std::size_t>(it) * nx_ + ix; }
  SitePoint site(std::size_t idx) const {
    return {static_cast<int>(idx / nx_), static_cast<int>(idx % nx_)};
  }

  int wrap_x(int ix) const {
    ix %= nx_;
    return ix < 0 ? ix + nx_ : ix;
  }
  int cyclic_distance(int a, int b) const;

  double g_tt(std::size_t idx) const { return gtt_[idx]; }
  double g_xx(std::size_t idx) const { return gxx_[idx]; }
  double vol_weight(std::size_t idx) const { return vol_[idx]; }
  const std::vector<double>& vol_weights() const { return vol_; }

  /// Local coordinate light speed sqrt(-g_tt/g_xx).
  double light_speed(std::size_t idx) const;
  /// Columns the cone gains per time step at this site.
  int cone_width(std::size_t idx) const { return width_[idx]; }
  /// Largest stable dt/dx = min over sites of sqrt(g_xx / -g_tt).
  double cfl_limit() const { return cfl_limit_; }

  SiteSet causal_future(SitePoint p) const;
  SiteSet causal_past(SitePoint p) const;
  SiteSet causal_future(const SiteSet& seed) const;
  SiteSet causal_past(const SiteSet& seed) const;

  /// True iff (J+(A) u J-(A)) does not meet B. Throws on empty input.
  bool causally_disjoint(const SiteSet& A, const SiteSet& B) const;

  /// (J+(A) u J-(A)) intersected with (J+(B) u J-(B)).
  SiteSet causal_hull(const SiteSet& A, const SiteSet& B) const;

  double integrate(const std::vector<double>& density) const;

 private:
  LorentzianLattice(int n_t, int n_x, double dt, double dx, std::vector<double> gtt,
                    std::vector<double> gxx);

  SiteSet grow(const SiteSet& seed, bool forward) const;

  int nt_, nx_;
  double dt_, dx_;
  double cfl_limit_;
  std::vector<double> gtt_, gxx_, vol_;
  std::vector<int> width_;
};

}  // namespace cft

#endif
