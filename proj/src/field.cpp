#include "cft/field.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "cft/util.hpp"

namespace cft {

FieldConfig::FieldConfig(LatticePtr lat, TargetPtr target, std::vector<double> values)
    : lat_(std::move(lat)), tgt_(std::move(target)), values_(std::move(values)) {
  if (values_.size() != lat_->n_sites() * static_cast<std::size_t>(tgt_->dim()))
    throw std::invalid_argument("field values have wrong shape");
  const int n = tgt_->dim();
  for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx) {
    Vec y(values_.data() + idx * n, values_.data() + idx * n + n);
    if (!tgt_->in_chart(y)) {
      SitePoint p = lat_->site(idx);
      throw std::runtime_error("field value outside chart domain at site it=" +
                               std::to_string(p.it) + ", ix=" + std::to_string(p.ix));
    }
  }
}

FieldConfig FieldConfig::constant(LatticePtr lat, TargetPtr target, const Vec& y0) {
  const int n = target->dim();
  std::vector<double> v(lat->n_sites() * n);
  for (std::size_t idx = 0; idx < lat->n_sites(); ++idx)
    for (int i = 0; i < n; ++i) v[idx * n + i] = y0[i];
  return FieldConfig(std::move(lat), std::move(target), std::move(v));
}

Variation::Variation(LatticePtr lat, TargetPtr target, std::vector<double> components)
    : lat_(std::move(lat)), tgt_(std::move(target)), comp_(std::move(components)) {
  if (comp_.size() != lat_->n_sites() * static_cast<std::size_t>(tgt_->dim()))
    throw std::invalid_argument("variation components have wrong shape");
}

Variation Variation::zero(LatticePtr lat, TargetPtr target) {
  std::vector<double> v(lat->n_sites() * target->dim(), 0.0);
  return Variation(std::move(lat), std::move(target), std::move(v));
}

SiteSet Variation::support() const {
  SiteSet s(lat_->n_t(), lat_->n_x());
  const int n = dim();
  for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx)
    for (int i = 0; i < n; ++i)
      if (comp_[idx * n + i] != 0.0) {
        s.insert(lat_->site(idx));
        break;
      }
  return s;
}

Variation Variation::scaled(double t) const {
  std::vector<double> v(comp_);
  for (auto& x : v) x *= t;
  return Variation(lat_, tgt_, std::move(v));
}

Variation Variation::plus(const Variation& other) const {
  if (lat_ != other.lat_ || tgt_ != other.tgt_)
    throw std::invalid_argument("mismatched lattices");
  std::vector<double> v(comp_);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += other.comp_[i];
  return Variation(lat_, tgt_, std::move(v));
}

double Variation::max_abs() const {
  double m = 0.0;
  for (double x : comp_) m = std::max(m, std::abs(x));
  return m;
}

PullbackConnection::PullbackConnection(const FieldConfig& base)
    : lat_(base.lattice_ptr()), tgt_(base.target_ptr()) {
  const int n = tgt_->dim();
  coeff_.resize(lat_->n_sites() * n * n * n);
  parallel_for(lat_->n_sites(), [&](std::size_t idx) {
    tgt_->christoffel(base.site_vec(idx), coeff_.data() + idx * n * n * n);
  });
}

Variation PullbackConnection::apply(const Variation& X, const Variation& Y) const {
  const int n = tgt_->dim();
  std::vector<double> out(lat_->n_sites() * n, 0.0);
  for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx) {
    const double* G = coeff_.data() + idx * n * n * n;
    const double* x = X.site(idx);
    const double* y = Y.site(idx);
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) s += G[(i * n + j) * n + k] * x[j] * y[k];
      out[idx * n + i] = s;
    }
  }
  return Variation(lat_, tgt_, std::move(out));
}

Variation chart_forward(const FieldConfig& phi0, const FieldConfig& psi) {
  if (!phi0.same_shape(psi)) throw std::invalid_argument("mismatched lattices");
  const auto& lat = phi0.lattice();
  const int n = phi0.dim();
  std::vector<double> comp(lat.n_sites() * n, 0.0);
  std::vector<unsigned char> failed(lat.n_sites(), 0);
  parallel_for(lat.n_sites(), [&](std::size_t idx) {
    const double* a = phi0.site(idx);
    const double* b = psi.site(idx);
    bool equal = true;
    for (int i = 0; i < n; ++i)
      if (a[i] != b[i]) equal = false;
    if (equal) return;  // exact zero off the relative support
    try {
      Vec v = phi0.target().exp_inverse(phi0.site_vec(idx), psi.site_vec(idx));
      for (int i = 0; i < n; ++i) comp[idx * n + i] = v[i];
    } catch (const std::runtime_error&) {
      failed[idx] = 1;
    }
  });
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx)
    if (failed[idx]) {
      SitePoint p = lat.site(idx);
      throw std::runtime_error("sections not chart-compatible at site it=" +
                               std::to_string(p.it) + ", ix=" + std::to_string(p.ix));
    }
  return Variation(phi0.lattice_ptr(), phi0.target_ptr(), std::move(comp));
}

FieldConfig chart_backward(const FieldConfig& phi0, const Variation& X) {
  if (phi0.lattice_ptr() != X.lattice_ptr() || phi0.target_ptr() != X.target_ptr())
    throw std::invalid_argument("mismatched lattices");
  const auto& lat = phi0.lattice();
  const int n = phi0.dim();
  std::vector<double> values(phi0.values());
  std::vector<unsigned char> failed(lat.n_sites(), 0);
  parallel_for(lat.n_sites(), [&](std::size_t idx) {
    const double* v = X.site(idx);
    bool zero = true;
    for (int i = 0; i < n; ++i)
      if (v[i] != 0.0) zero = false;
    if (zero) return;  // exp fixes the base point exactly
    try {
      Vec y = phi0.target().exp_map(phi0.site_vec(idx), X.site_vec(idx));
      for (int i = 0; i < n; ++i) values[idx * n + i] = y[i];
    } catch (const std::runtime_error&) {
      failed[idx] = 1;
    }
  });
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx)
    if (failed[idx]) {
      SitePoint p = lat.site(idx);
      throw std::runtime_error("chart overflow at site it=" + std::to_string(p.it) +
                               ", ix=" + std::to_string(p.ix));
    }
  return FieldConfig(phi0.lattice_ptr(), phi0.target_ptr(), std::move(values));
}

SiteSet relative_support(const FieldConfig& phi, const FieldConfig& psi) {
  if (!phi.same_shape(psi)) throw std::invalid_argument("mismatched lattices");
  const auto& lat = phi.lattice();
  const int n = phi.dim();
  SiteSet s(lat.n_t(), lat.n_x());
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx)
    for (int i = 0; i < n; ++i)
      if (phi.site(idx)[i] != psi.site(idx)[i]) {
        s.insert(lat.site(idx));
        break;
      }
  return s;
}

Variation transition_map(const FieldConfig& phi1, const FieldConfig& phi2, const Variation& X) {
  return chart_forward(phi1, chart_backward(phi2, X));
}

InterpolationResult interpolate_sections(const FieldConfig& phi0, const FieldConfig& phi1,
                                         const FieldConfig& phi_m1) {
  SiteSet s1 = relative_support(phi0, phi1);
  SiteSet sm1 = relative_support(phi0, phi_m1);
  if (s1.intersects(sm1)) throw std::runtime_error("supports not disjoint");

  const auto& lat = phi0.lattice();
  const auto& tgt = phi0.target();
  const int n = phi0.dim();

  Variation X = chart_forward(phi0, phi1);
  Variation Y = chart_forward(phi0, phi_m1);

  // Step count from the operational chart-shot radius.
  double max_dist = 0.0;
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx) {
    max_dist = std::max(max_dist, tgt.h_norm(phi0.site_vec(idx), X.site_vec(idx)));
    max_dist = std::max(max_dist, tgt.h_norm(phi0.site_vec(idx), Y.site_vec(idx)));
  }
  int nsteps = 1;
  if (std::isfinite(tgt.safe_step()) && max_dist > 0.0)
    nsteps = std::max(1, static_cast<int>(std::ceil(max_dist / (0.5 * tgt.safe_step()))));

  // Glued section: phi1 on supp(X), phi_m1 on supp(Y), phi0 elsewhere.
  std::vector<double> glued_vals(phi0.values());
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx) {
    SitePoint p = lat.site(idx);
    const double* src = nullptr;
    if (s1.contains(p)) src = phi1.site(idx);
    if (sm1.contains(p)) src = phi_m1.site(idx);
    if (src)
      for (int i = 0; i < n; ++i) glued_vals[idx * n + i] = src[i];
  }
  FieldConfig glued(phi0.lattice_ptr(), phi0.target_ptr(), std::move(glued_vals));

  InterpolationResult res{glued, nsteps, {}};
  res.family.reserve(nsteps + 1);
  for (int k = 0; k <= nsteps; ++k) {
    std::vector<FieldConfig> row;
    row.reserve(nsteps + 1);
    for (int l = 0; l <= nsteps; ++l) {
      Variation Z =
          X.scaled(static_cast<double>(k) / nsteps).plus(Y.scaled(static_cast<double>(l) / nsteps));
      row.push_back(chart_backward(phi0, Z));
    }
    res.family.push_back(std::move(row));
  }
  return res;
}

}  // namespace cft
