#include "cft/functional.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cft/util.hpp"

namespace cft {

namespace {
constexpr int kD = 4;

CKernel to_ckernel(const std::vector<double>& k) {
  CKernel out(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) out[i] = k[i];
  return out;
}

// chart correction shared by coordinate-polynomial functionals:
// subtract sum vol k1_m Gamma^m_jk X^j Y^k (as a form) or the matching
// covector (as an apply).
CValue chart_correction_form(const LorentzianLattice& lat, const TargetGeometry& tgt,
                             const FieldConfig& phi, const CKernel& k1, const Variation& X,
                             const Variation& Y) {
  const int n = tgt.dim();
  if (tgt.is_flat()) return 0.0;
  CValue acc = 0.0;
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx) {
    double G[kD * kD * kD];
    tgt.christoffel(phi.site_vec(idx), G);
    CValue s = 0.0;
    for (int m = 0; m < n; ++m)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k)
          s += k1[idx * n + m] * G[(m * n + j) * n + k] * X.components()[idx * n + j] *
               Y.components()[idx * n + k];
    acc += s * lat.vol_weight(idx);
  }
  return -acc;
}

CKernel chart_correction_apply(const LorentzianLattice& lat, const TargetGeometry& tgt,
                               const FieldConfig& phi, const CKernel& k1, const Variation& X) {
  const int n = tgt.dim();
  CKernel out(lat.n_sites() * n, 0.0);
  if (tgt.is_flat()) return out;
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx) {
    double G[kD * kD * kD];
    tgt.christoffel(phi.site_vec(idx), G);
    for (int k = 0; k < n; ++k) {
      CValue s = 0.0;
      for (int m = 0; m < n; ++m)
        for (int j = 0; j < n; ++j)
          s += k1[idx * n + m] * G[(m * n + j) * n + k] * X.components()[idx * n + j];
      out[idx * n + k] = -s;
    }
  }
  return out;
}

}  // namespace

void Functional::missing_kernels() { throw std::runtime_error("missing kernels"); }

CKernel Functional::kernel1(const FieldConfig&) const { missing_kernels(); }
CValue Functional::kernel2_form(const FieldConfig&, const Variation&, const Variation&) const {
  missing_kernels();
}
CKernel Functional::kernel2_apply(const FieldConfig&, const Variation&) const {
  missing_kernels();
}

CValue pair_kernel(const LorentzianLattice& lat, const CKernel& k, const Variation& X) {
  const int n = X.dim();
  std::vector<double> re(lat.n_sites()), im(lat.n_sites());
  for (std::size_t idx = 0; idx < lat.n_sites(); ++idx) {
    CValue s = 0.0;
    for (int i = 0; i < n; ++i) s += k[idx * n + i] * X.components()[idx * n + i];
    s *= lat.vol_weight(idx);
    re[idx] = s.real();
    im[idx] = s.imag();
  }
  return {pairwise_sum(re), pairwise_sum(im)};
}

namespace {

class ConstantFunctional final : public Functional {
 public:
  ConstantFunctional(LatticePtr lat, TargetPtr tgt, CValue c)
      : lat_(std::move(lat)), tgt_(std::move(tgt)), c_(c) {}
  LatticePtr lattice_ptr() const override { return lat_; }
  TargetPtr target_ptr() const override { return tgt_; }
  CValue evaluate(const FieldConfig&) const override { return c_; }
  bool has_kernel1() const override { return true; }
  CKernel kernel1(const FieldConfig&) const override {
    return CKernel(lat_->n_sites() * tgt_->dim(), 0.0);
  }
  bool has_kernel2() const override { return true; }
  CValue kernel2_form(const FieldConfig&, const Variation&, const Variation&) const override {
    return 0.0;
  }
  CKernel kernel2_apply(const FieldConfig&, const Variation&) const override {
    return CKernel(lat_->n_sites() * tgt_->dim(), 0.0);
  }
  FunctionalClass declared_class() const override { return FunctionalClass::Microlocal; }
  std::optional<SiteSet> declared_support() const override {
    return SiteSet(lat_->n_t(), lat_->n_x());
  }

 private:
  LatticePtr lat_;
  TargetPtr tgt_;
  CValue c_;
};

class LinearSmeared final : public Functional {
 public:
  LinearSmeared(LatticePtr lat, TargetPtr tgt, std::vector<double> f)
      : lat_(std::move(lat)), tgt_(std::move(tgt)), f_(std::move(f)) {
    if (f_.size() != lat_->n_sites() * static_cast<std::size_t>(tgt_->dim()))
      throw std::invalid_argument("smearing has wrong shape");
  }
  LatticePtr lattice_ptr() const override { return lat_; }
  TargetPtr target_ptr() const override { return tgt_; }
  CValue evaluate(const FieldConfig& phi) const override {
    const int n = tgt_->dim();
    std::vector<double> terms(lat_->n_sites());
    for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += f_[idx * n + i] * phi.site(idx)[i];
      terms[idx] = s * lat_->vol_weight(idx);
    }
    return pairwise_sum(terms);
  }
  bool has_kernel1() const override { return true; }
  CKernel kernel1(const FieldConfig&) const override { return to_ckernel(f_); }
  bool has_kernel2() const override { return true; }
  CValue kernel2_form(const FieldConfig& phi, const Variation& X,
                      const Variation& Y) const override {
    return chart_correction_form(*lat_, *tgt_, phi, to_ckernel(f_), X, Y);
  }
  CKernel kernel2_apply(const FieldConfig& phi, const Variation& X) const override {
    return chart_correction_apply(*lat_, *tgt_, phi, to_ckernel(f_), X);
  }
  FunctionalClass declared_class() const override { return FunctionalClass::Microlocal; }
  std::optional<SiteSet> declared_support() const override {
    SiteSet s(lat_->n_t(), lat_->n_x());
    const int n = tgt_->dim();
    for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx)
      for (int i = 0; i < n; ++i)
        if (f_[idx * n + i] != 0.0) s.insert(lat_->site(idx));
    return s;
  }

 private:
  LatticePtr lat_;
  TargetPtr tgt_;
  std::vector<double> f_;
};

class MonomialSmeared final : public Functional {
 public:
  MonomialSmeared(LatticePtr lat, TargetPtr tgt, std::vector<double> w, int comp, int power)
      : lat_(std::move(lat)), tgt_(std::move(tgt)), w_(std::move(w)), comp_(comp), power_(power) {
    if (w_.size() != lat_->n_sites()) throw std::invalid_argument("weight has wrong shape");
    if (power_ < 1 || power_ > 3) throw std::invalid_argument("power must be 1, 2 or 3");
  }
  LatticePtr lattice_ptr() const override { return lat_; }
  TargetPtr target_ptr() const override { return tgt_; }
  CValue evaluate(const FieldConfig& phi) const override {
    std::vector<double> terms(lat_->n_sites());
    for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx)
      terms[idx] = w_[idx] * std::pow(phi.site(idx)[comp_], power_) * lat_->vol_weight(idx);
    return pairwise_sum(terms);
  }
  bool has_kernel1() const override { return true; }
  CKernel kernel1(const FieldConfig& phi) const override {
    const int n = tgt_->dim();
    CKernel out(lat_->n_sites() * n, 0.0);
    for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx)
      out[idx * n + comp_] = power_ * w_[idx] * std::pow(phi.site(idx)[comp_], power_ - 1);
    return out;
  }
  bool has_kernel2() const override { return true; }
  CValue kernel2_form(const FieldConfig& phi, const Variation& X,
                      const Variation& Y) const override {
    const int n = tgt_->dim();
    std::vector<double> terms(lat_->n_sites());
    for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx)
      terms[idx] = power_ * (power_ - 1) * w_[idx] * std::pow(phi.site(idx)[comp_], power_ - 2) *
                   X.components()[idx * n + comp_] * Y.components()[idx * n + comp_] *
                   lat_->vol_weight(idx);
    return pairwise_sum(terms) +
           chart_correction_form(*lat_, *tgt_, phi, kernel1(phi), X, Y);
  }
  CKernel kernel2_apply(const FieldConfig& phi, const Variation& X) const override {
    const int n = tgt_->dim();
    CKernel out = chart_correction_apply(*lat_, *tgt_, phi, kernel1(phi), X);
    for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx)
      out[idx * n + comp_] += power_ * (power_ - 1) * w_[idx] *
                              std::pow(phi.site(idx)[comp_], power_ - 2) *
                              X.components()[idx * n + comp_];
    return out;
  }
  FunctionalClass declared_class() const override { return FunctionalClass::Microlocal; }
  std::optional<SiteSet> declared_support() const override {
    SiteSet s(lat_->n_t(), lat_->n_x());
    for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx)
      if (w_[idx] != 0.0) s.insert(lat_->site(idx));
    return s;
  }

 private:
  LatticePtr lat_;
  TargetPtr tgt_;
  std::vector<double> w_;
  int comp_, power_;
};

class ActionFunctional final : public Functional {
 public:
  ActionFunctional(LatticePtr lat, TargetPtr tgt, DensityPtr density, std::vector<double> window,
                   bool smooth_window)
      : lat_(std::move(lat)),
        tgt_(std::move(tgt)),
        gl_(std::move(density)),
        window_(std::move(window)),
        smooth_(smooth_window) {
    if (window_.size() != lat_->n_sites()) throw std::invalid_argument("window has wrong shape");
  }
  LatticePtr lattice_ptr() const override { return lat_; }
  TargetPtr target_ptr() const override { return tgt_; }
  const GeneralizedLagrangian& lagrangian() const { return gl_; }
  CValue evaluate(const FieldConfig& phi) const override {
    return gl_.evaluate_action(window_, phi);
  }
  bool has_kernel1() const override { return true; }
  CKernel kernel1(const FieldConfig& phi) const override {
    return to_ckernel(gl_.first_variation_kernel(phi, window_));
  }
  bool has_kernel2() const override { return true; }
  CValue kernel2_form(const FieldConfig& phi, const Variation& X,
                      const Variation& Y) const override {
    return gl_.hessian_form(phi, window_, X, Y) +
           chart_correction_form(*lat_, *tgt_, phi, kernel1(phi), X, Y);
  }
  CKernel kernel2_apply(const FieldConfig& phi, const Variation& X) const override {
    std::vector<double> coord = gl_.hessian_apply(phi, window_, X);
    CKernel out = chart_correction_apply(*lat_, *tgt_, phi, kernel1(phi), X);
    for (std::size_t i = 0; i < coord.size(); ++i) out[i] += coord[i];
    return out;
  }
  FunctionalClass declared_class() const override {
    return smooth_ ? FunctionalClass::Microlocal : FunctionalClass::Local;
  }
  std::optional<SiteSet> declared_support() const override {
    SiteSet s(lat_->n_t(), lat_->n_x());
    for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx)
      if (window_[idx] != 0.0) s.insert(lat_->site(idx));
    return s;
  }

 private:
  LatticePtr lat_;
  TargetPtr tgt_;
  GeneralizedLagrangian gl_;
  std::vector<double> window_;
  bool smooth_;
};

class SupFunctional final : public Functional {
 public:
  SupFunctional(LatticePtr lat, TargetPtr tgt) : lat_(std::move(lat)), tgt_(std::move(tgt)) {}
  LatticePtr lattice_ptr() const override { return lat_; }
  TargetPtr target_ptr() const override { return tgt_; }
  CValue evaluate(const FieldConfig& phi) const override {
    const int n = tgt_->dim();
    double sup = 0.0;
    for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += phi.site(idx)[i] * phi.site(idx)[i];
      sup = std::max(sup, s);
    }
    return 1.0 / (1.0 + sup);
  }

 private:
  LatticePtr lat_;
  TargetPtr tgt_;
};

class OnShellFunctional final : public Functional {
 public:
  OnShellFunctional(DensityPtr density, LatticePtr lat, TargetPtr tgt,
                    std::optional<Variation> x_fixed, std::vector<double> affine_weight,
                    Vec affine_center)
      : lat_(std::move(lat)),
        tgt_(std::move(tgt)),
        gl_(std::move(density)),
        x_fixed_(std::move(x_fixed)),
        affine_weight_(std::move(affine_weight)),
        affine_center_(std::move(affine_center)) {}

  LatticePtr lattice_ptr() const override { return lat_; }
  TargetPtr target_ptr() const override { return tgt_; }

  Variation field_at(const FieldConfig& phi) const {
    const int n = tgt_->dim();
    std::vector<double> comp(lat_->n_sites() * n, 0.0);
    if (x_fixed_) comp = x_fixed_->components();
    if (!affine_weight_.empty())
      for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx)
        for (int i = 0; i < n; ++i)
          comp[idx * n + i] += affine_weight_[idx] * (phi.site(idx)[i] - affine_center_[i]);
    return Variation(lat_, tgt_, std::move(comp));
  }

  CValue evaluate(const FieldConfig& phi) const override {
    const int n = tgt_->dim();
    ELKernel E = gl_.el_kernel(phi);
    Variation X = field_at(phi);
    std::vector<double> terms(lat_->n_sites());
    for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += X.components()[idx * n + i] * E.comp[idx * n + i];
      terms[idx] = s * lat_->vol_weight(idx);
    }
    return pairwise_sum(terms);
  }
  bool has_kernel1() const override { return true; }
  CKernel kernel1(const FieldConfig& phi) const override {
    const int n = tgt_->dim();
    Variation X = field_at(phi);
    std::vector<double> k = gl_.delta_el_apply(phi, X);
    if (!affine_weight_.empty()) {
      ELKernel E = gl_.el_kernel(phi);
      for (std::size_t idx = 0; idx < lat_->n_sites(); ++idx)
        for (int i = 0; i < n; ++i) k[idx * n + i] += affine_weight_[idx] * E.comp[idx * n + i];
    }
    return to_ckernel(k);
  }

 private:
  LatticePtr lat_;
  TargetPtr tgt_;
  GeneralizedLagrangian gl_;
  std::optional<Variation> x_fixed_;
  std::vector<double> affine_weight_;
  Vec affine_center_;
};

class ConjugateFunctional final : public Functional {
 public:
  explicit ConjugateFunctional(FunctionalPtr child) : child_(std::move(child)) {}
  LatticePtr lattice_ptr() const override { return child_->lattice_ptr(); }
  TargetPtr target_ptr() const override { return child_->target_ptr(); }
  CValue evaluate(const FieldConfig& phi) const override {
    return std::conj(child_->evaluate(phi));
  }
  bool has_kernel1() const override { return child_->has_kernel1(); }
  CKernel kernel1(const FieldConfig& phi) const override {
    CKernel k = child_->kernel1(phi);
    for (auto& v : k) v = std::conj(v);
    return k;
  }
  bool has_kernel2() const override { return child_->has_kernel2(); }
  CValue kernel2_form(const FieldConfig& phi, const Variation& X,
                      const Variation& Y) const override {
    return std::conj(child_->kernel2_form(phi, X, Y));
  }
  CKernel kernel2_apply(const FieldConfig& phi, const Variation& X) const override {
    CKernel k = child_->kernel2_apply(phi, X);
    for (auto& v : k) v = std::conj(v);
    return k;
  }
  FunctionalClass declared_class() const override { return child_->declared_class(); }
  std::optional<SiteSet> declared_support() const override { return child_->declared_support(); }

 private:
  FunctionalPtr child_;
};

class ComposeFunctional final : public Functional {
 public:
  ComposeFunctional(SmoothMap psi, std::vector<FunctionalPtr> children)
      : psi_(std::move(psi)), children_(std::move(children)) {
    if (children_.empty()) throw std::invalid_argument("compose needs children");
    for (const auto& c : children_)
      if (c->lattice_ptr() != children_[0]->lattice_ptr())
        throw std::invalid_argument("mismatched lattices");
  }
  LatticePtr lattice_ptr() const override { return children_[0]->lattice_ptr(); }
  TargetPtr target_ptr() const override { return children_[0]->target_ptr(); }

  std::vector<CValue> child_values(const FieldConfig& phi) const {
    std::vector<CValue> z(children_.size());
    for (std::size_t j = 0; j < children_.size(); ++j) z[j] = children_[j]->evaluate(phi);
    return z;
  }

  CValue evaluate(const FieldConfig& phi) const override { return psi_.value(child_values(phi)); }

  bool has_kernel1() const override {
    if (!psi_.d1) return false;
    for (const auto& c : children_)
      if (!c->has_kernel1()) return false;
    return true;
  }
  CKernel kernel1(const FieldConfig& phi) const override {
    if (!has_kernel1()) missing_kernels();
    std::vector<CValue> z = child_values(phi);
    CKernel out(lattice_ptr()->n_sites() * dim(), 0.0);
    for (std::size_t j = 0; j < children_.size(); ++j) {
      const CValue w = psi_.d1(static_cast<int>(j), z);
      if (w == CValue(0.0)) continue;
      CKernel kj = children_[j]->kernel1(phi);
      for (std::size_t q = 0; q < out.size(); ++q) out[q] += w * kj[q];
    }
    return out;
  }

  bool has_kernel2() const override {
    if (!psi_.d1 || !psi_.d2) return false;
    for (const auto& c : children_)
      if (!c->has_kernel1() || !c->has_kernel2()) return false;
    return true;
  }
  CValue kernel2_form(const FieldConfig& phi, const Variation& X,
                      const Variation& Y) const override {
    if (!has_kernel2()) missing_kernels();
    std::vector<CValue> z = child_values(phi);
    const auto& lat = *lattice_ptr();
    CValue acc = 0.0;
    std::vector<CValue> dX(children_.size()), dY(children_.size());
    for (std::size_t j = 0; j < children_.size(); ++j) {
      CKernel kj = children_[j]->kernel1(phi);
      dX[j] = pair_kernel(lat, kj, X);
      dY[j] = pair_kernel(lat, kj, Y);
      acc += psi_.d1(static_cast<int>(j), z) * children_[j]->kernel2_form(phi, X, Y);
    }
    for (std::size_t j = 0; j < children_.size(); ++j)
      for (std::size_t k = 0; k < children_.size(); ++k)
        acc += psi_.d2(static_cast<int>(j), static_cast<int>(k), z) * dX[j] * dY[k];
    return acc;
  }
  CKernel kernel2_apply(const FieldConfig& phi, const Variation& X) const override {
    if (!has_kernel2()) missing_kernels();
    std::vector<CValue> z = child_values(phi);
    const auto& lat = *lattice_ptr();
    CKernel out(lat.n_sites() * dim(), 0.0);
    std::vector<CValue> dX(children_.size());
    std::vector<CKernel> k1s(children_.size());
    for (std::size_t j = 0; j < children_.size(); ++j) {
      k1s[j] = children_[j]->kernel1(phi);
      dX[j] = pair_kernel(lat, k1s[j], X);
      const CValue w = psi_.d1(static_cast<int>(j), z);
      if (w != CValue(0.0)) {
        CKernel kj = children_[j]->kernel2_apply(phi, X);
        for (std::size_t q = 0; q < out.size(); ++q) out[q] += w * kj[q];
      }
    }
    for (std::size_t j = 0; j < children_.size(); ++j)
      for (std::size_t k = 0; k < children_.size(); ++k) {
        const CValue w = psi_.d2(static_cast<int>(j), static_cast<int>(k), z) * dX[j];
        if (w == CValue(0.0)) continue;
        for (std::size_t q = 0; q < out.size(); ++q) out[q] += w * k1s[k][q];
      }
    return out;
  }
  FunctionalClass declared_class() const override {
    // products/compositions of smooth functionals stay regular but are in
    // general no longer local
    return FunctionalClass::Regular;
  }
  std::optional<SiteSet> declared_support() const override {
    SiteSet s(lattice_ptr()->n_t(), lattice_ptr()->n_x());
    for (const auto& c : children_) {
      auto cs = c->declared_support();
      if (!cs) return std::nullopt;
      s.unite(*cs);
    }
    return s;
  }

 private:
  SmoothMap psi_;
  std::vector<FunctionalPtr> children_;
};

}  // namespace

FunctionalPtr make_constant_functional(LatticePtr lat, TargetPtr tgt, CValue c) {
  return std::make_shared<ConstantFunctional>(std::move(lat), std::move(tgt), c);
}
FunctionalPtr make_unit_functional(LatticePtr lat, TargetPtr tgt) {
  return make_constant_functional(std::move(lat), std::move(tgt), 1.0);
}
FunctionalPtr make_linear_smeared(LatticePtr lat, TargetPtr tgt, std::vector<double> smearing) {
  return std::make_shared<LinearSmeared>(std::move(lat), std::move(tgt), std::move(smearing));
}
FunctionalPtr make_point_probe(LatticePtr lat, TargetPtr tgt, SitePoint site, int comp) {
  const int n = tgt->dim();
  std::vector<double> f(lat->n_sites() * n, 0.0);
  const std::size_t idx = lat->index({site.it, lat->wrap_x(site.ix)});
  f[idx * n + comp] = 1.0 / lat->vol_weight(idx);
  return make_linear_smeared(std::move(lat), std::move(tgt), std::move(f));
}
FunctionalPtr make_monomial_smeared(LatticePtr lat, TargetPtr tgt, std::vector<double> weight,
                                    int comp, int power) {
  return std::make_shared<MonomialSmeared>(std::move(lat), std::move(tgt), std::move(weight), comp,
                                           power);
}
FunctionalPtr make_action_functional(LatticePtr lat, TargetPtr tgt, DensityPtr density,
                                     std::vector<double> window, bool smooth_window) {
  return std::make_shared<ActionFunctional>(std::move(lat), std::move(tgt), std::move(density),
                                            std::move(window), smooth_window);
}
FunctionalPtr make_sup_functional(LatticePtr lat, TargetPtr tgt) {
  return std::make_shared<SupFunctional>(std::move(lat), std::move(tgt));
}
FunctionalPtr make_onshell_element(DensityPtr density, LatticePtr lat, TargetPtr tgt,
                                   Variation x_fixed) {
  return std::make_shared<OnShellFunctional>(std::move(density), std::move(lat), std::move(tgt),
                                             std::move(x_fixed), std::vector<double>{}, Vec{});
}
FunctionalPtr make_onshell_element_affine(DensityPtr density, LatticePtr lat, TargetPtr tgt,
                                          std::vector<double> affine_weight, Vec affine_center) {
  return std::make_shared<OnShellFunctional>(std::move(density), std::move(lat), std::move(tgt),
                                             std::nullopt, std::move(affine_weight),
                                             std::move(affine_center));
}

FunctionalPtr operator_sum(FunctionalPtr F, FunctionalPtr G) {
  SmoothMap psi;
  psi.value = [](const std::vector<CValue>& z) { return z[0] + z[1]; };
  psi.d1 = [](int, const std::vector<CValue>&) { return CValue(1.0); };
  psi.d2 = [](int, int, const std::vector<CValue>&) { return CValue(0.0); };
  return smooth_compose(std::move(psi), {std::move(F), std::move(G)});
}
FunctionalPtr operator_scale(CValue zc, FunctionalPtr F) {
  SmoothMap psi;
  psi.value = [zc](const std::vector<CValue>& z) { return zc * z[0]; };
  psi.d1 = [zc](int, const std::vector<CValue>&) { return zc; };
  psi.d2 = [](int, int, const std::vector<CValue>&) { return CValue(0.0); };
  return smooth_compose(std::move(psi), {std::move(F)});
}
FunctionalPtr operator_product(FunctionalPtr F, FunctionalPtr G) {
  SmoothMap psi;
  psi.value = [](const std::vector<CValue>& z) { return z[0] * z[1]; };
  psi.d1 = [](int j, const std::vector<CValue>& z) { return z[1 - j]; };
  psi.d2 = [](int j, int k, const std::vector<CValue>&) { return j != k ? CValue(1.0) : CValue(0.0); };
  return smooth_compose(std::move(psi), {std::move(F), std::move(G)});
}
FunctionalPtr operator_conjugate(FunctionalPtr F) {
  return std::make_shared<ConjugateFunctional>(std::move(F));
}

FunctionalPtr smooth_compose(SmoothMap psi, std::vector<FunctionalPtr> children) {
  return std::make_shared<ComposeFunctional>(std::move(psi), std::move(children));
}

FunctionalPtr make_regfunc(LatticePtr lat, TargetPtr tgt, DensityPtr density,
                           std::vector<double> window, double inner, double outer) {
  FunctionalPtr S =
      make_action_functional(std::move(lat), std::move(tgt), std::move(density), std::move(window));
  const double a = inner, b = outer;
  // chi(u) = 1 for u <= a, 0 for u >= b, logistic blend 1/(1+e^g) between,
  // g = 1/(b-u) - 1/(u-a).
  auto chi012 = [a, b](double u, double& c0, double& c1, double& c2) {
    if (u <= a) {
      c0 = 1.0;
      c1 = c2 = 0.0;
      return;
    }
    if (u >= b) {
      c0 = c1 = c2 = 0.0;
      return;
    }
    const double g = 1.0 / (b - u) - 1.0 / (u - a);
    const double gp = 1.0 / ((b - u) * (b - u)) + 1.0 / ((u - a) * (u - a));
    const double gpp = 2.0 / std::pow(b - u, 3) - 2.0 / std::pow(u - a, 3);
    const double e = std::exp(std::min(g, 500.0));
    const double c = 1.0 / (1.0 + e);
    c0 = c;
    c1 = -c * (1.0 - c) * gp;
    c2 = -(c1 * (1.0 - 2.0 * c) * gp + c * (1.0 - c) * gpp);
  };
  SmoothMap psi;
  psi.value = [chi012](const std::vector<CValue>& z) {
    double c0, c1, c2;
    chi012(z[0].real() * z[0].real(), c0, c1, c2);
    return CValue(std::exp(1.0 - c0));
  };
  psi.d1 = [chi012](int, const std::vector<CValue>& z) {
    const double s = z[0].real();
    double c0, c1, c2;
    chi012(s * s, c0, c1, c2);
    return CValue(-c1 * 2.0 * s * std::exp(1.0 - c0));
  };
  psi.d2 = [chi012](int, int, const std::vector<CValue>& z) {
    const double s = z[0].real();
    double c0, c1, c2;
    chi012(s * s, c0, c1, c2);
    const double dchi = c1 * 2.0 * s;                    // d/ds chi(s^2)
    const double d2chi = c2 * 4.0 * s * s + 2.0 * c1;    // d2/ds2 chi(s^2)
    return CValue((-d2chi + dchi * dchi) * std::exp(1.0 - c0));
  };
  return smooth_compose(std::move(psi), {std::move(S)});
}

std::pair<double, double> regfunc_bounds_for_pair(const DensityPtr& density,
                                                  const FieldConfig& phi0, const Variation& X1,
                                                  const Variation& Xm1) {
  GeneralizedLagrangian gl(density);
  const std::vector<double> full(phi0.lattice().n_sites(), 1.0);
  auto s2 = [&](const FieldConfig& p) {
    const double s = gl.evaluate_action(full, p);
    return s * s;
  };
  std::vector<double> v = {s2(phi0), s2(chart_backward(phi0, X1)),
                           s2(chart_backward(phi0, Xm1)),
                           s2(chart_backward(phi0, X1.plus(Xm1)))};
  std::sort(v.begin(), v.end());
  // center the transition on the second-largest value (chi = 1/2 exactly at
  // the midpoint of the bounds) and keep the other points outside the blend
  const double w = std::max(1e-6, std::min(v[2] - v[1], v[3] - v[2]));
  return {v[2] - w, v[2] + w};
}

SiteSet probe_support(const Functional& F, const std::vector<FieldConfig>& samples,
                      double probe_amplitude) {
  const auto& lat = *F.lattice_ptr();
  const int n = F.dim();
  SiteSet out(lat.n_t(), lat.n_x());
  for (const auto& phi : samples) {
    if (F.has_kernel1()) {
      CKernel k = F.kernel1(phi);
      for (std::size_t idx = 0; idx < lat.n_sites(); ++idx)
        for (int i = 0; i < n; ++i)
          if (k[idx * n + i] != CValue(0.0)) {
            out.insert(lat.site(idx));
            break;
          }
    } else {
      const CValue base = F.evaluate(phi);
      const double scale = std::max(1.0, std::abs(base));
      for (std::size_t idx = 0; idx < lat.n_sites(); ++idx) {
        bool hit = false;
        for (int i = 0; i < n && !hit; ++i) {
          std::vector<double> comp(lat.n_sites() * n, 0.0);
          comp[idx * n + i] = probe_amplitude;
          FieldConfig probed = chart_backward(phi, Variation(F.lattice_ptr(), F.target_ptr(), comp));
          if (std::abs(F.evaluate(probed) - base) > 1e-12 * scale) hit = true;
        }
        if (hit) out.insert(lat.site(idx));
      }
    }
  }
  return out;
}

CValue covariant_hessian(const Functional& F, const FieldConfig& phi,
                         const PullbackConnection& conn, const Variation& X, const Variation& Y) {
  if (!F.has_kernel1() || !F.has_kernel2()) throw std::runtime_error("missing kernels");
  Variation GXY = conn.apply(X, Y);
  return F.kernel2_form(phi, X, Y) + pair_kernel(*F.lattice_ptr(), F.kernel1(phi), GXY);
}

AdditivityReport additivity_test(const Functional& F, const FieldConfig& phi0, const Variation& X1,
                                 const Variation& Xm1, double tol) {
  if (X1.support().intersects(Xm1.support())) throw std::runtime_error("supports not disjoint");
  AdditivityReport rep;
  const CValue f0 = F.evaluate(phi0);
  rep.lhs = F.evaluate(chart_backward(phi0, X1.plus(Xm1)));
  rep.rhs = F.evaluate(chart_backward(phi0, X1)) - f0 + F.evaluate(chart_backward(phi0, Xm1));
  rep.scale = std::max({1.0, std::abs(rep.lhs), std::abs(rep.rhs), std::abs(f0)});
  rep.deviation = std::abs(rep.lhs - rep.rhs);
  rep.passed = rep.deviation <= tol * rep.scale;
  return rep;
}

AdditivityReport global_additivity_test(const Functional& F, const FieldConfig& phi1,
                                        const FieldConfig& phi0, const FieldConfig& phi_m1,
                                        double tol) {
  InterpolationResult ir = interpolate_sections(phi0, phi1, phi_m1);
  AdditivityReport rep;
  rep.lhs = F.evaluate(ir.glued);
  rep.rhs = F.evaluate(phi1) - F.evaluate(phi0) + F.evaluate(phi_m1);
  rep.scale = std::max({1.0, std::abs(rep.lhs), std::abs(rep.rhs)});
  rep.deviation = std::abs(rep.lhs - rep.rhs);
  rep.passed = rep.deviation <= tol * rep.scale;
  return rep;
}

ClassReport classify(const Functional& F, const std::vector<FieldConfig>& samples, double tol) {
  if (samples.empty()) throw std::invalid_argument("classify needs sample sections");
  const auto& lat = *F.lattice_ptr();
  const int n = F.dim();
  const std::size_t N = lat.n_sites();
  ClassReport rep;
  const FieldConfig& phi = samples.front();

  auto basis = [&](std::size_t idx, int i, double amp) {
    std::vector<double> comp(N * n, 0.0);
    comp[idx * n + i] = amp;
    return Variation(F.lattice_ptr(), F.target_ptr(), comp);
  };

  bool finite = true, consistent = true;

  if (!F.has_kernel1()) {
    // differentiability scan: one-sided derivatives must agree
    const double amp = 1e-3;
    CounterRng rng(2024, N);
    for (int rep_i = 0; rep_i < 64 && consistent; ++rep_i) {
      const std::size_t p = rng.next_u64() % N;
      const int i = static_cast<int>(rng.next_u64() % n);
      const double f0 = F.evaluate(phi).real();
      const double fp = F.evaluate(chart_backward(phi, basis(p, i, amp))).real();
      const double fm = F.evaluate(chart_backward(phi, basis(p, i, -amp))).real();
      const double dplus = (fp - f0) / amp;
      const double dminus = (f0 - fm) / amp;
      const double m = std::max({1.0, std::abs(dplus), std::abs(dminus)});
      if (std::abs(dplus - dminus) > 0.05 * m) consistent = false;
    }
    if (!consistent) {
      rep.tag = FunctionalClass::Generic;
      return rep;
    }
  }

  // Hessian probe: full stencil-band, sampled far pairs when the lattice is
  // large. Entries come from kernel2 when present, else from chart finite
  // differences of evaluate.
  auto hess_entry = [&](std::size_t p, int i, std::size_t q, int j, double amp) -> double {
    if (F.has_kernel2())
      return F.kernel2_form(phi, basis(p, i, 1.0), basis(q, j, 1.0)).real();
    const double f00 = F.evaluate(phi).real();
    const double fp = F.evaluate(chart_backward(phi, basis(p, i, amp))).real();
    const double fq = F.evaluate(chart_backward(phi, basis(q, j, amp))).real();
    const double fpq =
        F.evaluate(chart_backward(phi, basis(p, i, amp).plus(basis(q, j, amp)))).real();
    return (fpq - fp - fq + f00) / (amp * amp);
  };

  double offdiag = 0.0, scale = 0.0;
  if (F.has_kernel2()) {
    // column probing: one kernel2_apply gives a full Hessian row
    CounterRng rng(4711, N);
    const std::size_t cols = std::min<std::size_t>(N * n, 128);
    for (std::size_t k = 0; k < cols; ++k) {
      const std::size_t p = (cols == N * n) ? k / n : rng.next_u64() % N;
      const int i = (cols == N * n) ? static_cast<int>(k % n) : static_cast<int>(rng.next_u64() % n);
      CKernel col = F.kernel2_apply(phi, basis(p, i, 1.0));
      SitePoint sp = lat.site(p);
      for (std::size_t q = 0; q < N; ++q)
        for (int j = 0; j < n; ++j) {
          const double v = std::abs(col[q * n + j]);
          if (!std::isfinite(v)) finite = false;
          scale = std::max(scale, v);
          SitePoint sq = lat.site(q);
          const int dist = std::max(std::abs(sp.it - sq.it), lat.cyclic_distance(sp.ix, sq.ix));
          if (dist > 2) offdiag = std::max(offdiag, v);
        }
    }
  } else {
    auto visit_pair = [&](std::size_t p, int i, std::size_t q, int j) {
      const double v = hess_entry(p, i, q, j, 1e-3);
      if (!std::isfinite(v)) finite = false;
      const double v2 = hess_entry(p, i, q, j, 5e-4);
      const double m = std::max({1.0, std::abs(v), std::abs(v2)});
      if (std::abs(v - v2) > 0.05 * m) consistent = false;
      scale = std::max(scale, std::abs(v));
      SitePoint sp = lat.site(p), sq = lat.site(q);
      const int dist = std::max(std::abs(sp.it - sq.it), lat.cyclic_distance(sp.ix, sq.ix));
      if (dist > 2) offdiag = std::max(offdiag, std::abs(v));
    };
    const std::size_t budget = 2000;
    if (N * n * N * n <= budget * 4) {
      for (std::size_t p = 0; p < N; ++p)
        for (int i = 0; i < n; ++i)
          for (std::size_t q = p; q < N; ++q)
            for (int j = 0; j < n; ++j) visit_pair(p, i, q, j);
    } else {
      CounterRng rng(4711, N);
      for (std::size_t k = 0; k < budget; ++k) {
        const std::size_t p = rng.next_u64() % N;
        const std::size_t q = rng.next_u64() % N;
        visit_pair(p, static_cast<int>(rng.next_u64() % n), q,
                   static_cast<int>(rng.next_u64() % n));
      }
    }
  }

  rep.max_offdiagonal = offdiag;
  rep.regular = finite && consistent;
  rep.local = rep.regular && offdiag <= tol * std::max(1.0, scale);

  if (rep.local && F.has_kernel1()) {
    // boundary-spike detector on the locally averaged kernel magnitude:
    // zero crossings of a smooth kernel are filled in by the 3x3 average,
    // while a characteristic-window ridge keeps an O(1/dx) contrast.
    double max_jump = 0.0;
    bool defined = true;
    for (const auto& s : samples) {
      CKernel k = F.kernel1(s);
      std::vector<double> mag(N, 0.0), avg(N, 0.0);
      for (std::size_t idx = 0; idx < N; ++idx) {
        double m = 0.0;
        for (int i = 0; i < n; ++i) {
          if (!std::isfinite(std::abs(k[idx * n + i]))) defined = false;
          m += std::norm(k[idx * n + i]);
        }
        mag[idx] = std::sqrt(m);
      }
      double mx = 0.0;
      for (int it = 0; it < lat.n_t(); ++it)
        for (int ix = 0; ix < lat.n_x(); ++ix) {
          double sum = 0.0;
          int cnt = 0;
          for (int a = -1; a <= 1; ++a) {
            const int qt = it + a;
            if (qt < 0 || qt >= lat.n_t()) continue;
            for (int b = -1; b <= 1; ++b) {
              sum += mag[lat.index(qt, lat.wrap_x(ix + b))];
              ++cnt;
            }
          }
          avg[lat.index(it, ix)] = sum / cnt;
          mx = std::max(mx, avg[lat.index(it, ix)]);
        }
      const double floor = 0.02 * std::max(1e-300, mx);
      for (int it = 0; it < lat.n_t(); ++it)
        for (int ix = 0; ix < lat.n_x(); ++ix) {
          const double m0 = avg[lat.index(it, ix)];
          const double m1 = (it + 1 < lat.n_t()) ? avg[lat.index(it + 1, ix)] : m0;
          const double m2 = avg[lat.index(it, (ix + 1) % lat.n_x())];
          for (double mn : {m1, m2})
            if (m0 > floor && mn > floor)
              max_jump = std::max(max_jump, std::max(m0 / mn, mn / m0));
        }
    }
    rep.max_kernel_jump = max_jump;
    rep.boundary_singular = max_jump > 10.0;
    rep.microlocal_surrogate = defined && !rep.boundary_singular;
  }

  rep.tag = FunctionalClass::Generic;
  if (rep.regular) rep.tag = FunctionalClass::Regular;
  if (rep.local) rep.tag = FunctionalClass::Local;
  if (rep.microlocal_surrogate) rep.tag = FunctionalClass::Microlocal;
  return rep;
}

std::vector<double> reconstruct_density(const Functional& F, const FieldConfig& phi0,
                                        const FieldConfig& phi) {
  if (!F.has_kernel1()) throw std::runtime_error("missing kernels");
  static const double kNodes[8] = {0.0950125098376374, 0.2816035507792589, 0.4580167776572274,
                                   0.6178762444026438, 0.7554044083550030, 0.8656312023878318,
                                   0.9445750230732326, 0.9894009349916499};
  static const double kWeights[8] = {0.1894506104550685, 0.1826034150449236, 0.1691565193950025,
                                     0.1495959888165767, 0.1246289712555339, 0.0951585116824928,
                                     0.0622535239386479, 0.0271524594117541};
  const auto& lat = *F.lattice_ptr();
  const auto& tgt = *F.target_ptr();
  const int n = F.dim();
  Variation X = chart_forward(phi0, phi);
  std::vector<double> theta(lat.n_sites(), 0.0);
  for (int half = 0; half < 2; ++half)
    for (int k = 0; k < 8; ++k) {
      const double t = 0.5 + (half == 0 ? -0.5 : 0.5) * kNodes[k];
      const double w = 0.5 * kWeights[k];
      FieldConfig psi = chart_backward(phi0, X.scaled(t));
      CKernel k1 = F.kernel1(psi);
      parallel_for(lat.n_sites(), [&](std::size_t idx) {
        Vec push;
        if (tgt.is_flat()) {
          push = X.site_vec(idx);
        } else {
          Vec tv = X.site_vec(idx);
          for (auto& e : tv) e *= t;
          push = tgt.exp_map_dv(phi0.site_vec(idx), tv, X.site_vec(idx));
        }
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += k1[idx * n + i].real() * push[i];
        theta[idx] += w * s;
      });
    }
  return theta;
}

}  // namespace cft
