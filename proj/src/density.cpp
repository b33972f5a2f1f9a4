#include "cft/density.hpp"

#include <cstring>
#include <stdexcept>

namespace cft {

namespace {

// Inverse diagonal metric components at a site.
inline void ginv(const LorentzianLattice& lat, std::size_t idx, double* g) {
  g[0] = 1.0 / lat.g_tt(idx);  // g^{tt} < 0
  g[1] = 1.0 / lat.g_xx(idx);  // g^{xx} > 0
}

class FreeScalarDensity final : public LagrangianDensity {
 public:
  FreeScalarDensity(int n, double mass) : n_(n), mass2_(mass * mass) {}

  int components() const override { return n_; }
  std::string name() const override { return mass2_ == 0.0 ? "free_scalar" : "kg_mass"; }
  bool has_third_partials() const override { return true; }

  double eval(const LorentzianLattice& lat, std::size_t idx, const Jet& jet) const override {
    double g[2];
    ginv(lat, idx, g);
    double s = 0.0;
    for (int mu = 0; mu < 2; ++mu)
      for (int i = 0; i < n_; ++i) s += 0.5 * g[mu] * jet.ymu[mu * n_ + i] * jet.ymu[mu * n_ + i];
    for (int i = 0; i < n_; ++i) s += 0.5 * mass2_ * jet.y[i] * jet.y[i];
    return s;
  }
  void d_y(const LorentzianLattice&, std::size_t, const Jet& jet, double* out) const override {
    for (int i = 0; i < n_; ++i) out[i] = mass2_ * jet.y[i];
  }
  void d_ymu(const LorentzianLattice& lat, std::size_t idx, const Jet& jet,
             double* out) const override {
    double g[2];
    ginv(lat, idx, g);
    for (int mu = 0; mu < 2; ++mu)
      for (int i = 0; i < n_; ++i) out[mu * n_ + i] = g[mu] * jet.ymu[mu * n_ + i];
  }
  void d2_yy(const LorentzianLattice&, std::size_t, const Jet&, double* out) const override {
    std::memset(out, 0, sizeof(double) * n_ * n_);
    for (int i = 0; i < n_; ++i) out[i * n_ + i] = mass2_;
  }
  void d2_ymu_y(const LorentzianLattice&, std::size_t, const Jet&, double* out) const override {
    std::memset(out, 0, sizeof(double) * 2 * n_ * n_);
  }
  void d2_ymu_ymu(const LorentzianLattice& lat, std::size_t idx, const Jet&,
                  double* out) const override {
    const int M = 2 * n_;
    double g[2];
    ginv(lat, idx, g);
    std::memset(out, 0, sizeof(double) * M * M);
    for (int mu = 0; mu < 2; ++mu)
      for (int i = 0; i < n_; ++i) out[(mu * n_ + i) * M + (mu * n_ + i)] = g[mu];
  }

 private:
  int n_;
  double mass2_;
};

class WaveMapDensity final : public LagrangianDensity {
 public:
  explicit WaveMapDensity(TargetPtr target) : tgt_(std::move(target)), n_(tgt_->dim()) {}

  int components() const override { return n_; }
  std::string name() const override { return "wave_map"; }
  bool has_third_partials() const override { return true; }

  double eval(const LorentzianLattice& lat, std::size_t idx, const Jet& jet) const override {
    double g[2], h[16];
    ginv(lat, idx, g);
    tgt_->metric(Vec(jet.y, jet.y + n_), h);
    double s = 0.0;
    for (int mu = 0; mu < 2; ++mu)
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < n_; ++j)
          s += 0.25 * g[mu] * h[i * n_ + j] * jet.ymu[mu * n_ + i] * jet.ymu[mu * n_ + j];
    return s;
  }
  void d_y(const LorentzianLattice& lat, std::size_t idx, const Jet& jet,
           double* out) const override {
    double g[2], dh[64];
    ginv(lat, idx, g);
    tgt_->dmetric(Vec(jet.y, jet.y + n_), dh);
    for (int k = 0; k < n_; ++k) {
      double s = 0.0;
      for (int mu = 0; mu < 2; ++mu)
        for (int i = 0; i < n_; ++i)
          for (int j = 0; j < n_; ++j)
            s += 0.25 * g[mu] * dh[(k * n_ + i) * n_ + j] * jet.ymu[mu * n_ + i] *
                 jet.ymu[mu * n_ + j];
      out[k] = s;
    }
  }
  void d_ymu(const LorentzianLattice& lat, std::size_t idx, const Jet& jet,
             double* out) const override {
    double g[2], h[16];
    ginv(lat, idx, g);
    tgt_->metric(Vec(jet.y, jet.y + n_), h);
    for (int mu = 0; mu < 2; ++mu)
      for (int i = 0; i < n_; ++i) {
        double s = 0.0;
        for (int j = 0; j < n_; ++j) s += 0.5 * g[mu] * h[i * n_ + j] * jet.ymu[mu * n_ + j];
        out[mu * n_ + i] = s;
      }
  }
  void d2_yy(const LorentzianLattice& lat, std::size_t idx, const Jet& jet,
             double* out) const override {
    double g[2], d2h[256];
    ginv(lat, idx, g);
    tgt_->d2metric(Vec(jet.y, jet.y + n_), d2h);
    for (int k = 0; k < n_; ++k)
      for (int l = 0; l < n_; ++l) {
        double s = 0.0;
        for (int mu = 0; mu < 2; ++mu)
          for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j)
              s += 0.25 * g[mu] * d2h[((k * n_ + l) * n_ + i) * n_ + j] * jet.ymu[mu * n_ + i] *
                   jet.ymu[mu * n_ + j];
        out[k * n_ + l] = s;
      }
  }
  void d2_ymu_y(const LorentzianLattice& lat, std::size_t idx, const Jet& jet,
                double* out) const override {
    double g[2], dh[64];
    ginv(lat, idx, g);
    tgt_->dmetric(Vec(jet.y, jet.y + n_), dh);
    for (int mu = 0; mu < 2; ++mu)
      for (int i = 0; i < n_; ++i)
        for (int k = 0; k < n_; ++k) {
          double s = 0.0;
          for (int j = 0; j < n_; ++j) s += 0.5 * g[mu] * dh[(k * n_ + i) * n_ + j] * jet.ymu[mu * n_ + j];
          out[(mu * n_ + i) * n_ + k] = s;
        }
  }
  void d2_ymu_ymu(const LorentzianLattice& lat, std::size_t idx, const Jet& jet,
                  double* out) const override {
    const int M = 2 * n_;
    double g[2], h[16];
    ginv(lat, idx, g);
    tgt_->metric(Vec(jet.y, jet.y + n_), h);
    std::memset(out, 0, sizeof(double) * M * M);
    for (int mu = 0; mu < 2; ++mu)
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < n_; ++j)
          out[(mu * n_ + i) * M + (mu * n_ + j)] = 0.5 * g[mu] * h[i * n_ + j];
  }
  void d3_yyy(const LorentzianLattice& lat, std::size_t idx, const Jet& jet,
              double* out) const override {
    double g[2], d3h[1024];
    ginv(lat, idx, g);
    tgt_->d3metric(Vec(jet.y, jet.y + n_), d3h);
    for (int k = 0; k < n_; ++k)
      for (int l = 0; l < n_; ++l)
        for (int m = 0; m < n_; ++m) {
          double s = 0.0;
          for (int mu = 0; mu < 2; ++mu)
            for (int i = 0; i < n_; ++i)
              for (int j = 0; j < n_; ++j)
                s += 0.25 * g[mu] * d3h[(((k * n_ + l) * n_ + m) * n_ + i) * n_ + j] *
                     jet.ymu[mu * n_ + i] * jet.ymu[mu * n_ + j];
          out[(k * n_ + l) * n_ + m] = s;
        }
  }
  void d3_ymu_yy(const LorentzianLattice& lat, std::size_t idx, const Jet& jet,
                 double* out) const override {
    double g[2], d2h[256];
    ginv(lat, idx, g);
    tgt_->d2metric(Vec(jet.y, jet.y + n_), d2h);
    for (int mu = 0; mu < 2; ++mu)
      for (int i = 0; i < n_; ++i)
        for (int k = 0; k < n_; ++k)
          for (int l = 0; l < n_; ++l) {
            double s = 0.0;
            for (int j = 0; j < n_; ++j)
              s += 0.5 * g[mu] * d2h[((k * n_ + l) * n_ + i) * n_ + j] * jet.ymu[mu * n_ + j];
            out[((mu * n_ + i) * n_ + k) * n_ + l] = s;
          }
  }
  void d3_ymu_ymu_y(const LorentzianLattice& lat, std::size_t idx, const Jet& jet,
                    double* out) const override {
    (void)jet;
    const int M = 2 * n_;
    double g[2], dh[64];
    ginv(lat, idx, g);
    tgt_->dmetric(Vec(jet.y, jet.y + n_), dh);
    std::memset(out, 0, sizeof(double) * M * M * n_);
    for (int mu = 0; mu < 2; ++mu)
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < n_; ++j)
          for (int k = 0; k < n_; ++k)
            out[((mu * n_ + i) * M + (mu * n_ + j)) * n_ + k] =
                0.5 * g[mu] * dh[(k * n_ + i) * n_ + j];
  }

 private:
  TargetPtr tgt_;
  int n_;
};

class ConstantDensity final : public LagrangianDensity {
 public:
  ConstantDensity(int n, double c) : n_(n), c_(c) {}
  int components() const override { return n_; }
  int order() const override { return 0; }
  std::string name() const override { return "constant"; }
  double eval(const LorentzianLattice&, std::size_t, const Jet&) const override { return c_; }
  void d_y(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    std::memset(o, 0, sizeof(double) * n_);
  }
  void d_ymu(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    std::memset(o, 0, sizeof(double) * 2 * n_);
  }
  void d2_yy(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    std::memset(o, 0, sizeof(double) * n_ * n_);
  }
  void d2_ymu_y(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    std::memset(o, 0, sizeof(double) * 2 * n_ * n_);
  }
  void d2_ymu_ymu(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    std::memset(o, 0, sizeof(double) * 4 * n_ * n_);
  }
  bool has_third_partials() const override { return true; }

 private:
  int n_;
  double c_;
};

class TimeOnlyDensity final : public LagrangianDensity {
 public:
  int components() const override { return 1; }
  std::string name() const override { return "time_only"; }
  double eval(const LorentzianLattice&, std::size_t, const Jet& jet) const override {
    return 0.5 * jet.ymu[0] * jet.ymu[0];
  }
  void d_y(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    o[0] = 0.0;
  }
  void d_ymu(const LorentzianLattice&, std::size_t, const Jet& jet, double* o) const override {
    o[0] = jet.ymu[0];
    o[1] = 0.0;
  }
  void d2_yy(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    o[0] = 0.0;
  }
  void d2_ymu_y(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    o[0] = o[1] = 0.0;
  }
  void d2_ymu_ymu(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    o[0] = 1.0;
    o[1] = o[2] = o[3] = 0.0;
  }
};

class DivergenceDensity final : public LagrangianDensity {
 public:
  DivergenceDensity(int n, std::vector<double> coeff) : n_(n), coeff_(std::move(coeff)) {
    if (coeff_.size() != static_cast<std::size_t>(2 * n))
      throw std::invalid_argument("divergence density needs 2n coefficients");
  }
  int components() const override { return n_; }
  std::string name() const override { return "divergence"; }
  bool has_third_partials() const override { return true; }
  double eval(const LorentzianLattice&, std::size_t, const Jet& jet) const override {
    double s = 0.0;
    for (int mu = 0; mu < 2; ++mu)
      for (int i = 0; i < n_; ++i) s += coeff_[mu * n_ + i] * jet.ymu[mu * n_ + i];
    return s;
  }
  void d_y(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    std::memset(o, 0, sizeof(double) * n_);
  }
  void d_ymu(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    std::copy(coeff_.begin(), coeff_.end(), o);
  }
  void d2_yy(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    std::memset(o, 0, sizeof(double) * n_ * n_);
  }
  void d2_ymu_y(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    std::memset(o, 0, sizeof(double) * 2 * n_ * n_);
  }
  void d2_ymu_ymu(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    std::memset(o, 0, sizeof(double) * 4 * n_ * n_);
  }

 private:
  int n_;
  std::vector<double> coeff_;
};

class MassWindowDensity final : public LagrangianDensity {
 public:
  MassWindowDensity(int n, std::vector<double> window, double strength)
      : n_(n), window_(std::move(window)), strength_(strength) {}
  int components() const override { return n_; }
  std::string name() const override { return "mass_window"; }
  bool has_third_partials() const override { return true; }
  double eval(const LorentzianLattice&, std::size_t idx, const Jet& jet) const override {
    double s = 0.0;
    for (int i = 0; i < n_; ++i) s += jet.y[i] * jet.y[i];
    return 0.5 * strength_ * window_[idx] * s;
  }
  void d_y(const LorentzianLattice&, std::size_t idx, const Jet& jet, double* o) const override {
    for (int i = 0; i < n_; ++i) o[i] = strength_ * window_[idx] * jet.y[i];
  }
  void d_ymu(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    std::memset(o, 0, sizeof(double) * 2 * n_);
  }
  void d2_yy(const LorentzianLattice&, std::size_t idx, const Jet&, double* o) const override {
    std::memset(o, 0, sizeof(double) * n_ * n_);
    for (int i = 0; i < n_; ++i) o[i * n_ + i] = strength_ * window_[idx];
  }
  void d2_ymu_y(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    std::memset(o, 0, sizeof(double) * 2 * n_ * n_);
  }
  void d2_ymu_ymu(const LorentzianLattice&, std::size_t, const Jet&, double* o) const override {
    std::memset(o, 0, sizeof(double) * 4 * n_ * n_);
  }

 private:
  int n_;
  std::vector<double> window_;
  double strength_;
};

class SumDensity final : public LagrangianDensity {
 public:
  explicit SumDensity(std::vector<DensityPtr> terms) : terms_(std::move(terms)) {
    if (terms_.empty()) throw std::invalid_argument("empty density sum");
    n_ = terms_[0]->components();
    for (const auto& t : terms_)
      if (t->components() != n_) throw std::invalid_argument("density component mismatch");
  }
  int components() const override { return n_; }
  int order() const override {
    int o = 0;
    for (const auto& t : terms_) o = std::max(o, t->order());
    return o;
  }
  std::string name() const override { return "sum"; }
  bool has_third_partials() const override {
    for (const auto& t : terms_)
      if (!t->has_third_partials()) return false;
    return true;
  }
  double eval(const LorentzianLattice& lat, std::size_t idx, const Jet& jet) const override {
    double s = 0.0;
    for (const auto& t : terms_) s += t->eval(lat, idx, jet);
    return s;
  }

#define CFT_SUM_RULE(METHOD, SIZE)                                                       \
  void METHOD(const LorentzianLattice& lat, std::size_t idx, const Jet& jet, double* o)  \
      const override {                                                                   \
    std::vector<double> tmp(SIZE);                                                       \
    std::memset(o, 0, sizeof(double) * (SIZE));                                          \
    for (const auto& t : terms_) {                                                       \
      t->METHOD(lat, idx, jet, tmp.data());                                              \
      for (std::size_t q = 0; q < tmp.size(); ++q) o[q] += tmp[q];                       \
    }                                                                                    \
  }
  CFT_SUM_RULE(d_y, static_cast<std::size_t>(n_))
  CFT_SUM_RULE(d_ymu, static_cast<std::size_t>(2 * n_))
  CFT_SUM_RULE(d2_yy, static_cast<std::size_t>(n_ * n_))
  CFT_SUM_RULE(d2_ymu_y, static_cast<std::size_t>(2 * n_ * n_))
  CFT_SUM_RULE(d2_ymu_ymu, static_cast<std::size_t>(4 * n_ * n_))
  CFT_SUM_RULE(d3_yyy, static_cast<std::size_t>(n_ * n_ * n_))
  CFT_SUM_RULE(d3_ymu_yy, static_cast<std::size_t>(2 * n_ * n_ * n_))
  CFT_SUM_RULE(d3_ymu_ymu_y, static_cast<std::size_t>(4 * n_ * n_ * n_))
#undef CFT_SUM_RULE

 private:
  std::vector<DensityPtr> terms_;
  int n_;
};

}  // namespace

void LagrangianDensity::d3_yyy(const LorentzianLattice&, std::size_t, const Jet&,
                               double* out) const {
  const int n = components();
  std::memset(out, 0, sizeof(double) * n * n * n);
}
void LagrangianDensity::d3_ymu_yy(const LorentzianLattice&, std::size_t, const Jet&,
                                  double* out) const {
  const int n = components();
  std::memset(out, 0, sizeof(double) * 2 * n * n * n);
}
void LagrangianDensity::d3_ymu_ymu_y(const LorentzianLattice&, std::size_t, const Jet&,
                                     double* out) const {
  const int n = components();
  std::memset(out, 0, sizeof(double) * 4 * n * n * n);
}
void LagrangianDensity::d3_ymu_ymu_ymu(const LorentzianLattice&, std::size_t, const Jet&,
                                       double* out) const {
  const int n = components();
  std::memset(out, 0, sizeof(double) * 8 * n * n * n);
}

DensityPtr make_free_scalar_density(int n, double mass) {
  return std::make_shared<FreeScalarDensity>(n, mass);
}
DensityPtr make_wave_map_density(TargetPtr target) {
  return std::make_shared<WaveMapDensity>(std::move(target));
}
DensityPtr make_constant_density(int n, double c) { return std::make_shared<ConstantDensity>(n, c); }
DensityPtr make_time_only_density() { return std::make_shared<TimeOnlyDensity>(); }
DensityPtr make_divergence_density(int n, std::vector<double> coeff) {
  return std::make_shared<DivergenceDensity>(n, std::move(coeff));
}
DensityPtr make_mass_window_density(int n, std::vector<double> window, double strength) {
  return std::make_shared<MassWindowDensity>(n, std::move(window), strength);
}
DensityPtr make_sum_density(std::vector<DensityPtr> terms) {
  return std::make_shared<SumDensity>(std::move(terms));
}

DensityPtr make_density(const std::string& name, double mass, TargetPtr target) {
  if (name == "free_scalar") return make_free_scalar_density(target ? target->dim() : 1, 0.0);
  if (name == "kg_mass") return make_free_scalar_density(target ? target->dim() : 1, mass);
  if (name == "wave_map") {
    if (!target) throw std::invalid_argument("wave_map density needs a target geometry");
    return make_wave_map_density(std::move(target));
  }
  throw std::runtime_error("unknown density: " + name);
}

}  // namespace cft
