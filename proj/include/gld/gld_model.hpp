#pragma once

// Component-wise Landau polynomial F(p) = alpha p^2 + beta p^4 + gamma p^6,
// its convex-concave splitting F = F+ - F-, and the material description.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "gld/errors.hpp"

namespace gld {

inline constexpr double kVacuumPermittivity = 8.8541878128e-12;  // F/m

enum class Property { Ferroelectric, Dielectric };

inline const char* to_string(Property p) {
  return p == Property::Ferroelectric ? "ferroelectric" : "dielectric";
}

struct ComponentParams {
  double alpha = 0.0;  // m/F
  double beta = 0.0;   // m^5/(F C^2)
  double gamma = 0.0;  // m^9/(F C^4)
  double g = 0.0;      // m^3/F, domain-wall coupling
  double rho_v = 0.0;  // viscosity of the Landau-Khalatnikov relaxation
  Property property = Property::Ferroelectric;
};

struct MaterialParams {
  double epsilon = 1.0;  // eps_0 * eps_b
  std::array<ComponentParams, 2> components{};

  const ComponentParams& operator[](int i) const { return components[i]; }
  ComponentParams& operator[](int i) { return components[i]; }

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (!(epsilon > 0.0)) out.push_back("epsilon must be positive");
    for (int i = 0; i < 2; ++i) {
      const auto& c = components[i];
      const std::string name = "component " + std::to_string(i + 1);
      if (c.property == Property::Dielectric) {
        if (!(c.alpha > 0.0)) out.push_back(name + ": dielectric requires alpha > 0");
        if (c.beta != 0.0 || c.gamma != 0.0 || c.g != 0.0)
          out.push_back(name + ": dielectric requires beta = gamma = g = 0");
        if (c.rho_v != 0.0) out.push_back(name + ": dielectric requires rho_v = 0");
      } else {
        if (!(c.g > 0.0)) out.push_back(name + ": ferroelectric requires g > 0");
        if (!(c.gamma > 0.0 || (c.gamma == 0.0 && c.beta > 0.0)))
          out.push_back(name + ": ferroelectric requires gamma > 0, or gamma = 0 and beta > 0");
        if (!(c.rho_v > 0.0)) out.push_back(name + ": ferroelectric requires rho_v > 0");
      }
    }
    return out;
  }

  void validate() const {
    if (auto v = violations(); !v.empty()) throw ConfigurationError(std::move(v));
  }
};

/// Coefficients of one convex part of F.
struct LandauCoefficients {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  double value(double p) const {
    const double p2 = p * p;
    return p2 * (alpha + p2 * (beta + p2 * gamma));
  }
  double derivative(double p) const {
    const double p2 = p * p;
    return p * (2.0 * alpha + p2 * (4.0 * beta + 6.0 * gamma * p2));
  }
  double second_derivative(double p) const {
    const double p2 = p * p;
    return 2.0 * alpha + p2 * (12.0 * beta + 30.0 * gamma * p2);
  }
};

inline LandauCoefficients landau_coefficients(const ComponentParams& c) {
  return {c.alpha, c.beta, c.gamma};
}

struct SplitCoefficients {
  std::array<LandauCoefficients, 2> plus;
  std::array<LandauCoefficients, 2> minus;
};

inline double positive_part(double x) { return std::max(x, 0.0); }
inline double negative_part(double x) { return std::max(-x, 0.0); }

inline SplitCoefficients split(const MaterialParams& params) {
  SplitCoefficients s;
  for (int i = 0; i < 2; ++i) {
    const auto& c = params.components[i];
    s.plus[i] = {positive_part(c.alpha), positive_part(c.beta), positive_part(c.gamma)};
    s.minus[i] = {negative_part(c.alpha), negative_part(c.beta), negative_part(c.gamma)};
  }
  return s;
}

inline double landau_F(const MaterialParams& params, int component, double p) {
  return landau_coefficients(params[component]).value(p);
}

/// DF(p) p = 2 alpha p + 4 beta p^3 + 6 gamma p^5, the derivative of F.
inline double dF_times_p(const MaterialParams& params, int component, double p) {
  return landau_coefficients(params[component]).derivative(p);
}

inline double dF_plus(const MaterialParams& params, int component, double p) {
  return split(params).plus[component].derivative(p);
}
inline double dF_minus(const MaterialParams& params, int component, double p) {
  return split(params).minus[component].derivative(p);
}
inline double d2F_plus(const MaterialParams& params, int component, double p) {
  return split(params).plus[component].second_derivative(p);
}
inline double d2F_minus(const MaterialParams& params, int component, double p) {
  return split(params).minus[component].second_derivative(p);
}

enum class UniquenessStatus { Satisfied, Violated, NotApplicable };

inline const char* to_string(UniquenessStatus s) {
  switch (s) {
    case UniquenessStatus::Satisfied: return "satisfied";
    case UniquenessStatus::Violated: return "violated";
    case UniquenessStatus::NotApplicable: return "not_applicable";
  }
  return "?";
}

/// Sufficient condition for 30 gamma t^2 + 12 beta t + 2 alpha > 0 on t > 0,
/// i.e. strict convexity of F along each ferroelectric component.
inline std::array<UniquenessStatus, 2> check_uniqueness_conditions(const MaterialParams& params) {
  std::array<UniquenessStatus, 2> out{};
  for (int i = 0; i < 2; ++i) {
    const auto& c = params.components[i];
    if (c.property == Property::Dielectric) {
      out[i] = UniquenessStatus::NotApplicable;
      continue;
    }
    const bool first = c.alpha > 0.0 && c.beta > 0.0;
    const bool second = c.gamma > 0.0 && c.beta < 0.0 && 3.0 * c.beta * c.beta / (5.0 * c.gamma) < c.alpha;
    out[i] = (first || second) ? UniquenessStatus::Satisfied : UniquenessStatus::Violated;
  }
  return out;
}

/// Characteristic scales used to make the equations O(1): lengths by L0,
/// times by t0, polarization by P0 and potentials by V0 = P0 L0 / eps.
struct Scaling {
  double length = 1.0;
  double time = 1.0;
  double polarization = 1.0;
  double epsilon = 1.0;

  static Scaling identity() { return {}; }

  double potential() const { return polarization * length / epsilon; }
  double field() const { return polarization / epsilon; }
  double energy_density() const { return polarization * polarization / epsilon; }
  /// Normal displacement flux integrated over a line, per unit depth.
  double displacement_flux() const { return polarization * length; }

  MaterialParams to_model(const MaterialParams& si) const {
    MaterialParams m;
    m.epsilon = si.epsilon / epsilon;
    const double p2 = polarization * polarization;
    for (int i = 0; i < 2; ++i) {
      const auto& c = si.components[i];
      auto& o = m.components[i];
      o.property = c.property;
      o.alpha = c.alpha * epsilon;
      o.beta = c.beta * epsilon * p2;
      o.gamma = c.gamma * epsilon * p2 * p2;
      o.g = c.g * epsilon / (length * length);
      o.rho_v = c.rho_v * epsilon / time;
    }
    return m;
  }
};

}  // namespace gld
