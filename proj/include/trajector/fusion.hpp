#pragma once

#include <cmath>

#include "trajector/error.hpp"

namespace trajector {

// Basic belief assignment over the frame {real, fake}; m_theta is the mass on
// the whole frame (ignorance).
struct MassFunction {
  double m_real = 0.0;
  double m_fake = 0.0;
  double m_theta = 1.0;

  double sum() const { return m_real + m_fake + m_theta; }

  bool valid(double tol = 1e-12) const {
    return m_real >= 0.0 && m_fake >= 0.0 && m_theta >= 0.0 && std::abs(sum() - 1.0) <= tol;
  }

  static MassFunction vacuous() { return {0.0, 0.0, 1.0}; }
};

inline constexpr double kDefaultDiscount = 0.1;

// Discounted probability: (1-u) of the mass follows p_fake, u is ignorance.
inline MassFunction mass_from_prob(double p_fake, double discount = kDefaultDiscount) {
  if (!(p_fake >= 0.0 && p_fake <= 1.0)) throw FusionError("p_fake outside [0,1]");
  if (!(discount >= 0.0 && discount < 1.0)) throw FusionError("discount outside [0,1)");
  MassFunction m;
  m.m_fake = (1.0 - discount) * p_fake;
  m.m_real = (1.0 - discount) * (1.0 - p_fake);
  m.m_theta = discount;
  return m;
}

// Dempster's rule of combination on the two-hypothesis frame.
inline MassFunction dempster_combine(const MassFunction& a, const MassFunction& b) {
  if (!a.valid(1e-9) || !b.valid(1e-9)) throw FusionError("invalid mass function");
  const double conflict = a.m_real * b.m_fake + a.m_fake * b.m_real;
  const double norm = 1.0 - conflict;
  if (norm <= 1e-12) throw TotalConflictError("total conflict between sources (K = 1)");
  MassFunction out;
  out.m_fake = (a.m_fake * b.m_fake + a.m_fake * b.m_theta + a.m_theta * b.m_fake) / norm;
  out.m_real = (a.m_real * b.m_real + a.m_real * b.m_theta + a.m_theta * b.m_real) / norm;
  out.m_theta = a.m_theta * b.m_theta / norm;
  return out;
}

// BetP(fake): ignorance split evenly between the two hypotheses.
inline double pignistic_fake(const MassFunction& m) { return m.m_fake + 0.5 * m.m_theta; }

// 1 (fake) iff BetP(fake) > threshold; the boundary resolves to 0 (real).
inline int decide(const MassFunction& m, double threshold = 0.5) { return pignistic_fake(m) > threshold ? 1 : 0; }

}  // namespace trajector
