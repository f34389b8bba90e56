#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "volimp/model.hpp"
#include "volimp/surfaces.hpp"

namespace volimp::arb {

using nd::RngStream;
using nd::Tensor;

// Tolerances: strikes equal within kStrikeTolRel * forward are treated as the
// same strike for the calendar condition; slope inequalities carry an absolute
// slack of kSlopeTol.
inline constexpr double kSlopeTol = 1e-10;
inline constexpr double kStrikeTolRel = 1e-9;

/// Call prices indexed by (strike, tenor) with one forward across tenors.
struct PriceGrid {
  std::vector<double> tenors;                 // ascending year fractions
  std::vector<std::vector<double>> strikes;   // per tenor, strictly ascending
  std::vector<std::vector<double>> prices;
  double forward = 1.0;

  void validate() const;  // throws DataError
  int total_points() const;
};

struct CalendarViolation {
  int tenor_a, strike_a, tenor_b, strike_b;  // tenor_a < tenor_b, equal strikes
  double price_a, price_b;
};

struct SlopeViolation {
  int tenor, strike;
  double sup_left, inf_right;  // sup of left difference quotients vs min(0, inf of right)
};

struct ArbReport {
  bool arb_free = true;
  std::vector<CalendarViolation> calendar_violations;
  std::vector<SlopeViolation> slope_violations;
  double worst_margin = std::numeric_limits<double>::infinity();
};

/// Converts a fully observed vol surface to a call-price grid via
/// delta->strike and the Black formula; strike collisions within a tenor are
/// reported as DataError rather than silently merged.
PriceGrid vol_grid_to_prices(const surfaces::Surface& surface, double forward);

/// Discrete no-arbitrage check: strict calendar monotonicity at equal strikes
/// plus the sup/inf difference-quotient condition per grid point.
ArbReport check_grid(const PriceGrid& grid);

/// Independent verification by static-portfolio enumeration (calendar spreads,
/// cross-tenor vertical spreads, butterflies): true iff no portfolio with
/// nonpositive cost and dominating payoff exists. Grids only (<= 6 tenors,
/// <= 8 strikes per tenor).
bool brute_force_no_arb(const PriceGrid& grid);

struct ArbRate {
  double fraction_arb_free = 0.0;
  double std_err = 0.0;
  int n_samples = 0;
};

/// Fraction of two-step generative samples whose destandardized surface is
/// arbitrage-free (non-positive vols count as arbitrage). Deterministic for a
/// given stream regardless of max_threads.
ArbRate sample_arb_rate(const vae::VaeParams& params, const surfaces::Stats& stats,
                        int n_samples, double forward, RngStream& rng, int max_threads = 1);

}  // namespace volimp::arb
