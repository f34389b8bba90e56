#include "volimp/arbcheck.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <thread>

namespace volimp::arb {

void PriceGrid::validate() const {
  if (tenors.size() != strikes.size() || tenors.size() != prices.size()) {
    throw DataError("PriceGrid: tenor/strike/price size mismatch");
  }
  if (!(forward > 0.0)) throw DataError("PriceGrid: forward must be positive");
  for (std::size_t t = 0; t + 1 < tenors.size(); ++t) {
    if (!(tenors[t] < tenors[t + 1])) throw DataError("PriceGrid: tenors must ascend");
  }
  for (std::size_t t = 0; t < tenors.size(); ++t) {
    if (strikes[t].size() != prices[t].size()) {
      throw DataError("PriceGrid: strike/price count mismatch at tenor " + std::to_string(t));
    }
    for (std::size_t k = 0; k < strikes[t].size(); ++k) {
      if (k + 1 < strikes[t].size() && !(strikes[t][k] < strikes[t][k + 1])) {
        throw DataError("PriceGrid: strikes must strictly ascend within tenor " +
                        std::to_string(t));
      }
      if (!std::isfinite(prices[t][k]) || prices[t][k] < 0.0) {
        throw DataError("PriceGrid: prices must be finite and nonnegative");
      }
    }
  }
}

int PriceGrid::total_points() const {
  int n = 0;
  for (const auto& s : strikes) n += static_cast<int>(s.size());
  return n;
}

PriceGrid vol_grid_to_prices(const surfaces::Surface& surface, double forward) {
  if (!surface.fully_observed()) {
    throw DataError("vol_grid_to_prices: surface must be fully observed");
  }
  PriceGrid g;
  g.forward = forward;
  for (int t = 0; t < surfaces::kNumTenors; ++t) {
    const double tt = surfaces::kTenorYears[static_cast<std::size_t>(t)];
    std::vector<std::pair<double, double>> pts;  // (strike, price)
    for (int d = 0; d < surfaces::kNumDeltas; ++d) {
      const double vol = surface.values[static_cast<std::size_t>(surfaces::cell_index(t, d))];
      if (!(vol > 0.0)) {
        throw DataError("vol_grid_to_prices: non-positive vol at tenor " +
                        std::string(surfaces::kTenorLabels[static_cast<std::size_t>(t)]) +
                        " delta " +
                        std::to_string(surfaces::kDeltas[static_cast<std::size_t>(d)]));
      }
      const double strike = surfaces::delta_to_strike(
          surfaces::kDeltas[static_cast<std::size_t>(d)], tt, vol, forward);
      pts.emplace_back(strike, surfaces::bs_call(forward, strike, tt, vol));
    }
    std::sort(pts.begin(), pts.end());
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
      if (pts[k + 1].first - pts[k].first <= kStrikeTolRel * forward) {
        throw DataError("vol_grid_to_prices: strike collision within tenor " +
                        std::string(surfaces::kTenorLabels[static_cast<std::size_t>(t)]) +
                        " (extreme smile)");
      }
    }
    g.tenors.push_back(tt);
    g.strikes.emplace_back();
    g.prices.emplace_back();
    for (auto& [k, p] : pts) {
      g.strikes.back().push_back(k);
      g.prices.back().push_back(p);
    }
  }
  g.validate();
  return g;
}

namespace {

struct Point {
  int tenor, strike_idx;
  double t, strike, price;
};

std::vector<Point> flatten(const PriceGrid& g) {
  std::vector<Point> pts;
  for (std::size_t t = 0; t < g.tenors.size(); ++t) {
    for (std::size_t k = 0; k < g.strikes[t].size(); ++k) {
      pts.push_back(Point{static_cast<int>(t), static_cast<int>(k), g.tenors[t],
                          g.strikes[t][k], g.prices[t][k]});
    }
  }
  return pts;
}

}  // namespace

ArbReport check_grid(const PriceGrid& grid) {
  grid.validate();
  const double strike_tol = kStrikeTolRel * grid.forward;
  const std::vector<Point> pts = flatten(grid);
  ArbReport report;

  // Condition 1: equal strikes across tenors need strictly increasing prices.
  for (const Point& a : pts) {
    for (const Point& b : pts) {
      if (a.tenor >= b.tenor) continue;
      if (std::abs(a.strike - b.strike) > strike_tol) continue;
      const double margin = b.price - a.price;
      report.worst_margin = std::min(report.worst_margin, margin);
      if (margin <= kSlopeTol) {
        report.calendar_violations.push_back(
            CalendarViolation{a.tenor, a.strike_idx, b.tenor, b.strike_idx, a.price, b.price});
      }
    }
  }

  // Condition 2: per point, sup of left difference quotients over later-or-
  // equal tenors must not exceed min(0, inf of right quotients).
  for (const Point& p : pts) {
    double sup_left = -std::numeric_limits<double>::infinity();
    double inf_right = std::numeric_limits<double>::infinity();
    for (const Point& q : pts) {
      if (q.tenor < p.tenor) continue;
      if (q.strike < p.strike - strike_tol) {
        sup_left = std::max(sup_left, (p.price - q.price) / (p.strike - q.strike));
      } else if (q.strike > p.strike + strike_tol) {
        inf_right = std::min(inf_right, (q.price - p.price) / (q.strike - p.strike));
      }
    }
    if (sup_left == -std::numeric_limits<double>::infinity()) continue;
    const double bound = std::min(0.0, inf_right);
    const double margin = bound - sup_left;
    report.worst_margin = std::min(report.worst_margin, margin);
    if (margin < -kSlopeTol) {
      report.slope_violations.push_back(SlopeViolation{p.tenor, p.strike_idx, sup_left, inf_right});
    }
  }

  report.arb_free = report.calendar_violations.empty() && report.slope_violations.empty();
  return report;
}

bool brute_force_no_arb(const PriceGrid& grid) {
  grid.validate();
  if (grid.tenors.size() > 6) throw SizeError("brute_force_no_arb: more than 6 tenors");
  for (const auto& s : grid.strikes) {
    if (s.size() > 8) throw SizeError("brute_force_no_arb: more than 8 strikes per tenor");
  }
  const double strike_tol = kStrikeTolRel * grid.forward;
  const std::vector<Point> pts = flatten(grid);
  const int n = static_cast<int>(pts.size());

  // Calendar spreads: long the later call, short the earlier one at the same
  // strike. Nonpositive cost is an arbitrage.
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const Point &a = pts[static_cast<std::size_t>(i)], &b = pts[static_cast<std::size_t>(j)];
      if (a.tenor >= b.tenor || std::abs(a.strike - b.strike) > strike_tol) continue;
      if (b.price - a.price <= kSlopeTol) return false;
    }
  }

  // Vertical spreads: long call at lower strike and later-or-equal tenor,
  // short the other; the payoff dominates, so negative cost is an arbitrage.
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const Point &lo = pts[static_cast<std::size_t>(i)], &hi = pts[static_cast<std::size_t>(j)];
      if (lo.tenor < hi.tenor) continue;  // need t_lo >= t_hi
      if (!(lo.strike < hi.strike - strike_tol)) continue;
      const double cost = lo.price - hi.price;
      if (cost < -kSlopeTol * (hi.strike - lo.strike)) return false;
    }
  }

  // Butterflies through a middle point: wings at later-or-equal tenors.
  for (int mi = 0; mi < n; ++mi) {
    const Point& m = pts[static_cast<std::size_t>(mi)];
    for (int ai = 0; ai < n; ++ai) {
      const Point& a = pts[static_cast<std::size_t>(ai)];
      if (a.tenor < m.tenor || !(a.strike < m.strike - strike_tol)) continue;
      for (int bi = 0; bi < n; ++bi) {
        const Point& b = pts[static_cast<std::size_t>(bi)];
        if (b.tenor < m.tenor || !(b.strike > m.strike + strike_tol)) continue;
        const double lam = (b.strike - m.strike) / (b.strike - a.strike);
        const double cost = lam * a.price + (1.0 - lam) * b.price - m.price;
        const double width =
            (m.strike - a.strike) * (b.strike - m.strike) / (b.strike - a.strike);
        if (cost < -kSlopeTol * width) return false;
      }
    }
  }
  return true;
}

ArbRate sample_arb_rate(const vae::VaeParams& params, const surfaces::Stats& stats,
                        int n_samples, double forward, RngStream& rng, int max_threads) {
  if (n_samples < 1) throw ParameterError("sample_arb_rate: n_samples must be >= 1");
  const int threads = std::max(1, max_threads);
  constexpr int kShards = 64;
  const RngStream base = rng.child("arb_rate");

  auto run_shard = [&](int shard) {
    RngStream srng = base.child(static_cast<std::uint64_t>(shard));
    const int lo = static_cast<int>(static_cast<std::int64_t>(n_samples) * shard / kShards);
    const int hi = static_cast<int>(static_cast<std::int64_t>(n_samples) * (shard + 1) / kShards);
    int ok = 0;
    for (int i = lo; i < hi; ++i) {
      RngStream draw = srng.child(static_cast<std::uint64_t>(i));
      Tensor x = vae::sample_generative(params, 1, draw, true);
      surfaces::Surface s;
      s.date = 0;
      bool positive = true;
      for (int c = 0; c < surfaces::kNumCells; ++c) {
        const double v = surfaces::destandardize_cell(stats, c, x.at(0, c));
        s.values[static_cast<std::size_t>(c)] = v;
        s.mask[static_cast<std::size_t>(c)] = 1;
        if (!(v > 0.0)) positive = false;
      }
      if (!positive) continue;
      try {
        if (check_grid(vol_grid_to_prices(s, forward)).arb_free) ++ok;
      } catch (const DataError&) {
        // strike collision from an extreme smile: not arbitrage-free
      }
    }
    return ok;
  };

  int ok_total = 0;
  if (threads == 1) {
    for (int shard = 0; shard < kShards; ++shard) ok_total += run_shard(shard);
  } else {
    std::vector<std::future<int>> futs;
    futs.reserve(kShards);
    // Deterministic reduction: shard results are summed in shard order.
    for (int shard = 0; shard < kShards; ++shard) {
      futs.push_back(std::async(std::launch::async, run_shard, shard));
      if (static_cast<int>(futs.size()) >= threads) {
        ok_total += futs.front().get();
        futs.erase(futs.begin());
      }
    }
    for (auto& f : futs) ok_total += f.get();
  }

  ArbRate rate;
  rate.n_samples = n_samples;
  rate.fraction_arb_free = static_cast<double>(ok_total) / n_samples;
  rate.std_err = std::sqrt(std::max(rate.fraction_arb_free * (1.0 - rate.fraction_arb_free) /
                                        n_samples,
                                    0.0));
  return rate;
}

}  // namespace volimp::arb
