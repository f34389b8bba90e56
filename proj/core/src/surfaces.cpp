#include "volimp/surfaces.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

namespace volimp::surfaces {

const std::array<const char*, kNumTenors> kTenorLabels = {"1W", "1M", "2M", "3M",
                                                          "6M", "9M", "1Y", "3Y"};
const std::array<double, kNumTenors> kTenorYears = {7.0 / 365.0, 1.0 / 12.0, 1.0 / 6.0, 0.25,
                                                    0.5,         0.75,       1.0,       3.0};
const std::array<double, kNumDeltas> kDeltas = {0.1, 0.25, 0.5, 0.75, 0.9};

std::optional<int> tenor_index(std::string_view label) {
  for (int i = 0; i < kNumTenors; ++i) {
    if (label == kTenorLabels[static_cast<std::size_t>(i)]) return i;
  }
  return std::nullopt;
}

std::optional<int> delta_index(double delta) {
  for (int i = 0; i < kNumDeltas; ++i) {
    if (std::abs(delta - kDeltas[static_cast<std::size_t>(i)]) < 1e-9) return i;
  }
  return std::nullopt;
}

bool Surface::fully_observed() const {
  for (auto m : mask) {
    if (!m) return false;
  }
  return true;
}

int Surface::observed_count() const {
  int n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kAll: return "all";
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "?";
}

// ---- dates (proleptic Gregorian, serial days since 1970-01-01) ----

namespace {

std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                       static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
  y = static_cast<int>(yy + (m <= 2));
}

}  // namespace

std::int64_t parse_date(std::string_view iso) {
  int y, m, d;
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-' ||
      std::sscanf(std::string(iso).c_str(), "%d-%d-%d", &y, &m, &d) != 3 || m < 1 || m > 12 ||
      d < 1 || d > 31) {
    throw ParseError("bad date '" + std::string(iso) + "' (expected YYYY-MM-DD)");
  }
  return days_from_civil(y, m, d);
}

std::string format_date(std::int64_t serial) {
  int y, m, d;
  civil_from_days(serial, y, m, d);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
  return buf;
}

// ---- persistence ----

namespace {

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(trim(field));
  return out;
}

}  // namespace

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "date,tenor,delta,vol") {
    throw ParseError(path + ": expected header 'date,tenor,delta,vol'");
  }
  std::map<std::int64_t, Surface> by_date;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    const std::string where = path + ":" + std::to_string(lineno);
    if (fields.size() != 4) throw ParseError(where + ": expected 4 fields");
    std::int64_t date;
    double delta, vol;
    try {
      date = parse_date(fields[0]);
      delta = std::stod(fields[2]);
      vol = std::stod(fields[3]);
    } catch (const ParseError&) {
      throw ParseError(where + ": bad date '" + fields[0] + "'");
    } catch (const std::exception&) {
      throw ParseError(where + ": bad numeric field");
    }
    auto ti = tenor_index(fields[1]);
    if (!ti) throw ParseError(where + ": unknown tenor '" + fields[1] + "'");
    auto di = delta_index(delta);
    if (!di) throw ParseError(where + ": unknown delta " + fields[2]);
    if (!(vol > 0.0)) {
      throw DataError(where + ": non-positive vol at (" + fields[0] + ", " + fields[1] +
                      ", " + fields[2] + ")");
    }
    Surface& s = by_date[date];
    s.date = date;
    const int cell = cell_index(*ti, *di);
    if (s.mask[static_cast<std::size_t>(cell)]) {
      throw DataError(where + ": duplicate cell (" + fields[0] + ", " + fields[1] + ", " +
                      fields[2] + ")");
    }
    s.values[static_cast<std::size_t>(cell)] = vol;
    s.mask[static_cast<std::size_t>(cell)] = 1;
  }
  Dataset ds;
  ds.surfaces.reserve(by_date.size());
  for (auto& [date, s] : by_date) ds.surfaces.push_back(s);
  return ds;
}

void save_csv(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "date,tenor,delta,vol\n";
  char buf[64];
  for (const Surface& s : dataset.surfaces) {
    const std::string date = format_date(s.date);
    for (int t = 0; t < kNumTenors; ++t) {
      for (int d = 0; d < kNumDeltas; ++d) {
        const int cell = cell_index(t, d);
        if (!s.mask[static_cast<std::size_t>(cell)]) continue;
        std::snprintf(buf, sizeof(buf), "%.17g", s.values[static_cast<std::size_t>(cell)]);
        out << date << ',' << kTenorLabels[static_cast<std::size_t>(t)] << ','
            << kDeltas[static_cast<std::size_t>(d)] << ',' << buf << '\n';
      }
    }
  }
}

SplitDates default_split_dates() {
  return SplitDates{parse_date("2020-02-29"), parse_date("2020-12-31"),
                    parse_date("2022-12-31")};
}

Bundle split_by_dates(const Dataset& dataset, const SplitDates& dates) {
  Bundle b;
  b.train.split = Split::kTrain;
  b.validation.split = Split::kValidation;
  b.test.split = Split::kTest;
  for (const Surface& s : dataset.surfaces) {
    if (s.date <= dates.train_end) {
      b.train.surfaces.push_back(s);
    } else if (s.date <= dates.val_end) {
      b.validation.surfaces.push_back(s);
    } else if (s.date <= dates.test_end) {
      b.test.surfaces.push_back(s);
    }
  }
  return b;
}

Bundle split_by_counts(const Dataset& dataset, int n_train, int n_val, int n_test) {
  if (n_train + n_val + n_test > static_cast<int>(dataset.surfaces.size())) {
    throw DataError("split_by_counts: dataset has only " +
                    std::to_string(dataset.surfaces.size()) + " surfaces");
  }
  Bundle b;
  b.train.split = Split::kTrain;
  b.validation.split = Split::kValidation;
  b.test.split = Split::kTest;
  auto it = dataset.surfaces.begin();
  b.train.surfaces.assign(it, it + n_train);
  it += n_train;
  b.validation.surfaces.assign(it, it + n_val);
  it += n_val;
  b.test.surfaces.assign(it, it + n_test);
  return b;
}

Stats standardize(const Bundle& bundle) {
  if (bundle.train.surfaces.empty()) throw DataError("standardize: empty train split");
  Stats st;
  for (int c = 0; c < kNumCells; ++c) {
    double sum = 0.0, sum2 = 0.0;
    std::int64_t count = 0;
    for (const Surface& s : bundle.train.surfaces) {
      if (!s.mask[static_cast<std::size_t>(c)]) continue;
      const double v = s.values[static_cast<std::size_t>(c)];
      sum += v;
      sum2 += v * v;
      ++count;
    }
    double mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
    double var = count > 0 ? sum2 / static_cast<double>(count) - mean * mean : 0.0;
    double sd = std::sqrt(std::max(var, 0.0));
    if (sd < 1e-12) {
      std::cerr << "volimp: warning: cell " << c
                << " is constant in the train split; std clamped to 1\n";
      sd = 1.0;
    }
    st.mean[static_cast<std::size_t>(c)] = mean;
    st.stddev[static_cast<std::size_t>(c)] = sd;
  }
  return st;
}

MaskedMatrix to_matrix(const std::vector<Surface>& surfaces, const Stats& stats) {
  const int n = static_cast<int>(surfaces.size());
  MaskedMatrix mm{Tensor({n, kNumCells}), Tensor({n, kNumCells})};
  for (int i = 0; i < n; ++i) {
    const Surface& s = surfaces[static_cast<std::size_t>(i)];
    for (int c = 0; c < kNumCells; ++c) {
      if (s.mask[static_cast<std::size_t>(c)]) {
        mm.x.at(i, c) = standardize_cell(stats, c, s.values[static_cast<std::size_t>(c)]);
        mm.mask.at(i, c) = 1.0;
      }
    }
  }
  return mm;
}

MaskedMatrix to_matrix(const Dataset& dataset, const Stats& stats) {
  return to_matrix(dataset.surfaces, stats);
}

double standardize_cell(const Stats& stats, int cell, double value) {
  return (value - stats.mean[static_cast<std::size_t>(cell)]) /
         stats.stddev[static_cast<std::size_t>(cell)];
}

double destandardize_cell(const Stats& stats, int cell, double value) {
  return value * stats.stddev[static_cast<std::size_t>(cell)] +
         stats.mean[static_cast<std::size_t>(cell)];
}

MaskedSurface apply_mask(const Surface& surface, const MaskSpec& spec) {
  if (!surface.fully_observed()) throw DataError("apply_mask: surface must be fully observed");
  if (spec.rate < 0.0 || spec.rate > 1.0) throw ParameterError("apply_mask: bad rate");
  MaskedSurface out;
  out.surface = surface;
  out.truth = surface.values;
  const int k = static_cast<int>(std::lround(spec.rate * kNumCells));
  RngStream rng = RngStream(spec.seed).child("mask").child(static_cast<std::uint64_t>(surface.date));
  std::array<int, kNumCells> idx;
  for (int i = 0; i < kNumCells; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(rng.next_u64() %
                                       static_cast<std::uint64_t>(kNumCells - i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    out.surface.mask[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 0;
  }
  return out;
}

// ---- synthetic generators ----

Tensor gen_two_gauss(int n, bool unequal_variance, RngStream& rng) {
  if (n < 1) throw ParameterError("gen_two_gauss: n must be >= 1");
  const double q = unequal_variance ? 0.4 : 0.1;
  // Cholesky of [[q, ±0.05], [±0.05, 0.05]].
  const double l11 = std::sqrt(q);
  const double l21 = 0.05 / l11;
  const double l22 = std::sqrt(0.05 - l21 * l21);
  Tensor out({n, 2});
  for (int i = 0; i < n; ++i) {
    // Second component flips the mean and the cross-covariance sign.
    const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
    const double e1 = rng.normal(), e2 = rng.normal();
    out.at(i, 0) = sign + l11 * e1;
    out.at(i, 1) = sign + sign * l21 * e1 + l22 * e2;
  }
  return out;
}

Tensor gen_eight_gauss(int n, double radius, double component_std, RngStream& rng) {
  if (n < 1) throw ParameterError("gen_eight_gauss: n must be >= 1");
  Tensor out({n, 2});
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < n; ++i) {
    const int j = static_cast<int>(rng.next_u64() % 8u);
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) / 8.0;
    const double cx = radius * std::cos(angle);
    const double cy = radius * std::sin(angle);
    out.at(i, 0) = (cx + component_std * rng.normal()) * inv_sqrt2;
    out.at(i, 1) = (cy + component_std * rng.normal()) * inv_sqrt2;
  }
  return out;
}

Dataset gen_synthetic_surfaces(int n_days, std::uint64_t seed) {
  if (n_days < 1) throw ParameterError("gen_synthetic_surfaces: n_days must be >= 1");
  RngStream root(seed);
  RngStream level_rng = root.child("level");
  RngStream factor_rng = root.child("factors");
  RngStream tenor_rng = root.child("tenor_noise");

  Dataset ds;
  ds.surfaces.reserve(static_cast<std::size_t>(n_days));
  const std::int64_t start = parse_date("2012-01-01");

  // Mean-reverting daily factors: ATM level, skew, curvature, wing twist.
  double level = 0.10, skew = -0.015, curv = 0.08, twist = 0.0;
  for (int day = 0; day < n_days; ++day) {
    level += 0.02 * (0.10 - level) + 0.004 * level_rng.normal();
    level = std::clamp(level, 0.05, 0.35);
    skew += 0.05 * (-0.015 - skew) + 0.003 * factor_rng.normal();
    skew = std::clamp(skew, -0.08, 0.08);
    curv += 0.05 * (0.08 - curv) + 0.004 * factor_rng.normal();
    curv = std::clamp(curv, 0.01, 0.25);
    twist += 0.10 * (0.0 - twist) + 0.02 * factor_rng.normal();
    twist = std::clamp(twist, -0.6, 0.6);

    Surface s;
    s.date = start + day;
    // Forward-variance construction keeps total ATM variance increasing in T.
    double total_var = 0.0, prev_t = 0.0;
    std::array<double, kNumTenors> atm;
    for (int t = 0; t < kNumTenors; ++t) {
      const double tt = kTenorYears[static_cast<std::size_t>(t)];
      const double tilt = 1.0 + 0.25 * (static_cast<double>(t) / (kNumTenors - 1) - 0.3);
      double shock = tenor_rng.normal();
      shock = std::clamp(shock, -2.0, 2.0);
      const double fwd_vol = level * tilt * (1.0 + 0.08 * shock);
      total_var += fwd_vol * fwd_vol * (tt - prev_t);
      prev_t = tt;
      atm[static_cast<std::size_t>(t)] = std::sqrt(total_var / tt);
    }
    for (int t = 0; t < kNumTenors; ++t) {
      // Smile decays with tenor; the nonlinear level/curv coupling plus the
      // sinusoidal twist keep the surface family from being purely affine.
      const double decay = 1.0 / (1.0 + 0.8 * kTenorYears[static_cast<std::size_t>(t)]);
      const double cc = (curv + 2.0 * (level - 0.10) * (level - 0.10)) * decay;
      const double sk = skew * decay;
      for (int d = 0; d < kNumDeltas; ++d) {
        const double x = kDeltas[static_cast<std::size_t>(d)] - 0.5;
        double v = atm[static_cast<std::size_t>(t)] + sk * x + cc * x * x +
                   0.015 * twist * decay * std::sin(4.0 * x) * std::abs(x);
        if (d != 2) v = std::clamp(v, 0.005, 2.99);
        const int cell = cell_index(t, d);
        s.values[static_cast<std::size_t>(cell)] = v;
        s.mask[static_cast<std::size_t>(cell)] = 1;
      }
    }
    ds.surfaces.push_back(s);
  }
  return ds;
}

// ---- Black-Scholes ----

double norm_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

double norm_cdf_inv(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ParameterError("norm_cdf_inv: p must be in (0, 1)");
  // Acklam's rational approximation, then one Halley refinement.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= phigh) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = norm_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

double bs_call(double forward, double strike, double tenor_years, double vol) {
  if (!(forward > 0.0) || !(strike > 0.0) || !(tenor_years > 0.0)) {
    throw ParameterError("bs_call: forward, strike and tenor must be positive");
  }
  if (vol < 0.0) throw ParameterError("bs_call: vol must be >= 0");
  if (vol == 0.0) return std::max(forward - strike, 0.0);
  const double st = vol * std::sqrt(tenor_years);
  const double d1 = (std::log(forward / strike) + 0.5 * st * st) / st;
  const double d2 = d1 - st;
  return forward * norm_cdf(d1) - strike * norm_cdf(d2);
}

double delta_to_strike(double delta, double tenor_years, double vol, double forward) {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw ParameterError("delta_to_strike: delta must be in (0, 1)");
  }
  const double st = vol * std::sqrt(tenor_years);
  return forward * std::exp(-st * norm_cdf_inv(delta) + 0.5 * st * st);
}

double strike_to_delta(double strike, double tenor_years, double vol, double forward) {
  const double st = vol * std::sqrt(tenor_years);
  const double d1 = (std::log(forward / strike) + 0.5 * st * st) / st;
  return norm_cdf(d1);
}

}  // namespace volimp::surfaces
