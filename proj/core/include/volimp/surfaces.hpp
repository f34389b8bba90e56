#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "volimp/rng.hpp"
#include "volimp/tensor.hpp"

namespace volimp::surfaces {

using nd::RngStream;
using nd::Tensor;

// Grid layout: 8 tenors x 5 deltas, tenor-major. Cell index = tenor*5 + delta.
inline constexpr int kNumTenors = 8;
inline constexpr int kNumDeltas = 5;
inline constexpr int kNumCells = kNumTenors * kNumDeltas;

extern const std::array<const char*, kNumTenors> kTenorLabels;  // 1W..3Y
extern const std::array<double, kNumTenors> kTenorYears;
extern const std::array<double, kNumDeltas> kDeltas;  // 0.1..0.9

constexpr int cell_index(int tenor, int delta) { return tenor * kNumDeltas + delta; }
std::optional<int> tenor_index(std::string_view label);
std::optional<int> delta_index(double delta);

/// One day's implied-vol grid. Vols are decimals (0.10 == 10 vol points).
struct Surface {
  std::int64_t date = 0;  // serial day number
  std::array<double, kNumCells> values{};
  std::array<std::uint8_t, kNumCells> mask{};  // 1 = observed

  bool fully_observed() const;
  int observed_count() const;
};

enum class Split { kAll, kTrain, kValidation, kTest };
const char* split_name(Split s);

struct Stats {
  std::array<double, kNumCells> mean{}, stddev{};
};

struct Dataset {
  std::vector<Surface> surfaces;  // sorted by date
  Split split = Split::kAll;
};

struct Bundle {
  Dataset train, validation, test;
};

// ---- dates ----
std::int64_t parse_date(std::string_view iso);  // "YYYY-MM-DD" -> serial day
std::string format_date(std::int64_t serial);

// ---- persistence ----
// CSV schema: header "date,tenor,delta,vol"; missing cells are absent rows.
Dataset load_csv(const std::string& path);
void save_csv(const Dataset& dataset, const std::string& path);

struct SplitDates {
  std::int64_t train_end;  // inclusive
  std::int64_t val_end;
  std::int64_t test_end;
};
SplitDates default_split_dates();  // 2020-02-29 / 2020-12-31 / 2022-12-31
Bundle split_by_dates(const Dataset& dataset, const SplitDates& dates);
Bundle split_by_counts(const Dataset& dataset, int n_train, int n_val, int n_test);

/// Per-cell z-scoring statistics from the train split's observed cells.
/// Constant cells get stddev clamped to 1 (warning on stderr).
Stats standardize(const Bundle& bundle);

/// Standardized model input: missing cells filled with 0 (the standardized
/// mean), plus the 0/1 observation mask.
struct MaskedMatrix {
  Tensor x, mask;
};
MaskedMatrix to_matrix(const Dataset& dataset, const Stats& stats);
MaskedMatrix to_matrix(const std::vector<Surface>& surfaces, const Stats& stats);
double destandardize_cell(const Stats& stats, int cell, double value);
double standardize_cell(const Stats& stats, int cell, double value);

// ---- masking for evaluation ----
struct MaskSpec {
  double rate = 0.1;
  std::uint64_t seed = 0;
};

struct MaskedSurface {
  Surface surface;                         // with cells knocked out
  std::array<double, kNumCells> truth{};   // original values
};
/// Knocks out exactly round(rate*40) cells, sampled uniformly without
/// replacement. The input surface must be fully observed.
MaskedSurface apply_mask(const Surface& surface, const MaskSpec& spec);

// ---- synthetic generators ----
/// Mixture of two Gaussians at ±(1,1); the unequal variant widens the first
/// coordinate's variance from 0.1 to 0.4.
Tensor gen_two_gauss(int n, bool unequal_variance, RngStream& rng);
/// Ring of eight isotropic Gaussians at angles 2*pi*j/8, globally scaled by
/// 1/sqrt(2) following the usual toy-data convention.
Tensor gen_eight_gauss(int n, double radius, double component_std, RngStream& rng);
/// Smooth parametric smile per tenor with a mean-reverting ATM level; total
/// implied variance is nondecreasing in tenor at the 0.5-delta column.
Dataset gen_synthetic_surfaces(int n_days, std::uint64_t seed);

// ---- Black-Scholes utilities (zero rates, forward space) ----
double norm_cdf(double x);
double norm_cdf_inv(double p);
/// Undiscounted Black call: F*N(d1) - K*N(d2); vol or T of 0 gives intrinsic.
double bs_call(double forward, double strike, double tenor_years, double vol);
/// Inverts the forward call delta: K = F*exp(-vol*sqrt(T)*Ninv(delta) + vol^2*T/2).
double delta_to_strike(double delta, double tenor_years, double vol, double forward);
double strike_to_delta(double strike, double tenor_years, double vol, double forward);

}  // namespace volimp::surfaces
