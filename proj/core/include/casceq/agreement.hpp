#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "casceq/data_model.hpp"

namespace casceq {

struct KappaResult {
  double kappa = 0.0;
  double p_observed = 0.0;
  double p_expected = 0.0;
  std::size_t n = 0;
  // Both systems constant and identical: p_expected = 1, kappa reported as 1.
  bool degenerate = false;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
};

/// Cohen's kappa between pred_a and pred_b. Gold is not consulted; INVALID is
/// an ordinary category. Computed from integer counts, so the result is
/// exactly symmetric and invariant to relabeling.
KappaResult cohen_kappa(const PairedPredictions& pp);

struct OverlapResult {
  std::optional<double> overlap;  // nullopt when both_wrong == 0
  std::size_t both_wrong = 0;
  std::size_t same_wrong = 0;
  double chance = 0.0;

  bool defined() const noexcept { return overlap.has_value(); }
};

/// P(same wrong answer | both wrong). Binary label spaces are refused with
/// InputError since only one wrong answer exists.
OverlapResult conditional_error_overlap(const PairedPredictions& pp);

enum class McNemarMethod { Exact, ContinuityCorrected };

struct McNemarResult {
  std::size_t b = 0;  // A right, B wrong
  std::size_t c = 0;  // A wrong, B right
  double p_value = 1.0;
  double statistic = 0.0;  // chi-square statistic; 0 for the exact branch
  McNemarMethod method = McNemarMethod::Exact;
  bool degenerate = false;  // b = c = 0
};

/// Discordant counts at or below this use the exact binomial test.
inline constexpr std::size_t kMcNemarExactLimit = 25;

McNemarResult mcnemar(const PairedPredictions& pp);
McNemarResult mcnemar_from_counts(std::size_t b, std::size_t c);

/// Upper tail of chi-square with one degree of freedom.
double chi_square1_sf(double statistic);

struct FdrResult {
  std::vector<double> raw;
  std::vector<double> adjusted;
  std::vector<bool> rejected;
  double alpha = 0.05;
};

/// Benjamini-Hochberg step-up adjustment.
FdrResult bh_fdr(std::span<const double> pvals, double alpha);

enum class Metric { Kappa, Agreement, AccuracyA, AccuracyB, AccuracyDelta, Overlap };

Metric parse_metric(std::string_view name);
std::string_view metric_name(Metric metric);

/// Metric on the multiset of example indices; nullopt when undefined there.
std::optional<double> evaluate_metric(Metric metric, const PairedPredictions& pp,
                                      std::span<const std::size_t> indices);

struct BootstrapOptions {
  Metric metric = Metric::Kappa;
  std::size_t resamples = 1000;
  std::uint64_t seed = 0;
  double level = 0.95;
  unsigned threads = 1;
};

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Percentile interval. Resample r, attempt a draws its indices from
/// Rng::keyed(seed, r, a), so the result does not depend on thread count.
/// Resamples on which the metric is undefined are redrawn; more than
/// 10 * resamples total attempts raises NumericalError.
Interval bootstrap_ci(const PairedPredictions& pp, const BootstrapOptions& options);

/// Linear-interpolation quantile of sorted data (q in [0, 1]).
double sorted_quantile(std::span<const double> sorted, double q);

nlohmann::json to_json(const KappaResult& r);
nlohmann::json to_json(const OverlapResult& r);
nlohmann::json to_json(const McNemarResult& r);
nlohmann::json to_json(const FdrResult& r);

}  // namespace casceq
