#include "casceq/agreement.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <ranges>
#include <thread>

#include "casceq/error.hpp"
#include "casceq/rng.hpp"

namespace casceq {

namespace {

auto all_positions(std::size_t n) { return std::views::iota(std::size_t{0}, n); }

struct KappaCounts {
  std::uint64_t n = 0;
  std::uint64_t agree = 0;
  std::uint64_t marginal_dot = 0;  // sum_c count_a(c) * count_b(c)
};

template <typename IndexRange>
KappaCounts kappa_counts(const PairedPredictions& pp, const IndexRange& indices) {
  const std::size_t categories = pp.label_space.size() + 1;  // + INVALID
  std::vector<std::uint64_t> count_a(categories, 0);
  std::vector<std::uint64_t> count_b(categories, 0);
  KappaCounts k;
  for (std::size_t i : indices) {
    const auto a = static_cast<std::size_t>(pp.pred_a[i]);
    const auto b = static_cast<std::size_t>(pp.pred_b[i]);
    ++count_a[a];
    ++count_b[b];
    if (a == b) ++k.agree;
    ++k.n;
  }
  for (std::size_t c = 0; c < categories; ++c) k.marginal_dot += count_a[c] * count_b[c];
  return k;
}

KappaResult kappa_from_counts(const KappaCounts& k) {
  KappaResult r;
  r.n = k.n;
  const double n = static_cast<double>(k.n);
  r.p_observed = static_cast<double>(k.agree) / n;
  r.p_expected = static_cast<double>(k.marginal_dot) / (n * n);
  const std::uint64_t n2 = k.n * k.n;
  if (k.marginal_dot == n2) {
    r.kappa = 1.0;
    r.degenerate = true;
    return r;
  }
  // (p_o - p_e) / (1 - p_e) with the common 1/n^2 factor cancelled.
  const double num = static_cast<double>(k.n * k.agree) - static_cast<double>(k.marginal_dot);
  const double den = static_cast<double>(n2 - k.marginal_dot);
  r.kappa = num / den;
  return r;
}

struct OverlapCounts {
  std::size_t both_wrong = 0;
  std::size_t same_wrong = 0;
};

template <typename IndexRange>
OverlapCounts overlap_counts(const PairedPredictions& pp, const IndexRange& indices) {
  OverlapCounts c;
  for (std::size_t i : indices) {
    if (pp.pred_a[i] != pp.gold[i] && pp.pred_b[i] != pp.gold[i]) {
      ++c.both_wrong;
      if (pp.pred_a[i] == pp.pred_b[i]) ++c.same_wrong;
    }
  }
  return c;
}

void require_nonempty(const PairedPredictions& pp) {
  if (pp.n() == 0) throw InputError("paired predictions are empty");
}

}  // namespace

KappaResult cohen_kappa(const PairedPredictions& pp) {
  require_nonempty(pp);
  return kappa_from_counts(kappa_counts(pp, all_positions(pp.n())));
}

OverlapResult conditional_error_overlap(const PairedPredictions& pp) {
  require_nonempty(pp);
  if (pp.label_space.size() < 3) {
    throw InputError("conditional error overlap needs at least 3 labels (task '" +
                     pp.label_space.task_id() + "' is binary)");
  }
  const auto counts = overlap_counts(pp, all_positions(pp.n()));
  OverlapResult r;
  r.both_wrong = counts.both_wrong;
  r.same_wrong = counts.same_wrong;
  r.chance = pp.label_space.overlap_chance();
  if (counts.both_wrong > 0) {
    r.overlap = static_cast<double>(counts.same_wrong) / static_cast<double>(counts.both_wrong);
  }
  return r;
}

double chi_square1_sf(double statistic) {
  if (statistic <= 0.0) return 1.0;
  return std::erfc(std::sqrt(statistic / 2.0));
}

McNemarResult mcnemar_from_counts(std::size_t b, std::size_t c) {
  McNemarResult r;
  r.b = b;
  r.c = c;
  const std::size_t n = b + c;
  if (n == 0) {
    r.degenerate = true;
    return r;
  }
  if (n <= kMcNemarExactLimit) {
    r.method = McNemarMethod::Exact;
    // 2 * P(X <= min(b, c)), X ~ Binomial(n, 1/2)
    const std::size_t k_max = std::min(b, c);
    long double term = std::ldexp(1.0L, -static_cast<int>(n));  // C(n,0) / 2^n
    long double tail = 0.0L;
    for (std::size_t k = 0; k <= k_max; ++k) {
      tail += term;
      term = term * static_cast<long double>(n - k) / static_cast<long double>(k + 1);
    }
    r.p_value = static_cast<double>(std::min(1.0L, 2.0L * tail));
  } else {
    r.method = McNemarMethod::ContinuityCorrected;
    const double diff = std::abs(static_cast<double>(b) - static_cast<double>(c));
    const double corrected = std::max(0.0, diff - 1.0);
    r.statistic = corrected * corrected / static_cast<double>(n);
    r.p_value = chi_square1_sf(r.statistic);
  }
  return r;
}

McNemarResult mcnemar(const PairedPredictions& pp) {
  require_nonempty(pp);
  std::size_t b = 0;
  std::size_t c = 0;
  for (std::size_t i = 0; i < pp.n(); ++i) {
    const bool a_right = pp.pred_a[i] == pp.gold[i];
    const bool b_right = pp.pred_b[i] == pp.gold[i];
    if (a_right && !b_right) ++b;
    if (!a_right && b_right) ++c;
  }
  return mcnemar_from_counts(b, c);
}

FdrResult bh_fdr(std::span<const double> pvals, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
  for (double p : pvals) {
    if (!(p >= 0.0 && p <= 1.0)) throw InputError("p-value outside [0, 1]");
  }
  FdrResult r;
  r.alpha = alpha;
  r.raw.assign(pvals.begin(), pvals.end());
  const std::size_t m = pvals.size();
  r.adjusted.assign(m, 1.0);
  r.rejected.assign(m, false);
  if (m == 0) return r;

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return pvals[x] < pvals[y]; });

  double running = 1.0;
  for (std::size_t j = m; j-- > 0;) {
    const std::size_t rank = j + 1;
    const double p = pvals[order[j]];
    // m * p / m can round one ulp below p.
    const double scaled = std::max(p, static_cast<double>(m) * p / static_cast<double>(rank));
    running = std::min(running, scaled);
    r.adjusted[order[j]] = std::min(1.0, running);
  }
  for (std::size_t i = 0; i < m; ++i) r.rejected[i] = r.adjusted[i] <= alpha;
  return r;
}

Metric parse_metric(std::string_view name) {
  if (name == "kappa") return Metric::Kappa;
  if (name == "agreement") return Metric::Agreement;
  if (name == "accuracy" || name == "accuracy_a") return Metric::AccuracyA;
  if (name == "accuracy_b") return Metric::AccuracyB;
  if (name == "accuracy_delta") return Metric::AccuracyDelta;
  if (name == "overlap") return Metric::Overlap;
  throw InputError("unknown metric '" + std::string(name) + "'");
}

std::string_view metric_name(Metric metric) {
  switch (metric) {
    case Metric::Kappa: return "kappa";
    case Metric::Agreement: return "agreement";
    case Metric::AccuracyA: return "accuracy_a";
    case Metric::AccuracyB: return "accuracy_b";
    case Metric::AccuracyDelta: return "accuracy_delta";
    case Metric::Overlap: return "overlap";
  }
  return "?";
}

std::optional<double> evaluate_metric(Metric metric, const PairedPredictions& pp,
                                      std::span<const std::size_t> indices) {
  if (indices.empty()) return std::nullopt;
  const double n = static_cast<double>(indices.size());
  auto accuracy = [&](const std::vector<LabelId>& pred) {
    std::size_t correct = 0;
    for (std::size_t i : indices) correct += pred[i] == pp.gold[i] ? 1 : 0;
    return static_cast<double>(correct) / n;
  };
  switch (metric) {
    case Metric::Kappa:
      return kappa_from_counts(kappa_counts(pp, indices)).kappa;
    case Metric::Agreement: {
      std::size_t agree = 0;
      for (std::size_t i : indices) agree += pp.pred_a[i] == pp.pred_b[i] ? 1 : 0;
      return static_cast<double>(agree) / n;
    }
    case Metric::AccuracyA: return accuracy(pp.pred_a);
    case Metric::AccuracyB: return accuracy(pp.pred_b);
    case Metric::AccuracyDelta: return accuracy(pp.pred_a) - accuracy(pp.pred_b);
    case Metric::Overlap: {
      const auto c = overlap_counts(pp, indices);
      if (c.both_wrong == 0) return std::nullopt;
      return static_cast<double>(c.same_wrong) / static_cast<double>(c.both_wrong);
    }
  }
  return std::nullopt;
}

double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw InputError("quantile of empty data");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_ci(const PairedPredictions& pp, const BootstrapOptions& options) {
  const std::size_t n = pp.n();
  if (n < 2) throw InputError("bootstrap needs at least 2 paired examples");
  if (options.resamples < 1) throw InputError("bootstrap needs at least 1 resample");
  if (!(options.level > 0.0 && options.level < 1.0)) throw InputError("confidence level must lie in (0, 1)");
  if (options.metric == Metric::Overlap && pp.label_space.size() < 3) {
    throw InputError("overlap bootstrap needs at least 3 labels");
  }

  const std::size_t budget = 10 * options.resamples;
  std::vector<double> stats(options.resamples, 0.0);
  std::vector<std::size_t> attempts(options.resamples, 0);
  std::atomic<bool> exhausted{false};

  auto run = [&](std::size_t first, std::size_t stride) {
    std::vector<std::size_t> idx(n);
    for (std::size_t r = first; r < options.resamples && !exhausted.load(); r += stride) {
      for (std::size_t a = 0;; ++a) {
        if (a >= budget) {
          exhausted = true;
          break;
        }
        Rng rng = Rng::keyed(options.seed, r, a);
        for (auto& i : idx) i = rng.index(n);
        if (auto v = evaluate_metric(options.metric, pp, idx)) {
          stats[r] = *v;
          attempts[r] = a + 1;
          break;
        }
      }
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads,
                                                           static_cast<unsigned>(options.resamples)));
  if (threads == 1) {
    run(0, 1);
  } else {
    std::vector<std::jthread> workers;
    workers.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) workers.emplace_back(run, t, threads);
  }

  const std::size_t total = std::accumulate(attempts.begin(), attempts.end(), std::size_t{0});
  if (exhausted || total > budget) {
    throw NumericalError("bootstrap: metric '" + std::string(metric_name(options.metric)) +
                         "' undefined on too many resamples (budget " + std::to_string(budget) + ")");
  }

  std::sort(stats.begin(), stats.end());
  const double tail = (1.0 - options.level) / 2.0;
  return {sorted_quantile(stats, tail), sorted_quantile(stats, 1.0 - tail)};
}

nlohmann::json to_json(const KappaResult& r) {
  nlohmann::json j = {{"kappa", r.kappa},
                      {"p_observed", r.p_observed},
                      {"p_expected", r.p_expected},
                      {"n", r.n},
                      {"degenerate", r.degenerate}};
  if (r.ci_low) j["ci_low"] = *r.ci_low;
  if (r.ci_high) j["ci_high"] = *r.ci_high;
  return j;
}

nlohmann::json to_json(const OverlapResult& r) {
  return {{"overlap", r.overlap ? nlohmann::json(*r.overlap) : nlohmann::json(nullptr)},
          {"both_wrong", r.both_wrong},
          {"same_wrong", r.same_wrong},
          {"chance", r.chance},
          {"defined", r.defined()}};
}

nlohmann::json to_json(const McNemarResult& r) {
  return {{"b", r.b},
          {"c", r.c},
          {"p_value", r.p_value},
          {"statistic", r.statistic},
          {"method", r.method == McNemarMethod::Exact ? "exact" : "continuity-corrected"},
          {"degenerate", r.degenerate}};
}

nlohmann::json to_json(const FdrResult& r) {
  return {{"raw", r.raw}, {"adjusted", r.adjusted}, {"rejected", r.rejected}, {"alpha", r.alpha}};
}

}  // namespace casceq
