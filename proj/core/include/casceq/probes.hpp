#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "casceq/hidden_states.hpp"
#include "casceq/tensor_container.hpp"
#include "casceq/text.hpp"
#include "casceq/types.hpp"

namespace casceq {

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct UnitSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;  // both sorted
};

/// Seeded shuffle of [0, n) cut at round(n * train_fraction). With n >= 2
/// both sides keep at least one unit.
UnitSplit split_units(std::size_t n, const SplitSpec& spec);

/// Rows whose group is in `units`, in row order.
std::vector<std::size_t> rows_in(const std::vector<std::size_t>& groups,
                                 const std::vector<std::size_t>& units);

MatrixD take_rows(const MatrixD& m, const std::vector<std::size_t>& rows);

/// 1e-3 * trace(Xc^T Xc) / d for the column-centered X.
double default_ridge_lambda(const MatrixD& x);

/// Per-column 1 - SS_res/SS_tot; columns with SS_tot = 0 are nullopt.
std::vector<std::optional<double>> r2_per_target(const MatrixD& y, const MatrixD& y_hat);

/// Mean over defined columns; NaN when none is defined. Not clamped.
double mean_r2(const MatrixD& y, const MatrixD& y_hat);

struct RidgeProbe {
  MatrixD weights;    // d x k
  VectorD intercept;  // k
  double lambda = 0.0;
  double r2_train = 0.0;
  double r2_test = 0.0;  // NaN without test rows
  std::vector<std::optional<double>> r2_test_per_target;

  MatrixD predict(const MatrixD& x) const;
};

/// Closed-form ridge on the train rows: (Xc^T Xc + lambda I)^-1 Xc^T Yc with
/// the intercept absorbing the means. lambda = 0 with a singular system
/// throws NumericalError.
RidgeProbe fit_ridge(const MatrixD& x, const MatrixD& y, double lambda, bool fit_intercept = true);

RidgeProbe fit_ridge_probe(const MatrixD& x, const MatrixD& y, std::optional<double> lambda,
                           const std::vector<std::size_t>& train_rows,
                           const std::vector<std::size_t>& test_rows);

/// Rows grouped by unit (utterance); the split never separates a unit.
RidgeProbe fit_ridge_probe(const MatrixD& x, const MatrixD& y, std::optional<double> lambda,
                           const std::vector<std::size_t>& groups, const SplitSpec& split);

enum class ProbeKind { Energy, Pitch, Boc, Ctc };

ProbeKind parse_probe_kind(std::string_view name);
std::string_view probe_kind_name(ProbeKind kind);

/// Design matrix for a ridge probe plus the utterance of each row.
struct ProbeData {
  MatrixD x;
  MatrixD y;
  std::vector<std::size_t> groups;
};

/// Row of the T_a acoustic frames aligned with audio position t of T.
Eigen::Index aligned_acoustic_row(Eigen::Index t, Eigen::Index positions, Eigen::Index acoustic_frames);

/// Frame-level energy or pitch targets over audio positions. Pitch drops
/// unvoiced (0 Hz) frames.
ProbeData acoustic_probe_data(const HiddenStateSet& set, int layer, ProbeKind kind);

/// One row per utterance: audio positions mean-pooled, BoC target.
ProbeData boc_probe_data(const HiddenStateSet& set, int layer);

struct CtcProbe {
  MatrixD weights;  // d x 49
  VectorD bias;     // 49
  int blank_index = alphabet::kBlank;
  int layer = -1;
  double text_decodability = 0.0;  // held-out mean

  MatrixD logits(const MatrixD& frames) const;
  std::string decode(const MatrixD& frames) const;

  TensorContainer to_container() const;
  static CtcProbe from_container(const TensorContainer& container);
};

struct CtcTrainOptions {
  int epochs = 50;
  double learning_rate = 0.5;
  std::size_t batch_size = 8;
  double init_scale = 0.01;
  std::uint64_t seed = 0;
};

/// Seeded N(0, init_scale^2) weights, zero bias.
CtcProbe init_ctc_probe(Eigen::Index width, double init_scale, std::uint64_t seed);

/// Minibatch gradient descent on the mean per-utterance CTC loss over audio
/// positions. Features are standardized with train statistics during
/// optimization and the scaling is folded back into the returned weights.
/// Non-finite loss throws NumericalError naming the step.
CtcProbe fit_ctc_probe(const HiddenStateSet& set, int layer, const SplitSpec& split,
                       const CtcTrainOptions& options);

/// Mean text decodability of greedy decodes over the listed utterances.
double evaluate_ctc_probe(const CtcProbe& probe, const HiddenStateSet& set, int layer,
                          const std::vector<std::size_t>& utterances);

struct ProbeScore {
  int layer = 0;
  ProbeKind kind = ProbeKind::Energy;
  double score = 0.0;  // held-out R^2, or text decodability for Ctc
};

struct ProbeCurveOptions {
  SplitSpec split;
  std::optional<double> lambda;
  CtcTrainOptions ctc;
  unsigned threads = 1;
};

/// One held-out score per layer of the set, layers ascending.
std::vector<ProbeScore> probe_curve(const HiddenStateSet& set, ProbeKind kind,
                                    const ProbeCurveOptions& options = {});

nlohmann::json to_json(const ProbeScore& score);

/// Probe file layout: tensors "weights" and "intercept"; metadata
/// {"kind":"ridge_probe","target","layer","lambda","r2_train","r2_test"}.
struct StoredRidgeProbe {
  RidgeProbe probe;
  ProbeKind target = ProbeKind::Energy;
  int layer = 0;

  TensorContainer to_container() const;
  static StoredRidgeProbe from_container(const TensorContainer& container);
};

/// Held-out style score of a stored probe on every utterance of `set`.
double evaluate_ridge_probe(const StoredRidgeProbe& stored, const HiddenStateSet& set);

}  // namespace casceq
