#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "casceq/hidden_states.hpp"
#include "casceq/probes.hpp"
#include "casceq/tensor_container.hpp"
#include "casceq/types.hpp"

namespace casceq {

enum class ConceptKind { Boc, Proxy, Ctc, Acoustic, Random, Custom };

ConceptKind parse_concept_kind(std::string_view name);
std::string_view concept_kind_name(ConceptKind kind);

/// Concept labels paired row-for-row with hidden states.
struct ConceptMatrix {
  MatrixD z;  // n x k
  ConceptKind kind = ConceptKind::Custom;
  bool soft = false;  // Ctc only: softmax probabilities instead of one-hot rows

  /// Proxy and hard Ctc concepts are one-hot.
  bool one_hot() const { return (kind == ConceptKind::Proxy || kind == ConceptKind::Ctc) && !soft; }

  /// Throws InputError on non-finite entries or a broken one-hot row.
  void validate() const;
};

/// Linear eraser x -> P x with no bias term.
struct Eraser {
  MatrixD projection;  // d x d
  ConceptKind kind = ConceptKind::Custom;
  Eigen::Index concept_dim = 0;
  int layer = -1;
  std::size_t n = 0;  // fit rows
  double shrinkage = 0.0;
  std::optional<std::uint64_t> seed;  // random erasers

  Eigen::Index width() const { return projection.rows(); }
};

/// 1e-4 * trace(sigma_xx) / d.
double default_shrinkage(const MatrixD& sigma_xx);

/// LEACE with centered statistics: W = (Sxx + s I)^(-1/2) via symmetric
/// eigendecomposition, Pi the orthogonal projector onto col(W Sxz) and
/// P = I - W^+ Pi W. shrinkage = 0 requires a nondegenerate Sxx
/// (NumericalError otherwise); k >= d is an InputError.
Eraser fit_leace(const MatrixD& x, const ConceptMatrix& z, std::optional<double> shrinkage = std::nullopt);

/// Rows x_i -> P x_i.
MatrixD apply_eraser(const Eraser& e, const MatrixD& rows);
MatrixF apply_eraser(const Eraser& e, const MatrixF& rows);

/// P = I - Q Q^T with Q the orthonormalized d x k seeded normal matrix.
Eraser random_eraser(Eigen::Index d, Eigen::Index k, std::uint64_t seed);

/// Random-eraser construction with a caller-supplied basis (orthonormalized).
Eraser eraser_from_basis(const MatrixD& basis);

/// ||P P - P||_F / ||P||_F.
double idempotence_error(const Eraser& e);

/// Number of singular values of I - P above tol * largest.
Eigen::Index erased_rank(const Eraser& e, double tol = 1e-8);

/// Centered cross-covariance X^T Z / n.
MatrixD cross_covariance(const MatrixD& x, const MatrixD& z);

struct GuardednessOptions {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  std::optional<double> lambda;
};

struct GuardednessReport {
  bool one_hot = false;
  double pre_score = 0.0;   // held-out R^2 or accuracy of a fresh ridge probe on X
  double post_score = 0.0;  // same on r(X)
  std::optional<double> majority;  // one-hot: test accuracy of the train majority class
  double covariance_norm = 0.0;           // ||Cov(r(X), Z)||_F on all rows given
  double covariance_norm_baseline = 0.0;  // ||Cov(X, Z)||_F
  double relative_covariance() const {
    return covariance_norm_baseline > 0.0 ? covariance_norm / covariance_norm_baseline : covariance_norm;
  }
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

/// Seeded row split of the held-out data; ridge probes Z ~ X and Z ~ r(X)
/// are fit on one part and scored on the other.
GuardednessReport verify_guardedness(const Eraser& e, const MatrixD& x, const ConceptMatrix& z,
                                     const GuardednessOptions& options = {});

nlohmann::json to_json(const GuardednessReport& r);

// ---- concepts ---------------------------------------------------------------
// Every builder returns one row per audio position, in the row order of
// HiddenStateSet::stacked_frames(layer, FrameScope::Audio).

/// Utterance BoC vector repeated on each of its frames.
ConceptMatrix boc_concept(const HiddenStateSet& set);

/// First-word vocabulary: the most frequent first words (ties by byte
/// order) followed by an OTHER class; always `classes` columns.
struct ProxyVocabulary {
  std::vector<std::string> words;
  Eigen::Index classes = 159;

  Eigen::Index other() const { return classes - 1; }
  Eigen::Index index_of(std::string_view word) const;
};

std::string first_word(std::string_view transcript);

ProxyVocabulary build_proxy_vocabulary(const HiddenStateSet& set, Eigen::Index classes = 159);

ConceptMatrix proxy_concept(const HiddenStateSet& set, const ProxyVocabulary& vocab);

/// (pitch, energy) per audio position, aligned like the acoustic probes.
ConceptMatrix acoustic_concept(const HiddenStateSet& set);

/// Per-frame argmax class of the probe, one-hot over 49 columns; with
/// `soft`, the softmax probabilities instead.
ConceptMatrix ctc_concept_labels(const CtcProbe& probe, const MatrixD& frames, bool soft = false);
ConceptMatrix ctc_concept_labels(const CtcProbe& probe, const HiddenStateSet& set, int layer, bool soft = false);

// ---- stacks -----------------------------------------------------------------

/// One eraser per layer. Container layout: tensors "P_e.<layer>"; metadata
/// {"kind":"eraser_stack","concept","concept_dim","layers":[...],
/// "erasers":[{"layer","n","shrinkage","seed"?}]}.
struct EraserStack {
  std::map<int, Eraser> erasers;
  // Concept details needed to rebuild labels later, e.g. {"proxy_words": [...]}.
  nlohmann::json concept_info = nlohmann::json::object();

  std::vector<int> layers() const;

  TensorContainer to_container() const;
  static EraserStack from_container(const TensorContainer& container);
};

using ConceptBuilder = std::function<ConceptMatrix(const HiddenStateSet&, int layer)>;

struct ConceptOptions {
  std::optional<ProxyVocabulary> proxy;  // built from the set when absent
  bool soft_ctc = false;
  std::map<int, CtcProbe> ctc_probes;  // per layer; fit on the set when absent
  SplitSpec split;
  CtcTrainOptions ctc;
};

/// Builder for one of boc, proxy, ctc, acoustic.
ConceptBuilder make_concept_builder(ConceptKind kind, ConceptOptions options = {});

/// Fits fit_leace on the audio positions of every listed layer (all layers
/// of the set when empty).
EraserStack build_stack(const HiddenStateSet& set, const ConceptBuilder& builder,
                        std::optional<double> shrinkage = std::nullopt, std::vector<int> layers = {},
                        unsigned threads = 1);

/// Same random eraser construction at every layer, seeds keyed by layer.
EraserStack random_stack(Eigen::Index d, Eigen::Index k, std::uint64_t seed, const std::vector<int>& layers);

/// Applies each layer's eraser to every position of that layer.
HiddenStateSet apply_stack(const EraserStack& stack, const HiddenStateSet& set);

struct DecodabilityDelta {
  int layer = 0;
  double before = 0.0;  // held-out decodability of a probe fit on the original states
  double after = 0.0;   // same with probe fit and scored on erased states
  double delta() const { return after - before; }
};

/// Text-decodability change caused by erasing `stack` at `layer`.
DecodabilityDelta decodability_delta(const HiddenStateSet& set, const EraserStack& stack, int layer,
                                     const SplitSpec& split, const CtcTrainOptions& options);

}  // namespace casceq
