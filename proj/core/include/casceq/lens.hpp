#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "casceq/hidden_states.hpp"
#include "casceq/tensor_container.hpp"
#include "casceq/types.hpp"

namespace casceq {

/// Final-norm and unembedding weights of a backbone.
///
/// Container layout: tensors "unembed" (V x d) and "rms_gamma" (d); metadata
/// {"kind":"lens_weights","rms_epsilon","vocab":[...],"special_tokens":[...],
/// "boundary_marker"}.
struct LensWeights {
  MatrixF unembed;  // V x d, kept in f32 so one resident copy suffices
  VectorD rms_gamma;
  double rms_epsilon = 1e-6;
  std::vector<std::string> vocab;
  std::set<int> special_ids;
  std::string boundary_marker = "\xE2\x96\x81";  // U+2581

  Eigen::Index vocab_size() const { return unembed.rows(); }
  Eigen::Index width() const { return unembed.cols(); }
  bool is_special(int id) const { return special_ids.contains(id); }

  /// Throws InputError unless sizes agree and gamma is finite.
  void validate() const;

  TensorContainer to_container() const;
  static LensWeights from_container(const TensorContainer& container);
};

/// h / sqrt(mean(h^2) + epsilon) * gamma. Throws InputError on non-finite h.
VectorD rmsnorm(const VectorD& h, const VectorD& gamma, double epsilon);

/// unembed * rmsnorm(h).
VectorD lens_logits(const VectorD& h, const LensWeights& w);

/// Index of the largest value; ties go to the lowest index.
int argmax_lowest(const VectorD& v);

enum class PositionMode { Audio, All };

PositionMode parse_position_mode(std::string_view name);

std::vector<Eigen::Index> select_positions(const UtteranceStates& u, PositionMode mode);

struct LensResult {
  int layer = 0;
  std::string utterance_id;
  std::vector<Eigen::Index> positions;
  std::vector<int> top_tokens;
  std::optional<double> bag_precision;
};

LensResult logit_lens(const HiddenStateDump& dump, const LensWeights& w,
                      std::span<const Eigen::Index> positions);

/// Lowercases ASCII and strips leading boundary markers ("▁", "Ġ", spaces).
std::string normalize_token(std::string_view token, std::string_view boundary_marker);

/// Splits a reference transcript into vocabulary pieces: each lowercase
/// whitespace-separated word is cut greedily by longest normalized vocab
/// match; a character no entry covers becomes its own piece.
class ReferenceSegmenter {
 public:
  ReferenceSegmenter() = default;  // whole words only
  ReferenceSegmenter(std::span<const std::string> vocab, std::string_view boundary_marker);

  std::vector<std::string> segment(std::string_view reference) const;

 private:
  std::set<std::string, std::less<>> pieces_;
  std::size_t longest_ = 0;
};

struct BagPrecision {
  std::optional<double> precision;  // nullopt when nothing was decoded
  std::size_t decoded = 0;
  std::size_t matched = 0;
};

/// Fraction of decoded tokens (normalized, deduplicated unless `multiset`)
/// found in the reference token set. Tokens that normalize to "" are ignored.
BagPrecision bag_precision(std::span<const std::string> decoded, const std::set<std::string>& reference,
                           std::string_view boundary_marker, bool multiset = false);

BagPrecision bag_precision(std::span<const std::string> decoded, std::string_view reference,
                           const ReferenceSegmenter& segmenter, std::string_view boundary_marker,
                           bool multiset = false);

/// Collapses runs of one id, drops special ids, starts a new word at each
/// token beginning with the boundary marker (or a space) and concatenates
/// the rest; the result is trimmed.
std::string lens_decode_text(std::span<const int> tokens, const LensWeights& w);

struct LensLayerScore {
  int layer = 0;
  std::optional<double> mean_precision;  // over utterances with a defined value
  std::size_t utterances = 0;
};

struct LensOptions {
  PositionMode positions = PositionMode::Audio;
  bool multiset = false;
  unsigned threads = 1;
};

/// Per-utterance lens results at one layer with bag precision filled in.
std::vector<LensResult> lens_layer(const HiddenStateSet& set, const LensWeights& w, int layer,
                                   const ReferenceSegmenter& segmenter, const LensOptions& options = {});

std::vector<LensLayerScore> lens_curve(const HiddenStateSet& set, const LensWeights& w,
                                       const std::vector<int>& layers, const LensOptions& options = {});

nlohmann::json to_json(const LensLayerScore& score);

}  // namespace casceq
