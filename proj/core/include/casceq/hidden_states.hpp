#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "casceq/error.hpp"
#include "casceq/tensor_container.hpp"
#include "casceq/types.hpp"

namespace casceq {

/// Layer indices probed by default.
inline const std::vector<int> kDefaultLayers = {0, 4, 8, 12, 16, 20, 24, 28, 31};

/// Non-owning view of one utterance's states at one layer.
struct HiddenStateDump {
  const std::string& utterance_id;
  int layer_index;
  const MatrixF& frames;  // T x d
  const std::string& transcript;
  const MatrixF* acoustic_targets;  // T_a x 2 (energy, pitch) or null
};

struct UtteranceStates {
  std::string id;
  std::string transcript;
  std::map<int, MatrixF> layers;
  std::optional<MatrixF> acoustic;  // T_a x 2: log-RMS energy, pitch Hz
  // Half-open [begin, end) range of audio positions; all positions if absent.
  std::optional<std::pair<Eigen::Index, Eigen::Index>> audio_span;

  Eigen::Index frame_count() const;
  /// audio_span, or [0, frame_count()) when absent.
  std::pair<Eigen::Index, Eigen::Index> audio_range() const;
};

/// Which positions of an utterance a stacked view covers.
enum class FrameScope { All, Audio };

/// A set of utterances dumped at a common set of layers.
///
/// Container layout: tensors "<id>/L<layer>" (T x d) and "<id>/acoustic"
/// (T_a x 2); metadata {"kind":"hidden_states","layers":[...],
/// "utterances":[{"id","transcript","audio_span"?}]}.
class HiddenStateSet {
 public:
  HiddenStateSet() = default;
  explicit HiddenStateSet(std::vector<UtteranceStates> utterances);

  static HiddenStateSet from_container(const TensorContainer& container);
  TensorContainer to_container() const;

  const std::vector<UtteranceStates>& utterances() const noexcept { return utterances_; }
  std::size_t size() const noexcept { return utterances_.size(); }
  bool empty() const noexcept { return utterances_.empty(); }

  /// Sorted layer indices; every utterance carries exactly these layers.
  const std::vector<int>& layers() const noexcept { return layers_; }
  Eigen::Index width() const noexcept { return width_; }
  bool has_layer(int layer) const;

  HiddenStateDump dump(std::size_t utterance, int layer) const;

  /// All frames of the listed utterances at `layer`, stacked in order.
  MatrixD stacked_frames(int layer, const std::vector<std::size_t>& utterances,
                         FrameScope scope = FrameScope::All) const;
  MatrixD stacked_frames(int layer, FrameScope scope = FrameScope::All) const;

  /// Utterance index per stacked row.
  std::vector<std::size_t> row_groups(const std::vector<std::size_t>& utterances,
                                      FrameScope scope = FrameScope::All) const;

  /// Copy with `layer` replaced by f(layer, frames) for every layer in `layers`.
  template <typename F>
  HiddenStateSet transformed(const std::vector<int>& layers, F&& f) const {
    std::vector<UtteranceStates> out = utterances_;
    for (auto& u : out) {
      for (int layer : layers) {
        auto it = u.layers.find(layer);
        if (it == u.layers.end()) throw InputError("layer " + std::to_string(layer) + " not in dump");
        it->second = f(layer, it->second);
      }
    }
    return HiddenStateSet(std::move(out));
  }

 private:
  // Throws InputError unless the layer sets, T and d agree everywhere.
  void build_index();

  std::vector<UtteranceStates> utterances_;
  std::vector<int> layers_;
  Eigen::Index width_ = 0;
};

std::vector<std::size_t> all_indices(std::size_t n);

}  // namespace casceq
