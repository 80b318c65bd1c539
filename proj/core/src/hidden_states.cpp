#include "casceq/hidden_states.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "casceq/error.hpp"

namespace casceq {

using nlohmann::json;

namespace {

std::string layer_tensor_name(const std::string& id, int layer) {
  return id + "/L" + std::to_string(layer);
}

MatrixF to_matrix(const Tensor& t) {
  if (t.shape.size() != 2) throw InputError("tensor '" + t.name + "' must be 2-D");
  MatrixF m(t.shape[0], t.shape[1]);
  std::copy(t.data.begin(), t.data.end(), m.data());
  return m;
}

Tensor from_matrix(std::string name, const MatrixF& m) {
  Tensor t{std::move(name), {m.rows(), m.cols()}, {}};
  t.data.assign(m.data(), m.data() + m.size());
  return t;
}

}  // namespace

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

Eigen::Index UtteranceStates::frame_count() const {
  return layers.empty() ? 0 : layers.begin()->second.rows();
}

std::pair<Eigen::Index, Eigen::Index> UtteranceStates::audio_range() const {
  return audio_span ? *audio_span : std::make_pair(Eigen::Index{0}, frame_count());
}

HiddenStateSet::HiddenStateSet(std::vector<UtteranceStates> utterances)
    : utterances_(std::move(utterances)) {
  build_index();
}

void HiddenStateSet::build_index() {
  layers_.clear();
  width_ = 0;
  if (utterances_.empty()) return;

  std::set<std::string> ids;
  for (const auto& u : utterances_) {
    if (!ids.insert(u.id).second) throw InputError("duplicate utterance id '" + u.id + "'");
    if (u.layers.empty()) throw InputError("utterance '" + u.id + "' has no layers");
  }
  for (const auto& [layer, _] : utterances_.front().layers) layers_.push_back(layer);
  width_ = utterances_.front().layers.begin()->second.cols();

  for (const auto& u : utterances_) {
    if (u.layers.size() != layers_.size() ||
        !std::equal(layers_.begin(), layers_.end(), u.layers.begin(),
                    [](int l, const auto& kv) { return l == kv.first; })) {
      throw InputError("utterance '" + u.id + "' has a different layer set");
    }
    const Eigen::Index t = u.frame_count();
    if (t < 1) throw InputError("utterance '" + u.id + "' has no frames");
    for (const auto& [layer, m] : u.layers) {
      if (m.rows() != t) throw InputError("utterance '" + u.id + "': frame count differs across layers");
      if (m.cols() != width_) throw InputError("utterance '" + u.id + "': hidden width differs");
      if (!m.allFinite()) throw InputError("utterance '" + u.id + "': non-finite hidden state");
    }
    if (u.acoustic && u.acoustic->cols() != 2) {
      throw InputError("utterance '" + u.id + "': acoustic targets must have 2 columns");
    }
    if (u.audio_span) {
      auto [b, e] = *u.audio_span;
      if (b < 0 || e > t || b >= e) throw InputError("utterance '" + u.id + "': bad audio_span");
    }
  }
  if (width_ < 1) throw InputError("hidden width must be positive");
}

bool HiddenStateSet::has_layer(int layer) const {
  return std::binary_search(layers_.begin(), layers_.end(), layer);
}

HiddenStateDump HiddenStateSet::dump(std::size_t utterance, int layer) const {
  const auto& u = utterances_.at(utterance);
  auto it = u.layers.find(layer);
  if (it == u.layers.end()) {
    throw InputError("utterance '" + u.id + "' has no layer " + std::to_string(layer));
  }
  return HiddenStateDump{u.id, layer, it->second, u.transcript,
                         u.acoustic ? &*u.acoustic : nullptr};
}

namespace {

std::pair<Eigen::Index, Eigen::Index> scoped_range(const UtteranceStates& u, FrameScope scope) {
  return scope == FrameScope::Audio ? u.audio_range() : std::make_pair(Eigen::Index{0}, u.frame_count());
}

}  // namespace

MatrixD HiddenStateSet::stacked_frames(int layer, const std::vector<std::size_t>& utterances,
                                       FrameScope scope) const {
  if (!has_layer(layer)) throw InputError("layer " + std::to_string(layer) + " not in dump");
  Eigen::Index rows = 0;
  for (auto i : utterances) {
    auto [b, e] = scoped_range(utterances_.at(i), scope);
    rows += e - b;
  }
  MatrixD out(rows, width_);
  Eigen::Index r = 0;
  for (auto i : utterances) {
    auto [b, e] = scoped_range(utterances_[i], scope);
    out.middleRows(r, e - b) = utterances_[i].layers.at(layer).middleRows(b, e - b).cast<double>();
    r += e - b;
  }
  return out;
}

MatrixD HiddenStateSet::stacked_frames(int layer, FrameScope scope) const {
  return stacked_frames(layer, all_indices(utterances_.size()), scope);
}

std::vector<std::size_t> HiddenStateSet::row_groups(const std::vector<std::size_t>& utterances,
                                                    FrameScope scope) const {
  std::vector<std::size_t> groups;
  for (auto i : utterances) {
    auto [b, e] = scoped_range(utterances_.at(i), scope);
    groups.insert(groups.end(), static_cast<std::size_t>(e - b), i);
  }
  return groups;
}

HiddenStateSet HiddenStateSet::from_container(const TensorContainer& container) {
  const json& meta = container.metadata();
  if (!meta.is_object() || meta.value("kind", "") != "hidden_states") {
    throw InputError("tensor container is not a hidden-state dump");
  }
  std::vector<UtteranceStates> utterances;
  try {
    const auto layers = meta.at("layers").get<std::vector<int>>();
    for (const auto& entry : meta.at("utterances")) {
      UtteranceStates u;
      u.id = entry.at("id").get<std::string>();
      u.transcript = entry.value("transcript", "");
      for (int layer : layers) {
        u.layers.emplace(layer, to_matrix(container.at(layer_tensor_name(u.id, layer))));
      }
      if (const Tensor* a = container.find(u.id + "/acoustic")) u.acoustic = to_matrix(*a);
      if (auto it = entry.find("audio_span"); it != entry.end() && !it->is_null()) {
        auto span = it->get<std::vector<Eigen::Index>>();
        if (span.size() != 2) throw InputError("audio_span must have two entries");
        u.audio_span = std::make_pair(span[0], span[1]);
      }
      utterances.push_back(std::move(u));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed hidden-state metadata: ") + e.what());
  }
  return HiddenStateSet(std::move(utterances));
}

TensorContainer HiddenStateSet::to_container() const {
  TensorContainer container;
  json utterances = json::array();
  for (const auto& u : utterances_) {
    json entry = {{"id", u.id}, {"transcript", u.transcript}};
    if (u.audio_span) entry["audio_span"] = {u.audio_span->first, u.audio_span->second};
    utterances.push_back(std::move(entry));
    for (const auto& [layer, m] : u.layers) container.add(from_matrix(layer_tensor_name(u.id, layer), m));
    if (u.acoustic) container.add(from_matrix(u.id + "/acoustic", *u.acoustic));
  }
  container.metadata() = {{"kind", "hidden_states"}, {"layers", layers_}, {"utterances", utterances}};
  return container;
}

}  // namespace casceq
