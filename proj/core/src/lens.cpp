#include "casceq/lens.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <exception>
#include <thread>

#include "casceq/error.hpp"
#include "casceq/tensor_convert.hpp"

namespace casceq {

using nlohmann::json;

namespace {

constexpr std::string_view kByteLevelSpace = "\xC4\xA0";  // U+0120

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::size_t utf8_length_at(std::string_view s, std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  std::size_t n = c < 0x80 ? 1 : c >= 0xF0 ? 4 : c >= 0xE0 ? 3 : c >= 0xC0 ? 2 : 1;
  return std::min(n, s.size() - i);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) words.push_back(s.substr(i, j - i));
    i = j;
  }
  return words;
}

bool starts_word(std::string_view token, std::string_view marker) {
  return (!marker.empty() && token.starts_with(marker)) || token.starts_with(kByteLevelSpace) ||
         token.starts_with(' ');
}

}  // namespace

void LensWeights::validate() const {
  if (unembed.rows() < 1 || unembed.cols() < 1) throw InputError("lens weights: empty unembedding");
  if (rms_gamma.size() != unembed.cols()) throw InputError("lens weights: rms_gamma width mismatch");
  if (!rms_gamma.allFinite()) throw InputError("lens weights: non-finite rms_gamma");
  if (static_cast<Eigen::Index>(vocab.size()) != unembed.rows()) {
    throw InputError("lens weights: vocab size " + std::to_string(vocab.size()) + " does not match V = " +
                     std::to_string(unembed.rows()));
  }
  if (!(rms_epsilon >= 0.0)) throw InputError("lens weights: rms_epsilon must be >= 0");
  for (int id : special_ids) {
    if (id < 0 || id >= unembed.rows()) throw InputError("lens weights: special token id out of range");
  }
}

TensorContainer LensWeights::to_container() const {
  validate();
  TensorContainer c;
  Tensor u{"unembed", {unembed.rows(), unembed.cols()}, {}};
  u.data.assign(unembed.data(), unembed.data() + unembed.size());
  c.add(std::move(u));
  c.add(vector_tensor("rms_gamma", rms_gamma));
  json specials = json::array();
  for (int id : special_ids) specials.push_back(vocab[static_cast<std::size_t>(id)]);
  c.metadata() = {{"kind", "lens_weights"},       {"rms_epsilon", rms_epsilon}, {"vocab", vocab},
                  {"special_tokens", specials}, {"boundary_marker", boundary_marker}};
  return c;
}

LensWeights LensWeights::from_container(const TensorContainer& container) {
  const json& meta = container.metadata();
  if (meta.value("kind", "") != "lens_weights") throw InputError("container is not lens weights");
  LensWeights w;
  const Tensor& u = container.at("unembed");
  if (u.shape.size() != 2) throw InputError("unembed must be 2-D");
  w.unembed.resize(u.shape[0], u.shape[1]);
  std::copy(u.data.begin(), u.data.end(), w.unembed.data());
  w.rms_gamma = tensor_vector(container.at("rms_gamma"));
  try {
    w.rms_epsilon = meta.value("rms_epsilon", 1e-6);
    w.vocab = meta.at("vocab").get<std::vector<std::string>>();
    w.boundary_marker = meta.value("boundary_marker", w.boundary_marker);
    const auto specials = meta.value("special_tokens", std::vector<std::string>{});
    for (std::size_t i = 0; i < w.vocab.size(); ++i) {
      if (std::find(specials.begin(), specials.end(), w.vocab[i]) != specials.end()) {
        w.special_ids.insert(static_cast<int>(i));
      }
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed lens metadata: ") + e.what());
  }
  w.validate();
  return w;
}

VectorD rmsnorm(const VectorD& h, const VectorD& gamma, double epsilon) {
  if (h.size() < 1) throw InputError("rmsnorm: empty vector");
  if (gamma.size() != h.size()) throw InputError("rmsnorm: gamma width mismatch");
  if (!h.allFinite()) throw InputError("rmsnorm: non-finite input");
  const double ms = h.squaredNorm() / static_cast<double>(h.size());
  return h.cwiseProduct(gamma) / std::sqrt(ms + epsilon);
}

VectorD lens_logits(const VectorD& h, const LensWeights& w) {
  if (h.size() != w.width()) {
    throw InputError("logit lens: hidden width " + std::to_string(h.size()) + " does not match weights width " +
                     std::to_string(w.width()));
  }
  const VectorD n = rmsnorm(h, w.rms_gamma, w.rms_epsilon);
  VectorD logits(w.vocab_size());
  for (Eigen::Index v = 0; v < w.vocab_size(); ++v) logits(v) = w.unembed.row(v).cast<double>().dot(n.transpose());
  return logits;
}

int argmax_lowest(const VectorD& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return static_cast<int>(best);
}

PositionMode parse_position_mode(std::string_view name) {
  if (name == "audio") return PositionMode::Audio;
  if (name == "all") return PositionMode::All;
  throw InputError("positions must be audio or all");
}

std::vector<Eigen::Index> select_positions(const UtteranceStates& u, PositionMode mode) {
  auto [b, e] = mode == PositionMode::Audio ? u.audio_range() : std::make_pair(Eigen::Index{0}, u.frame_count());
  std::vector<Eigen::Index> out;
  for (Eigen::Index t = b; t < e; ++t) out.push_back(t);
  return out;
}

LensResult logit_lens(const HiddenStateDump& dump, const LensWeights& w, std::span<const Eigen::Index> positions) {
  if (dump.frames.cols() != w.width()) {
    throw InputError("logit lens: dump width " + std::to_string(dump.frames.cols()) +
                     " does not match weights width " + std::to_string(w.width()));
  }
  LensResult r;
  r.layer = dump.layer_index;
  r.utterance_id = dump.utterance_id;
  for (Eigen::Index t : positions) {
    if (t < 0 || t >= dump.frames.rows()) throw InputError("logit lens: position out of range");
    r.positions.push_back(t);
    r.top_tokens.push_back(argmax_lowest(lens_logits(dump.frames.row(t).cast<double>().transpose(), w)));
  }
  return r;
}

std::string normalize_token(std::string_view token, std::string_view boundary_marker) {
  for (;;) {
    if (!boundary_marker.empty() && token.starts_with(boundary_marker)) {
      token.remove_prefix(boundary_marker.size());
    } else if (token.starts_with(kByteLevelSpace)) {
      token.remove_prefix(kByteLevelSpace.size());
    } else if (token.starts_with(' ')) {
      token.remove_prefix(1);
    } else {
      break;
    }
  }
  return ascii_lower(token);
}

ReferenceSegmenter::ReferenceSegmenter(std::span<const std::string> vocab, std::string_view boundary_marker) {
  for (const auto& v : vocab) {
    std::string n = normalize_token(v, boundary_marker);
    if (n.empty()) continue;
    longest_ = std::max(longest_, n.size());
    pieces_.insert(std::move(n));
  }
}

std::vector<std::string> ReferenceSegmenter::segment(std::string_view reference) const {
  const std::string lower = ascii_lower(reference);
  std::vector<std::string> out;
  for (std::string_view word : split_ws(lower)) {
    if (pieces_.empty()) {
      // Whole words, with surrounding ASCII punctuation split off.
      std::size_t b = 0, e = word.size();
      while (b < e && std::ispunct(static_cast<unsigned char>(word[b]))) out.emplace_back(1, word[b++]);
      std::vector<std::string> tail;
      while (e > b && std::ispunct(static_cast<unsigned char>(word[e - 1]))) tail.emplace_back(1, word[--e]);
      if (e > b) out.emplace_back(word.substr(b, e - b));
      out.insert(out.end(), tail.rbegin(), tail.rend());
      continue;
    }
    std::size_t i = 0;
    while (i < word.size()) {
      std::size_t take = 0;
      for (std::size_t len = std::min(longest_, word.size() - i); len > 0; --len) {
        if (pieces_.contains(word.substr(i, len))) {
          take = len;
          break;
        }
      }
      if (take == 0) take = utf8_length_at(word, i);
      out.emplace_back(word.substr(i, take));
      i += take;
    }
  }
  return out;
}

BagPrecision bag_precision(std::span<const std::string> decoded, const std::set<std::string>& reference,
                           std::string_view boundary_marker, bool multiset) {
  std::vector<std::string> tokens;
  for (const auto& t : decoded) {
    std::string n = normalize_token(t, boundary_marker);
    if (!n.empty()) tokens.push_back(std::move(n));
  }
  if (!multiset) {
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  }
  BagPrecision r;
  r.decoded = tokens.size();
  if (tokens.empty()) return r;
  for (const auto& t : tokens) r.matched += reference.contains(t) ? 1 : 0;
  r.precision = static_cast<double>(r.matched) / static_cast<double>(r.decoded);
  return r;
}

BagPrecision bag_precision(std::span<const std::string> decoded, std::string_view reference,
                           const ReferenceSegmenter& segmenter, std::string_view boundary_marker, bool multiset) {
  const auto pieces = segmenter.segment(reference);
  return bag_precision(decoded, std::set<std::string>(pieces.begin(), pieces.end()), boundary_marker, multiset);
}

std::string lens_decode_text(std::span<const int> tokens, const LensWeights& w) {
  std::string out;
  int prev = -1;
  for (int id : tokens) {
    if (id < 0 || id >= static_cast<int>(w.vocab.size())) throw InputError("lens decode: token id out of range");
    if (id == prev) continue;
    prev = id;
    if (w.is_special(id)) continue;
    std::string_view tok = w.vocab[static_cast<std::size_t>(id)];
    if (starts_word(tok, w.boundary_marker)) {
      const std::string stripped = [&] {
        std::string_view t = tok;
        if (!w.boundary_marker.empty() && t.starts_with(w.boundary_marker)) t.remove_prefix(w.boundary_marker.size());
        else if (t.starts_with(kByteLevelSpace)) t.remove_prefix(kByteLevelSpace.size());
        else t.remove_prefix(1);
        return std::string(t);
      }();
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
      out += stripped;
    } else {
      out += tok;
    }
  }
  const auto b = out.find_first_not_of(' ');
  if (b == std::string::npos) return {};
  return out.substr(b, out.find_last_not_of(' ') - b + 1);
}

std::vector<LensResult> lens_layer(const HiddenStateSet& set, const LensWeights& w, int layer,
                                   const ReferenceSegmenter& segmenter, const LensOptions& options) {
  if (!set.has_layer(layer)) throw InputError("layer " + std::to_string(layer) + " not in dump");
  if (set.width() != w.width()) {
    throw InputError("logit lens: dump width " + std::to_string(set.width()) + " does not match weights width " +
                     std::to_string(w.width()));
  }
  std::vector<LensResult> results(set.size());
  std::vector<std::exception_ptr> errors(set.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < set.size(); i += stride) {
      try {
        const auto& u = set.utterances()[i];
        const auto positions = select_positions(u, options.positions);
        LensResult r = logit_lens(set.dump(i, layer), w, positions);
        std::vector<std::string> decoded;
        for (int id : r.top_tokens) {
          if (!w.is_special(id)) decoded.push_back(w.vocab[static_cast<std::size_t>(id)]);
        }
        r.bag_precision = bag_precision(decoded, u.transcript, segmenter, w.boundary_marker, options.multiset).precision;
        results[i] = std::move(r);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(set.size(), 1));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

std::vector<LensLayerScore> lens_curve(const HiddenStateSet& set, const LensWeights& w,
                                       const std::vector<int>& layers, const LensOptions& options) {
  const ReferenceSegmenter segmenter(w.vocab, w.boundary_marker);
  std::vector<LensLayerScore> out;
  for (int layer : layers) {
    LensLayerScore s{layer, std::nullopt, 0};
    double sum = 0.0;
    for (const auto& r : lens_layer(set, w, layer, segmenter, options)) {
      if (!r.bag_precision) continue;
      sum += *r.bag_precision;
      ++s.utterances;
    }
    if (s.utterances > 0) s.mean_precision = sum / static_cast<double>(s.utterances);
    out.push_back(s);
  }
  return out;
}

json to_json(const LensLayerScore& score) {
  return {{"layer", score.layer},
          {"bag_precision", score.mean_precision ? json(*score.mean_precision) : json(nullptr)},
          {"utterances", score.utterances}};
}

}  // namespace casceq
