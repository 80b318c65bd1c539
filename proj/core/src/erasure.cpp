#include "casceq/erasure.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "casceq/error.hpp"
#include "casceq/rng.hpp"
#include "casceq/tensor_convert.hpp"
#include "casceq/text.hpp"

namespace casceq {

using nlohmann::json;

ConceptKind parse_concept_kind(std::string_view name) {
  if (name == "boc") return ConceptKind::Boc;
  if (name == "proxy" || name == "text") return ConceptKind::Proxy;
  if (name == "ctc") return ConceptKind::Ctc;
  if (name == "acoustic") return ConceptKind::Acoustic;
  if (name == "random") return ConceptKind::Random;
  if (name == "custom") return ConceptKind::Custom;
  throw InputError("unknown concept '" + std::string(name) + "'");
}

std::string_view concept_kind_name(ConceptKind kind) {
  switch (kind) {
    case ConceptKind::Boc: return "boc";
    case ConceptKind::Proxy: return "proxy";
    case ConceptKind::Ctc: return "ctc";
    case ConceptKind::Acoustic: return "acoustic";
    case ConceptKind::Random: return "random";
    case ConceptKind::Custom: return "custom";
  }
  return "?";
}

void ConceptMatrix::validate() const {
  if (!z.allFinite()) throw InputError("concept matrix has non-finite entries");
  if (!one_hot()) return;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    int ones = 0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      if (z(r, c) == 1.0) ++ones;
      else if (z(r, c) != 0.0) throw InputError("one-hot concept row " + std::to_string(r) + " has a non 0/1 entry");
    }
    if (ones != 1) throw InputError("one-hot concept row " + std::to_string(r) + " does not have exactly one 1");
  }
}

double default_shrinkage(const MatrixD& sigma_xx) {
  if (sigma_xx.rows() == 0) return 0.0;
  return 1e-4 * sigma_xx.trace() / static_cast<double>(sigma_xx.rows());
}

MatrixD cross_covariance(const MatrixD& x, const MatrixD& z) {
  if (x.rows() != z.rows()) throw InputError("cross covariance: row counts differ");
  if (x.rows() == 0) throw InputError("cross covariance: no rows");
  const MatrixD xc = x.rowwise() - x.colwise().mean();
  const MatrixD zc = z.rowwise() - z.colwise().mean();
  return xc.transpose() * zc / static_cast<double>(x.rows());
}

Eraser fit_leace(const MatrixD& x, const ConceptMatrix& z, std::optional<double> shrinkage) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index k = z.z.cols();
  if (n < 2) throw InputError("leace: need at least 2 rows");
  if (z.z.rows() != n) {
    throw InputError("leace: concept has " + std::to_string(z.z.rows()) + " rows, hidden states " + std::to_string(n));
  }
  if (k < 1) throw InputError("leace: concept has no columns");
  if (k >= d) throw InputError("leace: concept dimension " + std::to_string(k) + " must be below width " + std::to_string(d));
  if (!x.allFinite()) throw InputError("leace: non-finite hidden states");
  z.validate();

  const MatrixD xc = x.rowwise() - x.colwise().mean();
  const MatrixD sigma_xx = xc.transpose() * xc / static_cast<double>(n);
  const MatrixD sigma_xz = cross_covariance(x, z.z);
  const double s = shrinkage.value_or(default_shrinkage(sigma_xx));
  if (!(s >= 0.0) || !std::isfinite(s)) throw InputError("leace: shrinkage must be >= 0");

  Eigen::SelfAdjointEigenSolver<MatrixD> eig(sigma_xx);
  if (eig.info() != Eigen::Success) throw NumericalError("leace: eigendecomposition failed");
  VectorD lambda = eig.eigenvalues().cwiseMax(0.0).array() + s;
  const double top = lambda.maxCoeff();
  if (!(top > 0.0) || lambda.minCoeff() <= top * 1e-12) {
    throw NumericalError("leace: degenerate covariance; use shrinkage > 0");
  }
  const MatrixD& v = eig.eigenvectors();
  const MatrixD w = v * lambda.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
  const MatrixD w_pinv = v * lambda.cwiseSqrt().asDiagonal() * v.transpose();

  const MatrixD m = w * sigma_xz;
  Eigen::JacobiSVD<MatrixD> svd(m, Eigen::ComputeThinU);
  const VectorD& sv = svd.singularValues();
  // Sigma_xz accumulates rounding over n rows, so the cutoff scales with n too.
  const double size = static_cast<double>(std::max({static_cast<Eigen::Index>(n), d, k}));
  const double tol = sv.size() ? sv(0) * size * std::numeric_limits<double>::epsilon() : 0.0;
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv(rank) > tol) ++rank;
  const MatrixD u = svd.matrixU().leftCols(rank);

  Eraser e;
  e.projection = MatrixD::Identity(d, d) - w_pinv * (u * u.transpose()) * w;
  e.kind = z.kind;
  e.concept_dim = k;
  e.n = static_cast<std::size_t>(n);
  e.shrinkage = s;
  return e;
}

MatrixD apply_eraser(const Eraser& e, const MatrixD& rows) {
  if (rows.cols() != e.width()) {
    throw InputError("eraser width " + std::to_string(e.width()) + " does not match data width " +
                     std::to_string(rows.cols()));
  }
  return rows * e.projection.transpose();
}

MatrixF apply_eraser(const Eraser& e, const MatrixF& rows) {
  return apply_eraser(e, MatrixD(rows.cast<double>())).cast<float>();
}

Eraser eraser_from_basis(const MatrixD& basis) {
  const Eigen::Index d = basis.rows();
  const Eigen::Index k = basis.cols();
  if (k < 1 || k >= d) throw InputError("random eraser: need 1 <= k < d");
  if (!basis.allFinite()) throw InputError("random eraser: non-finite basis");
  Eigen::ColPivHouseholderQR<MatrixD> check(basis);
  if (check.rank() < k) throw InputError("random eraser: basis is rank deficient");
  Eigen::HouseholderQR<MatrixD> qr(basis);
  const MatrixD q = qr.householderQ() * MatrixD::Identity(d, k);
  Eraser e;
  e.projection = MatrixD::Identity(d, d) - q * q.transpose();
  e.kind = ConceptKind::Random;
  e.concept_dim = k;
  return e;
}

Eraser random_eraser(Eigen::Index d, Eigen::Index k, std::uint64_t seed) {
  if (d < 1 || k < 1 || k >= d) throw InputError("random eraser: need 1 <= k < d");
  MatrixD g(d, k);
  Rng rng(seed);
  for (Eigen::Index c = 0; c < k; ++c) {
    for (Eigen::Index r = 0; r < d; ++r) g(r, c) = rng.normal();
  }
  Eraser e = eraser_from_basis(g);
  e.seed = seed;
  return e;
}

double idempotence_error(const Eraser& e) {
  const double norm = e.projection.norm();
  return norm > 0.0 ? (e.projection * e.projection - e.projection).norm() / norm : 0.0;
}

Eigen::Index erased_rank(const Eraser& e, double tol) {
  const MatrixD removed = MatrixD::Identity(e.width(), e.width()) - e.projection;
  Eigen::JacobiSVD<MatrixD> svd(removed);
  const VectorD& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) <= 0.0) return 0;
  Eigen::Index r = 0;
  while (r < sv.size() && sv(r) > tol * sv(0)) ++r;
  return r;
}

namespace {

Eigen::Index row_argmax(const MatrixD& m, Eigen::Index r) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c) {
    if (m(r, c) > m(r, best)) best = c;
  }
  return best;
}

double held_out_score(const MatrixD& x, const MatrixD& z, bool one_hot, const std::vector<std::size_t>& train,
                      const std::vector<std::size_t>& test, std::optional<double> lambda) {
  const RidgeProbe probe = fit_ridge_probe(x, z, lambda, train, test);
  if (!one_hot) return probe.r2_test;
  const MatrixD pred = probe.predict(take_rows(x, test));
  const MatrixD truth = take_rows(z, test);
  std::size_t hits = 0;
  for (Eigen::Index r = 0; r < truth.rows(); ++r) hits += row_argmax(pred, r) == row_argmax(truth, r) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.rows());
}

}  // namespace

GuardednessReport verify_guardedness(const Eraser& e, const MatrixD& x, const ConceptMatrix& z,
                                     const GuardednessOptions& options) {
  if (x.rows() < 2) throw InputError("guardedness: need at least 2 held-out rows");
  if (z.z.rows() != x.rows()) throw InputError("guardedness: concept and hidden-state row counts differ");
  z.validate();
  const MatrixD erased = apply_eraser(e, x);
  const UnitSplit split = split_units(static_cast<std::size_t>(x.rows()), {options.train_fraction, options.seed});
  if (split.test.empty()) throw InputError("guardedness: split leaves no test rows");

  GuardednessReport r;
  r.one_hot = z.one_hot();
  r.n_train = split.train.size();
  r.n_test = split.test.size();
  r.pre_score = held_out_score(x, z.z, r.one_hot, split.train, split.test, options.lambda);
  r.post_score = held_out_score(erased, z.z, r.one_hot, split.train, split.test, options.lambda);
  if (r.one_hot) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(z.z.cols()), 0);
    for (auto i : split.train) ++counts[static_cast<std::size_t>(row_argmax(z.z, static_cast<Eigen::Index>(i)))];
    const auto majority = static_cast<Eigen::Index>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    std::size_t hits = 0;
    for (auto i : split.test) hits += row_argmax(z.z, static_cast<Eigen::Index>(i)) == majority ? 1 : 0;
    r.majority = static_cast<double>(hits) / static_cast<double>(split.test.size());
  }
  r.covariance_norm = cross_covariance(erased, z.z).norm();
  r.covariance_norm_baseline = cross_covariance(x, z.z).norm();
  return r;
}

json to_json(const GuardednessReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json j = {{"metric", r.one_hot ? "accuracy" : "r2"},
            {"pre", num(r.pre_score)},
            {"post", num(r.post_score)},
            {"covariance_norm", r.covariance_norm},
            {"covariance_norm_baseline", r.covariance_norm_baseline},
            {"covariance_relative", r.relative_covariance()},
            {"n_train", r.n_train},
            {"n_test", r.n_test}};
  if (r.majority) j["majority"] = *r.majority;
  return j;
}

// ---- concepts ---------------------------------------------------------------

ConceptMatrix boc_concept(const HiddenStateSet& set) {
  Eigen::Index rows = 0;
  for (const auto& u : set.utterances()) rows += u.audio_range().second - u.audio_range().first;
  ConceptMatrix c{MatrixD(rows, alphabet::kSize), ConceptKind::Boc, false};
  Eigen::Index r = 0;
  for (const auto& u : set.utterances()) {
    const auto boc = boc_vector(u.transcript);
    const auto [b, e] = u.audio_range();
    for (Eigen::Index t = b; t < e; ++t, ++r) {
      for (int k = 0; k < alphabet::kSize; ++k) c.z(r, k) = boc[static_cast<std::size_t>(k)];
    }
  }
  return c;
}

std::string first_word(std::string_view transcript) {
  const std::string text = normalize_text(transcript);
  const std::string word = text.substr(0, text.find(' '));
  auto keep = [](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) || ch == '\''; };
  std::size_t b = 0, e = word.size();
  while (b < e && !keep(word[b])) ++b;
  while (e > b && !keep(word[e - 1])) --e;
  return word.substr(b, e - b);
}

Eigen::Index ProxyVocabulary::index_of(std::string_view word) const {
  auto it = std::find(words.begin(), words.end(), word);
  return it == words.end() ? other() : static_cast<Eigen::Index>(it - words.begin());
}

ProxyVocabulary build_proxy_vocabulary(const HiddenStateSet& set, Eigen::Index classes) {
  if (classes < 2) throw InputError("proxy vocabulary needs at least 2 classes");
  std::map<std::string, std::size_t> counts;
  for (const auto& u : set.utterances()) {
    std::string w = first_word(u.transcript);
    if (!w.empty()) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  ProxyVocabulary v;
  v.classes = classes;
  for (const auto& [w, n] : ranked) {
    if (static_cast<Eigen::Index>(v.words.size()) >= classes - 1) break;
    v.words.push_back(w);
  }
  return v;
}

ConceptMatrix proxy_concept(const HiddenStateSet& set, const ProxyVocabulary& vocab) {
  Eigen::Index rows = 0;
  for (const auto& u : set.utterances()) rows += u.audio_range().second - u.audio_range().first;
  ConceptMatrix c{MatrixD::Zero(rows, vocab.classes), ConceptKind::Proxy, false};
  Eigen::Index r = 0;
  for (const auto& u : set.utterances()) {
    const Eigen::Index cls = vocab.index_of(first_word(u.transcript));
    const auto [b, e] = u.audio_range();
    for (Eigen::Index t = b; t < e; ++t, ++r) c.z(r, cls) = 1.0;
  }
  return c;
}

ConceptMatrix acoustic_concept(const HiddenStateSet& set) {
  Eigen::Index rows = 0;
  for (const auto& u : set.utterances()) rows += u.audio_range().second - u.audio_range().first;
  ConceptMatrix c{MatrixD(rows, 2), ConceptKind::Acoustic, false};
  Eigen::Index r = 0;
  for (const auto& u : set.utterances()) {
    if (!u.acoustic || u.acoustic->rows() < 1) throw InputError("utterance '" + u.id + "' has no acoustic targets");
    const MatrixF& ac = *u.acoustic;
    const auto [b, e] = u.audio_range();
    for (Eigen::Index t = b; t < e; ++t, ++r) {
      const Eigen::Index a = aligned_acoustic_row(t - b, e - b, ac.rows());
      c.z(r, 0) = ac(a, 1);  // pitch
      c.z(r, 1) = ac(a, 0);  // energy
    }
  }
  return c;
}

ConceptMatrix ctc_concept_labels(const CtcProbe& probe, const MatrixD& frames, bool soft) {
  if (frames.cols() != probe.weights.rows()) {
    throw InputError("ctc concept: probe width " + std::to_string(probe.weights.rows()) +
                     " does not match frame width " + std::to_string(frames.cols()));
  }
  const MatrixD logits = probe.logits(frames);
  ConceptMatrix c{MatrixD::Zero(frames.rows(), logits.cols()), ConceptKind::Ctc, soft};
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (soft) {
      const double hi = logits.row(r).maxCoeff();
      const Eigen::RowVectorXd p = (logits.row(r).array() - hi).exp();
      c.z.row(r) = p / p.sum();
    } else {
      c.z(r, row_argmax(logits, r)) = 1.0;
    }
  }
  return c;
}

ConceptMatrix ctc_concept_labels(const CtcProbe& probe, const HiddenStateSet& set, int layer, bool soft) {
  return ctc_concept_labels(probe, set.stacked_frames(layer, FrameScope::Audio), soft);
}

// ---- stacks -----------------------------------------------------------------

std::vector<int> EraserStack::layers() const {
  std::vector<int> out;
  for (const auto& [layer, e] : erasers) out.push_back(layer);
  return out;
}

TensorContainer EraserStack::to_container() const {
  TensorContainer c;
  json entries = json::array();
  std::string concept_name = "custom";
  Eigen::Index dim = 0;
  for (const auto& [layer, e] : erasers) {
    c.add(matrix_tensor("P_e." + std::to_string(layer), e.projection));
    json entry = {{"layer", layer}, {"n", e.n}, {"shrinkage", e.shrinkage}};
    if (e.seed) entry["seed"] = *e.seed;
    entries.push_back(std::move(entry));
    concept_name = std::string(concept_kind_name(e.kind));
    dim = e.concept_dim;
  }
  c.metadata() = {{"kind", "eraser_stack"}, {"concept", concept_name}, {"concept_dim", dim},
                  {"layers", layers()},     {"erasers", entries}};
  if (!concept_info.empty()) c.metadata()["concept_info"] = concept_info;
  return c;
}

EraserStack EraserStack::from_container(const TensorContainer& container) {
  const json& meta = container.metadata();
  if (meta.value("kind", "") != "eraser_stack") throw InputError("container is not an eraser stack");
  EraserStack stack;
  try {
    const ConceptKind kind = parse_concept_kind(meta.value("concept", "custom"));
    const auto dim = meta.value("concept_dim", Eigen::Index{0});
    stack.concept_info = meta.value("concept_info", json::object());
    for (const json& entry : meta.at("erasers")) {
      Eraser e;
      e.layer = entry.at("layer").get<int>();
      e.kind = kind;
      e.concept_dim = dim;
      e.n = entry.value("n", std::size_t{0});
      e.shrinkage = entry.value("shrinkage", 0.0);
      if (entry.contains("seed")) e.seed = entry["seed"].get<std::uint64_t>();
      e.projection = tensor_matrix(container.at("P_e." + std::to_string(e.layer)));
      if (e.projection.rows() != e.projection.cols()) throw InputError("eraser projection must be square");
      if (!stack.erasers.emplace(e.layer, std::move(e)).second) throw InputError("duplicate eraser layer");
    }
  } catch (const json::exception& ex) {
    throw InputError(std::string("malformed eraser stack metadata: ") + ex.what());
  }
  return stack;
}

EraserStack build_stack(const HiddenStateSet& set, const ConceptBuilder& builder, std::optional<double> shrinkage,
                        std::vector<int> layers, unsigned threads) {
  if (set.empty()) throw InputError("build_stack: empty dump");
  if (layers.empty()) layers = set.layers();
  for (int layer : layers) {
    if (!set.has_layer(layer)) throw InputError("build_stack: layer " + std::to_string(layer) + " missing from dump");
  }
  std::vector<Eraser> fitted(layers.size());
  std::vector<std::exception_ptr> errors(layers.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < layers.size(); i += stride) {
      try {
        const ConceptMatrix z = builder(set, layers[i]);
        fitted[i] = fit_leace(set.stacked_frames(layers[i], FrameScope::Audio), z, shrinkage);
        fitted[i].layer = layers[i];
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, layers.size());
  if (n_threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work, t, n_threads);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  EraserStack stack;
  for (auto& e : fitted) {
    const int layer = e.layer;
    stack.erasers.emplace(layer, std::move(e));
  }
  return stack;
}

ConceptBuilder make_concept_builder(ConceptKind kind, ConceptOptions options) {
  switch (kind) {
    case ConceptKind::Boc:
      return [](const HiddenStateSet& set, int) { return boc_concept(set); };
    case ConceptKind::Acoustic:
      return [](const HiddenStateSet& set, int) { return acoustic_concept(set); };
    case ConceptKind::Proxy:
      return [proxy = options.proxy](const HiddenStateSet& set, int) {
        return proxy_concept(set, proxy ? *proxy : build_proxy_vocabulary(set));
      };
    case ConceptKind::Ctc:
      return [options](const HiddenStateSet& set, int layer) {
        auto it = options.ctc_probes.find(layer);
        const CtcProbe probe = it != options.ctc_probes.end() ? it->second
                                                               : fit_ctc_probe(set, layer, options.split, options.ctc);
        return ctc_concept_labels(probe, set, layer, options.soft_ctc);
      };
    case ConceptKind::Random:
    case ConceptKind::Custom:
      break;
  }
  throw InputError("no label builder for concept '" + std::string(concept_kind_name(kind)) + "'");
}

EraserStack random_stack(Eigen::Index d, Eigen::Index k, std::uint64_t seed, const std::vector<int>& layers) {
  EraserStack stack;
  for (int layer : layers) {
    const std::uint64_t layer_seed = Rng::keyed(seed, 2, static_cast<std::uint64_t>(layer)).next();
    Eraser e = random_eraser(d, k, layer_seed);
    e.layer = layer;
    stack.erasers.emplace(layer, std::move(e));
  }
  return stack;
}

HiddenStateSet apply_stack(const EraserStack& stack, const HiddenStateSet& set) {
  for (const auto& [layer, e] : stack.erasers) {
    if (!set.has_layer(layer)) throw InputError("eraser layer " + std::to_string(layer) + " missing from dump");
    if (e.width() != set.width()) {
      throw InputError("eraser width " + std::to_string(e.width()) + " does not match dump width " +
                       std::to_string(set.width()));
    }
  }
  return set.transformed(stack.layers(), [&](int layer, const MatrixF& frames) {
    return apply_eraser(stack.erasers.at(layer), frames);
  });
}

DecodabilityDelta decodability_delta(const HiddenStateSet& set, const EraserStack& stack, int layer,
                                     const SplitSpec& split, const CtcTrainOptions& options) {
  if (!stack.erasers.contains(layer)) throw InputError("no eraser for layer " + std::to_string(layer));
  DecodabilityDelta d;
  d.layer = layer;
  d.before = fit_ctc_probe(set, layer, split, options).text_decodability;
  d.after = fit_ctc_probe(apply_stack(stack, set), layer, split, options).text_decodability;
  return d;
}

}  // namespace casceq
