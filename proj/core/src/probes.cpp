#include "casceq/probes.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "casceq/ctc.hpp"
#include "casceq/error.hpp"
#include "casceq/rng.hpp"
#include "casceq/tensor_convert.hpp"

namespace casceq {

using nlohmann::json;

UnitSplit split_units(std::size_t n, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0)) {
    throw InputError("train fraction must be in (0, 1]");
  }
  std::vector<std::size_t> order = all_indices(n);
  Rng rng(spec.seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  auto cut = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  if (n >= 2 && spec.train_fraction < 1.0) cut = std::clamp<std::size_t>(cut, 1, n - 1);
  cut = std::min(cut, n);
  UnitSplit split;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::vector<std::size_t> rows_in(const std::vector<std::size_t>& groups,
                                 const std::vector<std::size_t>& units) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < groups.size(); ++r) {
    if (std::binary_search(units.begin(), units.end(), groups[r])) rows.push_back(r);
  }
  return rows;
}

MatrixD take_rows(const MatrixD& m, const std::vector<std::size_t>& rows) {
  MatrixD out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

double default_ridge_lambda(const MatrixD& x) {
  if (x.rows() == 0 || x.cols() == 0) return 1e-3;
  const MatrixD xc = x.rowwise() - x.colwise().mean();
  const double trace = xc.squaredNorm();
  return trace > 0.0 ? 1e-3 * trace / static_cast<double>(x.cols()) : 1e-3;
}

std::vector<std::optional<double>> r2_per_target(const MatrixD& y, const MatrixD& y_hat) {
  if (y.rows() != y_hat.rows() || y.cols() != y_hat.cols()) throw InputError("r2: shape mismatch");
  std::vector<std::optional<double>> out(static_cast<std::size_t>(y.cols()));
  if (y.rows() == 0) return out;
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    const double mean = y.col(j).mean();
    const double ss_tot = (y.col(j).array() - mean).square().sum();
    if (ss_tot <= 0.0) continue;
    const double ss_res = (y.col(j) - y_hat.col(j)).squaredNorm();
    out[static_cast<std::size_t>(j)] = 1.0 - ss_res / ss_tot;
  }
  return out;
}

double mean_r2(const MatrixD& y, const MatrixD& y_hat) {
  double sum = 0.0;
  int defined = 0;
  for (const auto& r : r2_per_target(y, y_hat)) {
    if (r) {
      sum += *r;
      ++defined;
    }
  }
  return defined ? sum / defined : std::numeric_limits<double>::quiet_NaN();
}

MatrixD RidgeProbe::predict(const MatrixD& x) const {
  if (x.cols() != weights.rows()) throw InputError("ridge probe: width mismatch");
  return (x * weights).rowwise() + intercept.transpose();
}

RidgeProbe fit_ridge(const MatrixD& x, const MatrixD& y, double lambda, bool fit_intercept) {
  if (x.rows() != y.rows()) throw InputError("ridge: X and Y row counts differ");
  if (x.rows() < 2) throw InputError("ridge: need at least 2 training rows");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InputError("ridge: lambda must be >= 0");
  if (!x.allFinite() || !y.allFinite()) throw InputError("ridge: non-finite data");

  const Eigen::RowVectorXd x_mean = fit_intercept ? Eigen::RowVectorXd(x.colwise().mean())
                                                  : Eigen::RowVectorXd::Zero(x.cols());
  const Eigen::RowVectorXd y_mean = fit_intercept ? Eigen::RowVectorXd(y.colwise().mean())
                                                  : Eigen::RowVectorXd::Zero(y.cols());
  const MatrixD xc = x.rowwise() - x_mean;
  const MatrixD yc = y.rowwise() - y_mean;
  MatrixD gram = xc.transpose() * xc;
  gram.diagonal().array() += lambda;
  const MatrixD rhs = xc.transpose() * yc;

  RidgeProbe probe;
  probe.lambda = lambda;
  if (lambda == 0.0) {
    Eigen::FullPivLU<MatrixD> lu(gram);
    if (!lu.isInvertible()) {
      throw NumericalError("ridge: normal equations are singular at lambda = 0; use lambda > 0");
    }
    probe.weights = lu.solve(rhs);
  } else {
    Eigen::LLT<MatrixD> llt(gram);
    if (llt.info() != Eigen::Success) throw NumericalError("ridge: Cholesky factorization failed");
    probe.weights = llt.solve(rhs);
  }
  probe.intercept = (y_mean - x_mean * probe.weights).transpose();
  probe.r2_train = mean_r2(y, probe.predict(x));
  probe.r2_test = std::numeric_limits<double>::quiet_NaN();
  return probe;
}

RidgeProbe fit_ridge_probe(const MatrixD& x, const MatrixD& y, std::optional<double> lambda,
                           const std::vector<std::size_t>& train_rows,
                           const std::vector<std::size_t>& test_rows) {
  const MatrixD x_train = take_rows(x, train_rows);
  RidgeProbe probe = fit_ridge(x_train, take_rows(y, train_rows),
                               lambda.value_or(default_ridge_lambda(x_train)));
  if (!test_rows.empty()) {
    const MatrixD y_test = take_rows(y, test_rows);
    const MatrixD y_hat = probe.predict(take_rows(x, test_rows));
    probe.r2_test_per_target = r2_per_target(y_test, y_hat);
    probe.r2_test = mean_r2(y_test, y_hat);
  }
  return probe;
}

RidgeProbe fit_ridge_probe(const MatrixD& x, const MatrixD& y, std::optional<double> lambda,
                           const std::vector<std::size_t>& groups, const SplitSpec& split) {
  if (groups.size() != static_cast<std::size_t>(x.rows())) throw InputError("ridge: one group per row required");
  std::vector<std::size_t> units = groups;
  std::sort(units.begin(), units.end());
  units.erase(std::unique(units.begin(), units.end()), units.end());
  const UnitSplit s = split_units(units.size(), split);
  std::vector<std::size_t> train_units, test_units;
  for (auto i : s.train) train_units.push_back(units[i]);
  for (auto i : s.test) test_units.push_back(units[i]);
  return fit_ridge_probe(x, y, lambda, rows_in(groups, train_units), rows_in(groups, test_units));
}

ProbeKind parse_probe_kind(std::string_view name) {
  if (name == "energy") return ProbeKind::Energy;
  if (name == "pitch") return ProbeKind::Pitch;
  if (name == "boc") return ProbeKind::Boc;
  if (name == "ctc") return ProbeKind::Ctc;
  throw InputError("unknown probe target '" + std::string(name) + "'");
}

std::string_view probe_kind_name(ProbeKind kind) {
  switch (kind) {
    case ProbeKind::Energy: return "energy";
    case ProbeKind::Pitch: return "pitch";
    case ProbeKind::Boc: return "boc";
    case ProbeKind::Ctc: return "ctc";
  }
  return "?";
}

Eigen::Index aligned_acoustic_row(Eigen::Index t, Eigen::Index positions, Eigen::Index acoustic_frames) {
  const double pos = (static_cast<double>(t) + 0.5) * static_cast<double>(acoustic_frames) /
                     static_cast<double>(positions);
  return std::min<Eigen::Index>(static_cast<Eigen::Index>(std::floor(pos)), acoustic_frames - 1);
}

ProbeData acoustic_probe_data(const HiddenStateSet& set, int layer, ProbeKind kind) {
  if (kind != ProbeKind::Energy && kind != ProbeKind::Pitch) {
    throw InputError("acoustic probe target must be energy or pitch");
  }
  if (!set.has_layer(layer)) throw InputError("layer " + std::to_string(layer) + " not in dump");
  const Eigen::Index column = kind == ProbeKind::Energy ? 0 : 1;
  std::vector<std::pair<std::size_t, Eigen::Index>> picks;  // (utterance, position)
  std::vector<double> targets;
  const auto& utts = set.utterances();
  for (std::size_t u = 0; u < utts.size(); ++u) {
    if (!utts[u].acoustic) throw InputError("utterance '" + utts[u].id + "' has no acoustic targets");
    const MatrixF& ac = *utts[u].acoustic;
    if (ac.rows() < 1) throw InputError("utterance '" + utts[u].id + "' has empty acoustic targets");
    auto [b, e] = utts[u].audio_range();
    for (Eigen::Index t = b; t < e; ++t) {
      const double value = ac(aligned_acoustic_row(t - b, e - b, ac.rows()), column);
      if (kind == ProbeKind::Pitch && value <= 0.0) continue;  // unvoiced
      picks.emplace_back(u, t);
      targets.push_back(value);
    }
  }
  ProbeData data;
  data.x.resize(static_cast<Eigen::Index>(picks.size()), set.width());
  data.y.resize(static_cast<Eigen::Index>(picks.size()), 1);
  for (std::size_t r = 0; r < picks.size(); ++r) {
    const auto [u, t] = picks[r];
    data.x.row(static_cast<Eigen::Index>(r)) = utts[u].layers.at(layer).row(t).cast<double>();
    data.y(static_cast<Eigen::Index>(r), 0) = targets[r];
    data.groups.push_back(u);
  }
  return data;
}

ProbeData boc_probe_data(const HiddenStateSet& set, int layer) {
  if (!set.has_layer(layer)) throw InputError("layer " + std::to_string(layer) + " not in dump");
  const auto& utts = set.utterances();
  ProbeData data;
  data.x.resize(static_cast<Eigen::Index>(utts.size()), set.width());
  data.y.resize(static_cast<Eigen::Index>(utts.size()), alphabet::kSize);
  for (std::size_t u = 0; u < utts.size(); ++u) {
    auto [b, e] = utts[u].audio_range();
    const auto r = static_cast<Eigen::Index>(u);
    data.x.row(r) = utts[u].layers.at(layer).middleRows(b, e - b).cast<double>().colwise().mean();
    const auto boc = boc_vector(utts[u].transcript);
    for (int k = 0; k < alphabet::kSize; ++k) data.y(r, k) = boc[static_cast<std::size_t>(k)];
    data.groups.push_back(u);
  }
  return data;
}

// ---- CTC probe -------------------------------------------------------------

MatrixD CtcProbe::logits(const MatrixD& frames) const {
  if (frames.cols() != weights.rows()) throw InputError("ctc probe: width mismatch");
  return (frames * weights).rowwise() + bias.transpose();
}

std::string CtcProbe::decode(const MatrixD& frames) const { return greedy_ctc_decode(logits(frames)); }

TensorContainer CtcProbe::to_container() const {
  TensorContainer c;
  c.add(matrix_tensor("weights", weights));
  c.add(vector_tensor("bias", bias));
  c.metadata() = {{"kind", "ctc_probe"},
                  {"layer", layer},
                  {"blank_index", blank_index},
                  {"text_decodability", text_decodability}};
  return c;
}

CtcProbe CtcProbe::from_container(const TensorContainer& container) {
  const json& meta = container.metadata();
  if (meta.value("kind", "") != "ctc_probe") throw InputError("container is not a CTC probe");
  CtcProbe p;
  p.weights = tensor_matrix(container.at("weights"));
  p.bias = tensor_vector(container.at("bias"));
  if (p.weights.cols() != alphabet::kClasses || p.bias.size() != alphabet::kClasses) {
    throw InputError("CTC probe must have " + std::to_string(alphabet::kClasses) + " classes");
  }
  p.layer = meta.value("layer", -1);
  p.blank_index = meta.value("blank_index", alphabet::kBlank);
  p.text_decodability = meta.value("text_decodability", 0.0);
  return p;
}

CtcProbe init_ctc_probe(Eigen::Index width, double init_scale, std::uint64_t seed) {
  if (width < 1) throw InputError("ctc probe: width must be positive");
  CtcProbe p;
  p.weights.resize(width, alphabet::kClasses);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < width; ++i) {
    for (Eigen::Index k = 0; k < alphabet::kClasses; ++k) p.weights(i, k) = init_scale * rng.normal();
  }
  p.bias = VectorD::Zero(alphabet::kClasses);
  return p;
}

namespace {

MatrixD audio_frames(const UtteranceStates& u, int layer) {
  auto [b, e] = u.audio_range();
  return u.layers.at(layer).middleRows(b, e - b).cast<double>();
}

std::vector<int> checked_target(const UtteranceStates& u, Eigen::Index frames) {
  std::vector<int> target = encode_text(u.transcript);
  if (target.empty()) throw InputError("utterance '" + u.id + "' has an empty normalized transcript");
  if (ctc_min_frames(target) > static_cast<std::size_t>(frames)) {
    throw InputError("utterance '" + u.id + "': transcript needs more frames than the " +
                     std::to_string(frames) + " audio positions");
  }
  return target;
}

}  // namespace

double evaluate_ctc_probe(const CtcProbe& probe, const HiddenStateSet& set, int layer,
                          const std::vector<std::size_t>& utterances) {
  if (utterances.empty()) throw InputError("ctc probe evaluation needs at least one utterance");
  if (!set.has_layer(layer)) throw InputError("layer " + std::to_string(layer) + " not in dump");
  double sum = 0.0;
  for (auto i : utterances) {
    const auto& u = set.utterances().at(i);
    const std::string ref = normalize_text(u.transcript);
    if (ref.empty()) throw InputError("utterance '" + u.id + "' has an empty normalized transcript");
    sum += text_decodability(probe.decode(audio_frames(u, layer)), ref);
  }
  return sum / static_cast<double>(utterances.size());
}

CtcProbe fit_ctc_probe(const HiddenStateSet& set, int layer, const SplitSpec& split,
                       const CtcTrainOptions& options) {
  if (!set.has_layer(layer)) throw InputError("layer " + std::to_string(layer) + " not in dump");
  if (options.epochs < 0) throw InputError("ctc probe: epochs must be >= 0");
  if (options.batch_size < 1) throw InputError("ctc probe: batch size must be >= 1");
  if (!(options.learning_rate > 0.0)) throw InputError("ctc probe: learning rate must be positive");
  const UnitSplit s = split_units(set.size(), split);
  if (s.train.size() < 2) throw InputError("ctc probe: need at least 2 training utterances");

  const auto& utts = set.utterances();
  std::vector<std::vector<int>> targets(utts.size());
  for (std::size_t i = 0; i < utts.size(); ++i) {
    auto [b, e] = utts[i].audio_range();
    targets[i] = checked_target(utts[i], e - b);
  }

  // Standardization statistics over train frames.
  const Eigen::Index d = set.width();
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(d);
  double count = 0.0;
  for (auto i : s.train) {
    const MatrixD h = audio_frames(utts[i], layer);
    mean += h.colwise().sum();
    sq += h.array().square().matrix().colwise().sum();
    count += static_cast<double>(h.rows());
  }
  mean /= count;
  Eigen::RowVectorXd scale = (sq / count - mean.array().square().matrix()).cwiseMax(0.0).cwiseSqrt();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (scale(j) < 1e-12) scale(j) = 1.0;
  }
  const Eigen::RowVectorXd inv_scale = scale.cwiseInverse();
  auto standardize = [&](const MatrixD& h) -> MatrixD {
    return (h.rowwise() - mean).array().rowwise() * inv_scale.array();
  };

  CtcProbe p = init_ctc_probe(d, options.init_scale, options.seed);
  std::size_t step = 0;
  std::vector<std::size_t> order = s.train;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    Rng rng = Rng::keyed(options.seed, 1, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t stop = std::min(order.size(), start + options.batch_size);
      MatrixD grad_w = MatrixD::Zero(d, alphabet::kClasses);
      VectorD grad_b = VectorD::Zero(alphabet::kClasses);
      double loss = 0.0;
      for (std::size_t j = start; j < stop; ++j) {
        const std::size_t u = order[j];
        const MatrixD hs = standardize(audio_frames(utts[u], layer));
        const MatrixD logits = (hs * p.weights).rowwise() + p.bias.transpose();
        if (!logits.allFinite()) {
          throw NumericalError("ctc probe diverged at step " + std::to_string(step) + " (epoch " +
                               std::to_string(epoch) + ")");
        }
        // Per-frame mean loss keeps step sizes comparable across lengths.
        const double frames = static_cast<double>(hs.rows());
        const CtcLossResult r = ctc_loss_and_grad(logits, targets[u], p.blank_index);
        loss += r.loss / frames;
        grad_w.noalias() += hs.transpose() * r.grad / frames;
        grad_b += r.grad.colwise().sum().transpose() / frames;
      }
      const double batch = static_cast<double>(stop - start);
      if (!std::isfinite(loss)) {
        throw NumericalError("ctc probe diverged at step " + std::to_string(step) + " (epoch " +
                             std::to_string(epoch) + "): non-finite loss");
      }
      p.weights -= options.learning_rate / batch * grad_w;
      p.bias -= options.learning_rate / batch * grad_b;
      ++step;
    }
  }

  // Fold the standardization into the linear map.
  CtcProbe folded;
  folded.layer = layer;
  folded.weights = inv_scale.transpose().asDiagonal() * p.weights;
  folded.bias = p.bias - (mean * folded.weights).transpose();
  folded.text_decodability = s.test.empty() ? std::numeric_limits<double>::quiet_NaN()
                                            : evaluate_ctc_probe(folded, set, layer, s.test);
  return folded;
}

// ---- curves ----------------------------------------------------------------

namespace {

double layer_score(const HiddenStateSet& set, int layer, ProbeKind kind, const ProbeCurveOptions& options) {
  switch (kind) {
    case ProbeKind::Energy:
    case ProbeKind::Pitch: {
      const ProbeData data = acoustic_probe_data(set, layer, kind);
      return fit_ridge_probe(data.x, data.y, options.lambda, data.groups, options.split).r2_test;
    }
    case ProbeKind::Boc: {
      const ProbeData data = boc_probe_data(set, layer);
      return fit_ridge_probe(data.x, data.y, options.lambda, data.groups, options.split).r2_test;
    }
    case ProbeKind::Ctc:
      return fit_ctc_probe(set, layer, options.split, options.ctc).text_decodability;
  }
  return 0.0;
}

}  // namespace

std::vector<ProbeScore> probe_curve(const HiddenStateSet& set, ProbeKind kind, const ProbeCurveOptions& options) {
  if (set.empty()) throw InputError("probe curve: empty dump");
  const std::vector<int>& layers = set.layers();
  std::vector<ProbeScore> scores(layers.size());
  std::vector<std::exception_ptr> errors(layers.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < layers.size(); i += stride) {
      try {
        scores[i] = {layers[i], kind, layer_score(set, layers[i], kind, options)};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, layers.size());
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return scores;
}

json to_json(const ProbeScore& score) {
  json j = {{"layer", score.layer}, {"probe", probe_kind_name(score.kind)}};
  j["score"] = std::isfinite(score.score) ? json(score.score) : json(nullptr);
  return j;
}

TensorContainer StoredRidgeProbe::to_container() const {
  TensorContainer c;
  c.add(matrix_tensor("weights", probe.weights));
  c.add(vector_tensor("intercept", probe.intercept));
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  c.metadata() = {{"kind", "ridge_probe"},         {"target", probe_kind_name(target)},
                  {"layer", layer},                {"lambda", probe.lambda},
                  {"r2_train", num(probe.r2_train)}, {"r2_test", num(probe.r2_test)}};
  return c;
}

StoredRidgeProbe StoredRidgeProbe::from_container(const TensorContainer& container) {
  const json& meta = container.metadata();
  if (meta.value("kind", "") != "ridge_probe") throw InputError("container is not a ridge probe");
  StoredRidgeProbe s;
  try {
    s.target = parse_probe_kind(meta.at("target").get<std::string>());
    s.layer = meta.at("layer").get<int>();
    s.probe.lambda = meta.value("lambda", 0.0);
    const auto nan = std::numeric_limits<double>::quiet_NaN();
    s.probe.r2_train = meta.contains("r2_train") && meta["r2_train"].is_number() ? meta["r2_train"].get<double>() : nan;
    s.probe.r2_test = meta.contains("r2_test") && meta["r2_test"].is_number() ? meta["r2_test"].get<double>() : nan;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed ridge probe metadata: ") + e.what());
  }
  s.probe.weights = tensor_matrix(container.at("weights"));
  s.probe.intercept = tensor_vector(container.at("intercept"));
  if (s.probe.intercept.size() != s.probe.weights.cols()) throw InputError("ridge probe: intercept size mismatch");
  return s;
}

double evaluate_ridge_probe(const StoredRidgeProbe& stored, const HiddenStateSet& set) {
  const ProbeData data = stored.target == ProbeKind::Boc ? boc_probe_data(set, stored.layer)
                                                         : acoustic_probe_data(set, stored.layer, stored.target);
  return mean_r2(data.y, stored.probe.predict(data.x));
}

}  // namespace casceq
