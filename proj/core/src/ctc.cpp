#include "casceq/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "casceq/error.hpp"

namespace casceq {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

MatrixD log_softmax_rows(const MatrixD& logits) {
  MatrixD out(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const double hi = logits.row(t).maxCoeff();
    const double lse = hi + std::log((logits.row(t).array() - hi).exp().sum());
    out.row(t) = logits.row(t).array() - lse;
  }
  return out;
}

void check_inputs(const MatrixD& logits, std::span<const int> target, int blank) {
  if (logits.rows() < 1) throw InputError("ctc: need at least one frame");
  if (blank < 0 || blank >= logits.cols()) throw InputError("ctc: blank index out of range");
  if (!logits.allFinite()) throw InputError("ctc: non-finite logits");
  for (int s : target) {
    if (s < 0 || s >= logits.cols() || s == blank) throw InputError("ctc: target symbol out of range");
  }
  if (static_cast<std::size_t>(logits.rows()) < ctc_min_frames(target)) {
    throw InputError("ctc: target of length " + std::to_string(target.size()) +
                     " is unreachable within " + std::to_string(logits.rows()) + " frames");
  }
}

// Blank-augmented label sequence: blank, y1, blank, y2, ..., blank.
std::vector<int> extend(std::span<const int> target, int blank) {
  std::vector<int> ext(2 * target.size() + 1, blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  return ext;
}

bool can_skip(const std::vector<int>& ext, std::size_t s, int blank) {
  return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
}

struct Lattice {
  MatrixD log_probs;  // T x C
  std::vector<int> ext;
  MatrixD alpha;      // T x S, includes emission at t
  double log_likelihood = kNegInf;
};

Lattice forward(const MatrixD& logits, std::span<const int> target, int blank) {
  Lattice lat;
  lat.log_probs = log_softmax_rows(logits);
  lat.ext = extend(target, blank);
  const auto T = logits.rows();
  const auto S = static_cast<Eigen::Index>(lat.ext.size());
  lat.alpha = MatrixD::Constant(T, S, kNegInf);
  lat.alpha(0, 0) = lat.log_probs(0, blank);
  if (S > 1) lat.alpha(0, 1) = lat.log_probs(0, lat.ext[1]);
  for (Eigen::Index t = 1; t < T; ++t) {
    for (Eigen::Index s = 0; s < S; ++s) {
      const auto su = static_cast<std::size_t>(s);
      double acc = lat.alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, lat.alpha(t - 1, s - 1));
      if (can_skip(lat.ext, su, blank)) acc = log_add(acc, lat.alpha(t - 1, s - 2));
      if (acc != kNegInf) lat.alpha(t, s) = acc + lat.log_probs(t, lat.ext[su]);
    }
  }
  lat.log_likelihood = lat.alpha(T - 1, S - 1);
  if (S > 1) lat.log_likelihood = log_add(lat.log_likelihood, lat.alpha(T - 1, S - 2));
  if (lat.log_likelihood == kNegInf) throw InputError("ctc: target unreachable");
  return lat;
}

}  // namespace

std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t frames = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) frames += target[i] == target[i - 1] ? 1 : 0;
  return frames;
}

double ctc_loss(const MatrixD& logits, std::span<const int> target, int blank) {
  check_inputs(logits, target, blank);
  return -forward(logits, target, blank).log_likelihood;
}

CtcLossResult ctc_loss_and_grad(const MatrixD& logits, std::span<const int> target, int blank) {
  check_inputs(logits, target, blank);
  const Lattice lat = forward(logits, target, blank);
  const auto T = logits.rows();
  const auto C = logits.cols();
  const auto S = static_cast<Eigen::Index>(lat.ext.size());

  // beta(t, s): log-probability of completing the target from state s at
  // time t, excluding the emission at t.
  MatrixD beta = MatrixD::Constant(T, S, kNegInf);
  beta(T - 1, S - 1) = 0.0;
  if (S > 1) beta(T - 1, S - 2) = 0.0;
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    for (Eigen::Index s = 0; s < S; ++s) {
      double acc = beta(t + 1, s) + lat.log_probs(t + 1, lat.ext[static_cast<std::size_t>(s)]);
      if (s + 1 < S) {
        acc = log_add(acc, beta(t + 1, s + 1) + lat.log_probs(t + 1, lat.ext[static_cast<std::size_t>(s + 1)]));
      }
      if (s + 2 < S && can_skip(lat.ext, static_cast<std::size_t>(s + 2), blank)) {
        acc = log_add(acc, beta(t + 1, s + 2) + lat.log_probs(t + 1, lat.ext[static_cast<std::size_t>(s + 2)]));
      }
      beta(t, s) = acc;
    }
  }

  CtcLossResult result;
  result.loss = -lat.log_likelihood;
  result.grad = lat.log_probs.array().exp();  // softmax
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index s = 0; s < S; ++s) {
      const double occ = lat.alpha(t, s) + beta(t, s) - lat.log_likelihood;
      if (occ == kNegInf) continue;
      result.grad(t, lat.ext[static_cast<std::size_t>(s)]) -= std::exp(occ);
    }
  }
  (void)C;
  return result;
}

std::vector<int> ctc_collapse(std::span<const int> path, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int p : path) {
    if (p != prev && p != blank) out.push_back(p);
    prev = p;
  }
  return out;
}

std::vector<int> argmax_path(const MatrixD& logits) {
  std::vector<int> path(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(t, k) > logits(t, best)) best = k;
    }
    path[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return path;
}

std::string greedy_ctc_decode(const MatrixD& logits) {
  if (logits.rows() > 0 && logits.cols() != alphabet::kClasses) {
    throw InputError("greedy_ctc_decode expects " + std::to_string(alphabet::kClasses) + " classes");
  }
  return decode_symbols(ctc_collapse(argmax_path(logits), alphabet::kBlank));
}

}  // namespace casceq
