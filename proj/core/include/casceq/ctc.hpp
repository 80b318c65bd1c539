#pragma once

#include <span>
#include <string>
#include <vector>

#include "casceq/text.hpp"
#include "casceq/types.hpp"

namespace casceq {

struct CtcLossResult {
  double loss = 0.0;  // -log p(target | logits)
  MatrixD grad;       // d loss / d logits, T x C
};

/// Frames needed to emit `target`: its length plus one separator per
/// adjacent repeated symbol.
std::size_t ctc_min_frames(std::span<const int> target);

/// CTC negative log-likelihood via the forward recursion in log space.
/// `logits` are unnormalized scores (T x C); a log-softmax is applied per
/// frame. Throws InputError when the target cannot fit in T frames.
double ctc_loss(const MatrixD& logits, std::span<const int> target,
                int blank = alphabet::kBlank);

/// Loss plus its gradient with respect to the logits (forward-backward).
CtcLossResult ctc_loss_and_grad(const MatrixD& logits, std::span<const int> target,
                                int blank = alphabet::kBlank);

/// Merge repeats, then drop blanks.
std::vector<int> ctc_collapse(std::span<const int> path, int blank = alphabet::kBlank);

/// Per-frame argmax (ties to the lowest class index).
std::vector<int> argmax_path(const MatrixD& logits);

/// Greedy decode over the 49-class alphabet layout.
std::string greedy_ctc_decode(const MatrixD& logits);

}  // namespace casceq
