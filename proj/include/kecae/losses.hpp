#pragma once

#include "kecae/data.hpp"
#include "kecae/net.hpp"
#include "kecae/tensor.hpp"

#include <vector>

namespace kecae {

inline constexpr double kLdaEps = 1e-8;

/// lambda1 weighs the exchanged-label CE term, lambda2 the Fisher term.
struct LossWeights {
  double lambda1 = 1e-2;
  double lambda2 = 1e-3;
  /// Non-negative and finite. Zero is allowed (pure reconstruction).
  void validate() const;
};

struct LossReport {
  double j_mse = 0.0;
  double j_ce1 = 0.0;
  double j_ce2 = 0.0;
  double j_lda = 0.0;
  double j_total = 0.0;
};

/// mse(x1, xh1) + mse(x2, xh2); each mse averages over every element.
Tensor j_mse(const Tensor &x1, const Tensor &xh1, const Tensor &x2, const Tensor &xh2);

/// Mean cross-entropy of softmax(logits) against the given grades.
Tensor j_ce(const DiscOutput &d, const std::vector<Grade> &labels);
/// Same label for every row.
Tensor j_ce(const DiscOutput &d, Grade label);

/// Discriminator loss on real inputs: d1 scored as KL-0, d2 as KL-2.
Tensor j_ce1(const DiscOutput &d1, const DiscOutput &d2);
/// Generator loss on exchanged outputs with swapped labels: X1' scored as
/// KL-2, X2' as KL-0.
Tensor j_ce2(const DiscOutput &d1x, const DiscOutput &d2x);

/// Per-sample Fisher ratio of the flattened hU and hK, averaged over the batch.
Tensor j_lda(const Tensor &hU, const Tensor &hK, double eps = kLdaEps);
/// j_lda(p1) + j_lda(p2).
Tensor j_lda(const LatentPair &p1, const LatentPair &p2, double eps = kLdaEps);

/// J_MSE + J_CE1 + lambda1 * J_CE2 + lambda2 * J_LDA.
LossReport j_total(double mse, double ce1, double ce2, double lda, const LossWeights &w);

/// What the generator minimizes: J_MSE + lambda1 * J_CE2 + lambda2 * J_LDA.
/// J_CE1 belongs to the discriminator's own update.
Tensor generator_objective(const Tensor &mse, const Tensor &ce2, const Tensor &lda,
                           const LossWeights &w);

} // namespace kecae
