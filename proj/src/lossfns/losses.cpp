#include "kecae/losses.hpp"

#include "kecae/errors.hpp"

#include <cmath>

namespace kecae {

void LossWeights::validate() const {
  if (!(std::isfinite(lambda1) && lambda1 >= 0.0))
    throw UsageError("lambda1 must be finite and >= 0, got " + std::to_string(lambda1));
  if (!(std::isfinite(lambda2) && lambda2 >= 0.0))
    throw UsageError("lambda2 must be finite and >= 0, got " + std::to_string(lambda2));
}

Tensor j_mse(const Tensor &x1, const Tensor &xh1, const Tensor &x2, const Tensor &xh2) {
  return add(mse(x1, xh1), mse(x2, xh2));
}

Tensor j_ce(const DiscOutput &d, const std::vector<Grade> &labels) {
  std::vector<int> idx;
  idx.reserve(labels.size());
  for (Grade g : labels)
    idx.push_back(class_index(g));
  return softmax_cross_entropy(d.logits, idx);
}

Tensor j_ce(const DiscOutput &d, Grade label) {
  if (d.logits.rank() != 2)
    throw ShapeError("j_ce: logits must be N×2, got " + shape_str(d.logits.shape()));
  return j_ce(d, std::vector<Grade>(d.logits.dim(0), label));
}

Tensor j_ce1(const DiscOutput &d1, const DiscOutput &d2) {
  return add(j_ce(d1, Grade::kl0), j_ce(d2, Grade::kl2));
}

Tensor j_ce2(const DiscOutput &d1x, const DiscOutput &d2x) {
  return add(j_ce(d1x, Grade::kl2), j_ce(d2x, Grade::kl0));
}

Tensor j_lda(const Tensor &hU, const Tensor &hK, double eps) {
  return fisher_ratio(hU, hK, eps);
}

Tensor j_lda(const LatentPair &p1, const LatentPair &p2, double eps) {
  return add(j_lda(p1.hU, p1.hK, eps), j_lda(p2.hU, p2.hK, eps));
}

LossReport j_total(double mse, double ce1, double ce2, double lda, const LossWeights &w) {
  LossReport r;
  r.j_mse = mse;
  r.j_ce1 = ce1;
  r.j_ce2 = ce2;
  r.j_lda = lda;
  r.j_total = mse + ce1 + w.lambda1 * ce2 + w.lambda2 * lda;
  return r;
}

Tensor generator_objective(const Tensor &mse, const Tensor &ce2, const Tensor &lda,
                           const LossWeights &w) {
  return weighted_sum({mse, ce2, lda}, {1.0, w.lambda1, w.lambda2});
}

} // namespace kecae
