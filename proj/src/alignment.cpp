#include "mtm/alignment.hpp"

#include "mtm/errors.hpp"

namespace mtm::align {

void MaskSpec::validate() const {
  if (!(theta_mask >= 0.0 && theta_mask <= 1.0)) throw ContractError("MaskSpec: theta_mask must lie in [0, 1]");
  if (!(eta > 0.0 && eta <= 1.0)) throw ContractError("MaskSpec: eta must lie in (0, 1]");
}

void LossWeights::validate() const {
  if (lambda_mdqfa < 0.0 || lambda_mtwfa < 0.0 || lambda_grl < 0.0) {
    throw ContractError("LossWeights: weights must be non-negative");
  }
}

Tensor make_mask(const ag::Shape& shape, double threshold, Rng& rng) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ContractError("make_mask: threshold must lie in [0, 1]");
  std::vector<double> values(ag::numel(shape));
  for (double& v : values) v = rng.uniform() < threshold ? 0.0 : 1.0;
  return Tensor::constant(shape, std::move(values));
}

Discriminator::Discriminator(std::size_t width, Rng& rng) {
  if (width < 4) throw ContractError("Discriminator: width must be at least 4");
  l1_ = nn::Linear(width, width / 2, rng);
  l2_ = nn::Linear(width / 2, width / 4, rng);
  l3_ = nn::Linear(width / 4, 1, rng);
}

Tensor Discriminator::operator()(const Tensor& x) const { return l3_(ag::relu(l2_(ag::relu(l1_(x))))); }

std::size_t Discriminator::parameter_count() const {
  return l1_.weight.size() + l1_.bias.size() + l2_.weight.size() + l2_.bias.size() + l3_.weight.size() +
         l3_.bias.size();
}

Discriminators::Discriminators(std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& d : roles) d = Discriminator(width, rng);
}

namespace {

Tensor masked_alignment(std::span<const Tensor> layers, double domain, double threshold, double lambda_grl, Rng& rng,
                        const Discriminator& disc, AlignmentTrace* trace, bool domain_query_only) {
  if (layers.empty()) throw ContractError("alignment loss: no layer features supplied");
  if (domain != kSourceDomain && domain != kTargetDomain) throw ContractError("alignment loss: domain label must be 0 or 1");
  Tensor total;
  for (const Tensor& z : layers) {
    if (!z.defined() || z.rank() != 2 || z.rows() < 2) throw ContractError("alignment loss: missing layer features");
    const Tensor feats = domain_query_only ? ag::slice_rows(z, 0, 1) : ag::slice_rows(z, 1, z.rows());
    const Tensor mask = make_mask(feats.shape(), threshold, rng);
    const Tensor logits = disc(ag::grad_reverse(ag::mul(feats, mask), lambda_grl));
    const Tensor loss = ag::bce_with_logits(logits, domain);
    total = total.defined() ? ag::add(total, loss) : loss;
    if (trace) {
      trace->masks.push_back(mask);
      trace->logits.insert(trace->logits.end(), logits.data().begin(), logits.data().end());
      trace->per_layer.push_back(logits.size());
    }
  }
  return total;
}

}  // namespace

Tensor mdqfa_loss(std::span<const Tensor> layers, double domain, double threshold, double lambda_grl, Rng& rng,
                  const Discriminator& disc, AlignmentTrace* trace) {
  return masked_alignment(layers, domain, threshold, lambda_grl, rng, disc, trace, true);
}

Tensor mtwfa_loss(std::span<const Tensor> layers, double domain, double threshold, double lambda_grl, Rng& rng,
                  const Discriminator& disc, AlignmentTrace* trace) {
  return masked_alignment(layers, domain, threshold, lambda_grl, rng, disc, trace, false);
}

AdversarialLoss adv_loss_total(std::span<const Tensor> enc_layers, std::span<const Tensor> dec_layers, double domain,
                               const MaskSpec& spec, const Discriminators& discs, const LossWeights& weights,
                               Rng& rng, const std::array<bool, 4>& active) {
  spec.validate();
  weights.validate();
  AdversarialLoss out;
  const double grl = weights.lambda_grl;
  auto& p = out.parts;
  auto& t = out.traces;
  for (std::size_t i = 0; i < 4; ++i) p[i] = Tensor::scalar(0.0);
  if (active[0]) p[0] = mdqfa_loss(enc_layers, domain, spec.mdqfa_threshold(), grl, rng, discs[Role::EncMdqfa], &t[0]);
  if (active[1]) p[1] = mtwfa_loss(enc_layers, domain, spec.mtwfa_threshold(), grl, rng, discs[Role::EncMtwfa], &t[1]);
  if (active[2]) p[2] = mdqfa_loss(dec_layers, domain, spec.mdqfa_threshold(), grl, rng, discs[Role::DecMdqfa], &t[2]);
  if (active[3]) p[3] = mtwfa_loss(dec_layers, domain, spec.mtwfa_threshold(), grl, rng, discs[Role::DecMtwfa], &t[3]);
  out.total = ag::add(ag::scale(ag::add(p[0], p[2]), weights.lambda_mdqfa),
                      ag::scale(ag::add(p[1], p[3]), weights.lambda_mtwfa));
  return out;
}

double discriminator_accuracy(std::span<const double> logits, std::span<const double> labels) {
  if (logits.empty()) throw ContractError("discriminator_accuracy: empty batch");
  if (logits.size() != labels.size()) throw ContractError("discriminator_accuracy: one label per logit required");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double predicted = logits[i] > 0.0 ? 1.0 : 0.0;
    correct += predicted == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.size());
}

}  // namespace mtm::align
