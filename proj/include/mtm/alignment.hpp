#pragma once

// Masked domain-query (MDQFA) and masked token-wise (MTWFA) feature alignment.
// Features are masked with fresh Bernoulli draws, passed through gradient
// reversal and classified by per-role domain discriminators. The masked copies
// only ever feed the discriminators.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtm/autograd.hpp"
#include "mtm/nn.hpp"
#include "mtm/rng.hpp"

namespace mtm::align {

using ag::Tensor;

inline constexpr double kSourceDomain = 0.0;
inline constexpr double kTargetDomain = 1.0;  // target and target-like share this label

struct MaskSpec {
  double theta_mask = 0.40;  // MDQFA threshold
  double eta = 0.50;         // MTWFA uses eta * theta_mask
  bool mask_mdqfa = true;    // false: non-masked alignment for this component
  bool mask_mtwfa = true;

  double mdqfa_threshold() const { return mask_mdqfa ? theta_mask : 0.0; }
  double mtwfa_threshold() const { return mask_mtwfa ? eta * theta_mask : 0.0; }
  void validate() const;
};

struct LossWeights {
  double lambda_mdqfa = 0.1;
  double lambda_mtwfa = 1.0;
  double lambda_grl = 1.0;
  void validate() const;
};

// Entry is 0 with probability `threshold`, else 1. Throws ContractError outside [0, 1].
Tensor make_mask(const ag::Shape& shape, double threshold, Rng& rng);

/// C -> C/2 -> C/4 -> 1 perceptron with ReLU; one logit per input row.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(std::size_t width, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  std::size_t width() const { return l1_.in_features(); }
  std::size_t parameter_count() const;

  template <typename F>
  void for_each_param(const std::string& p, F&& fn) {
    l1_.for_each_param(p + ".l1", fn);
    l2_.for_each_param(p + ".l2", fn);
    l3_.for_each_param(p + ".l3", fn);
  }

 private:
  nn::Linear l1_, l2_, l3_;
};

enum class Role : std::size_t { EncMdqfa = 0, EncMtwfa = 1, DecMdqfa = 2, DecMtwfa = 3 };
inline constexpr std::array<const char*, 4> kRoleNames{"enc_mdqfa", "enc_mtwfa", "dec_mdqfa", "dec_mtwfa"};

struct Discriminators {
  std::array<Discriminator, 4> roles;

  Discriminators() = default;
  Discriminators(std::size_t width, std::uint64_t seed);

  Discriminator& operator[](Role r) { return roles[static_cast<std::size_t>(r)]; }
  const Discriminator& operator[](Role r) const { return roles[static_cast<std::size_t>(r)]; }

  template <typename F>
  void for_each_param(const std::string& p, F&& fn) {
    for (std::size_t i = 0; i < roles.size(); ++i) roles[i].for_each_param(p + kRoleNames[i], fn);
  }
};

// Optional capture of what the discriminator saw; used by diagnostics and tests.
struct AlignmentTrace {
  std::vector<Tensor> masks;          // one per layer
  std::vector<double> logits;         // concatenated over layers
  std::vector<std::size_t> per_layer; // logit count per layer
};

/// Sum over layers of BCE(D(GRL(M ⊙ row0(Z_l))), d).
Tensor mdqfa_loss(std::span<const Tensor> layers, double domain, double threshold, double lambda_grl, Rng& rng,
                  const Discriminator& disc, AlignmentTrace* trace = nullptr);

/// Sum over layers of mean-over-tokens BCE(D(GRL(M ⊙ Z_l[1..N])), d).
Tensor mtwfa_loss(std::span<const Tensor> layers, double domain, double threshold, double lambda_grl, Rng& rng,
                  const Discriminator& disc, AlignmentTrace* trace = nullptr);

struct AdversarialLoss {
  Tensor total;
  std::array<Tensor, 4> parts;           // unweighted per-role sums over layers
  std::array<AlignmentTrace, 4> traces;  // logits seen by each discriminator
};

/// lambda_mdqfa * (enc + dec MDQFA) + lambda_mtwfa * (enc + dec MTWFA).
/// Roles switched off in `active` contribute a constant zero and draw no masks.
AdversarialLoss adv_loss_total(std::span<const Tensor> enc_layers, std::span<const Tensor> dec_layers, double domain,
                               const MaskSpec& spec, const Discriminators& discs, const LossWeights& weights,
                               Rng& rng, const std::array<bool, 4>& active = {true, true, true, true});

// Fraction of logits whose side matches the label; a zero logit counts as domain 0.
double discriminator_accuracy(std::span<const double> logits, std::span<const double> labels);

}  // namespace mtm::align
