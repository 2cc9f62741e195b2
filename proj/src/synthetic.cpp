#include "genrobust/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/QR>

namespace genrobust {

std::string to_string(SyntheticFamily family) {
  return family == SyntheticFamily::Gaussian ? "gaussian" : "warped_mixture";
}

SyntheticFamily synthetic_family_from_string(const std::string& name) {
  if (name == "gaussian") return SyntheticFamily::Gaussian;
  if (name == "warped_mixture") return SyntheticFamily::WarpedMixture;
  throw ConfigError("unknown synthetic family '" + name + "' (expected gaussian or warped_mixture)");
}

void SyntheticDatasetSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic spec needs at least two classes");
  if (image.size() == 0) throw ConfigError("synthetic image shape must be non-empty");
  if (latent_dim < num_classes) throw ConfigError("latent_dim must be at least num_classes");
  if (latent_dim > image.size()) throw ConfigError("latent_dim cannot exceed the pixel count");
  if (!(latent_std >= 0.0) || !(separation >= 0.0) || !(pixel_noise >= 0.0)) {
    throw ConfigError("synthetic scales must be non-negative");
  }
  if (family == SyntheticFamily::WarpedMixture && components < 1) {
    throw ConfigError("warped_mixture needs at least one component");
  }
  if (!(std::abs(warp) < 1.0)) throw ConfigError("warp must lie in (-1, 1) to stay monotone");
}

SyntheticDistribution::SyntheticDistribution(const SyntheticDatasetSpec& spec) : spec_(spec) {
  spec_.validate();
  const auto d = static_cast<Eigen::Index>(spec_.image.size());
  const auto r = static_cast<Eigen::Index>(spec_.latent_dim);
  Rng rng(derive_seed(spec_.seed, {0xba5e}));
  MatrixXd g(d, r);
  for (Eigen::Index j = 0; j < r; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) g(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<MatrixXd> qr(g);
  basis_ = qr.householderQ() * MatrixXd::Identity(d, r);

  const double offset = spec_.separation * spec_.latent_std / std::numbers::sqrt2;
  Rng comp_rng(derive_seed(spec_.seed, {0xc0c0}));
  const std::size_t m = spec_.family == SyntheticFamily::Gaussian ? 1 : spec_.components;
  for (std::size_t c = 0; c < spec_.num_classes; ++c) {
    VectorXd base = VectorXd::Zero(r);
    base(static_cast<Eigen::Index>(c)) = offset;
    std::vector<VectorXd> comps;
    for (std::size_t k = 0; k < m; ++k) {
      VectorXd mu = base;
      if (spec_.family == SyntheticFamily::WarpedMixture) {
        for (Eigen::Index j = 0; j < r; ++j) mu(j) += spec_.component_spread * spec_.latent_std * comp_rng.normal();
      }
      comps.push_back(mu);
    }
    means_.push_back(std::move(comps));
  }
}

void SyntheticDistribution::draw(std::size_t cls, std::span<double> out, Rng& rng) const {
  const auto& comps = means_[cls];
  const VectorXd& mu = comps.size() == 1 ? comps.front() : comps[rng.uniform_index(comps.size())];
  VectorXd z(mu.size());
  for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = mu(j) + spec_.latent_std * rng.normal();
  const VectorXd x = basis_ * z;
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = 0.5 + x(static_cast<Eigen::Index>(i));
    if (spec_.family == SyntheticFamily::WarpedMixture) v += spec_.warp * std::sin(two_pi * v) / two_pi;
    if (spec_.pixel_noise > 0.0) v += spec_.pixel_noise * rng.normal();
    out[i] = std::clamp(v, 0.0, 1.0);
  }
}

LabeledDataset SyntheticDistribution::sample_class(std::size_t cls, std::size_t n, Rng& rng) const {
  if (cls >= spec_.num_classes) throw ValueError("class out of range");
  LabeledDataset out;
  out.num_classes = spec_.num_classes;
  out.images = Tensor(spec_.image.batch(n));
  out.labels.assign(n, static_cast<int>(cls));
  for (std::size_t i = 0; i < n; ++i) draw(cls, out.images.row(i), rng);
  return out;
}

LabeledDataset SyntheticDistribution::sample(std::size_t n, Rng& rng) const {
  const std::size_t c = spec_.num_classes;
  std::vector<int> labels;
  for (std::size_t k = 0; k < c; ++k) labels.insert(labels.end(), n / c + (k < n % c ? 1 : 0), static_cast<int>(k));
  const auto order = rng.permutation(n);
  LabeledDataset out;
  out.num_classes = c;
  out.images = Tensor(spec_.image.batch(n));
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = labels[order[i]];
    draw(static_cast<std::size_t>(out.labels[i]), out.images.row(i), rng);
  }
  return out;
}

SyntheticSplits make_synthetic_dataset(const SyntheticDatasetSpec& spec) {
  SyntheticDistribution dist(spec);
  Rng train_rng(derive_seed(spec.seed, {1})), test_rng(derive_seed(spec.seed, {2})),
      holdout_rng(derive_seed(spec.seed, {3}));
  return SyntheticSplits{dist.sample(spec.train_size, train_rng), dist.sample(spec.test_size, test_rng),
                         dist.sample(spec.holdout_size, holdout_rng)};
}

}  // namespace genrobust
