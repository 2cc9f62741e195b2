#include "genrobust/generation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "genrobust/error.hpp"

namespace genrobust {

namespace {

// Matches row-major storage of an [N, d] tensor.
RowMatrix<double> as_row_matrix(const Tensor& t) {
  return Eigen::Map<const RowMatrix<double>>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                                             static_cast<Eigen::Index>(t.row_size()));
}

bool try_cholesky(const MatrixXd& m, MatrixXd& factor) {
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) return false;
  factor = llt.matrixL();
  for (Eigen::Index i = 0; i < factor.rows(); ++i) {
    if (!std::isfinite(factor(i, i)) || factor(i, i) <= 0.0) return false;
  }
  return factor.allFinite();
}

Tensor to_tensor(const VectorXd& v) { return Tensor::from_eigen(Shape{static_cast<std::size_t>(v.size())}, v); }

Tensor to_tensor(const MatrixXd& m) {
  RowMatrix<double> r = m;
  return Tensor::from_eigen(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, r);
}

MatrixXd to_matrix(const Tensor& t) { return as_row_matrix(t); }

constexpr double kJitterFloor = 1e-10;
constexpr int kJitterRetries = 10;

}  // namespace

MatrixXd PcaModel::project(const Tensor& flat) const {
  if (flat.row_size() != dim()) {
    throw ShapeError("pca expects rows of " + std::to_string(dim()) + " values, got " +
                     std::to_string(flat.row_size()));
  }
  const RowMatrix<double> x = as_row_matrix(flat);
  const auto mu = mean.vector().transpose();
  return (x.rowwise() - mu) * to_matrix(basis);
}

MatrixXd PcaModel::reconstruct(const MatrixXd& z) const {
  if (static_cast<std::size_t>(z.cols()) != k()) throw ShapeError("pca coordinates have the wrong width");
  MatrixXd out = z * to_matrix(basis).transpose();
  out.rowwise() += mean.vector().transpose();
  return out;
}

std::size_t default_pca_components(std::size_t d_flat) { return std::max<std::size_t>(1, std::min<std::size_t>(64, d_flat / 4)); }

PcaModel fit_pca(const Tensor& images, std::size_t k) {
  if (images.rank() < 2) throw ShapeError("fit_pca expects [N, ...] data");
  const std::size_t n = images.rows();
  const std::size_t d = images.row_size();
  if (k < 1 || k > d || k >= n) {
    throw ValueError("fit_pca needs 1 <= k <= d and k < N (k=" + std::to_string(k) + ", d=" + std::to_string(d) +
                     ", N=" + std::to_string(n) + ")");
  }
  require_finite(images, "fit_pca input");
  const RowMatrix<double> x = as_row_matrix(images);
  const VectorXd mu = x.colwise().mean().transpose();
  const MatrixXd centered = x.rowwise() - mu.transpose();
  const MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");
  const auto& values = eig.eigenvalues();
  const auto& vectors = eig.eigenvectors();

  MatrixXd basis(d, k);
  VectorXd variance(k);
  for (std::size_t j = 0; j < k; ++j) {
    const auto src = static_cast<Eigen::Index>(d - 1 - j);  // eigenvalues come ascending
    VectorXd col = vectors.col(src);
    Eigen::Index pivot = 0;
    for (Eigen::Index i = 1; i < col.size(); ++i) {
      if (std::abs(col(i)) > std::abs(col(pivot))) pivot = i;
    }
    if (col(pivot) < 0) col = -col;
    basis.col(static_cast<Eigen::Index>(j)) = col;
    variance(static_cast<Eigen::Index>(j)) = std::max(0.0, values(src));
  }
  return PcaModel{to_tensor(mu), to_tensor(basis), to_tensor(variance)};
}

ClassGaussian factor_gaussian(const VectorXd& mean, const MatrixXd& cov, std::optional<double> jitter) {
  const auto k = cov.rows();
  ClassGaussian g;
  g.mean = to_tensor(mean);
  MatrixXd factor;
  if (try_cholesky(cov, factor)) {
    g.cov_factor = to_tensor(factor);
    return g;
  }
  double j = jitter.value_or(1e-6 * cov.trace() / static_cast<double>(k));
  if (!(j > 0.0) || !std::isfinite(j)) j = kJitterFloor;
  for (int attempt = 0; attempt <= kJitterRetries; ++attempt, j *= 10.0) {
    MatrixXd shifted = cov;
    shifted.diagonal().array() += j;
    if (try_cholesky(shifted, factor)) {
      g.cov_factor = to_tensor(factor);
      g.jitter = j;
      return g;
    }
  }
  throw NumericError("covariance could not be factored even with jitter");
}

GaussianGenerativeModel fit_class_gaussians(const PcaModel& pca, const LabeledDataset& data,
                                            const GaussianFitOptions& options) {
  data.validate();
  if (data.images.row_size() != pca.dim()) throw ShapeError("dataset images do not match the pca dimension");
  const MatrixXd z = pca.project(data.images);
  GaussianGenerativeModel model;
  model.pca = pca;
  model.image = data.image_shape();
  const auto counts = data.class_counts();
  for (std::size_t c = 0; c < data.num_classes; ++c) {
    if (counts[c] == 0) throw ValueError("class " + std::to_string(c) + " has no examples");
    MatrixXd zc(static_cast<Eigen::Index>(counts[c]), z.cols());
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (static_cast<std::size_t>(data.labels[i]) == c) zc.row(r++) = z.row(static_cast<Eigen::Index>(i));
    }
    const VectorXd mu = zc.colwise().mean().transpose();
    const MatrixXd centered = zc.rowwise() - mu.transpose();
    const double divisor = counts[c] > 1 ? double(counts[c] - 1) : 1.0;
    const MatrixXd cov = (centered.transpose() * centered) / divisor;
    model.per_class.push_back(factor_gaussian(mu, cov, options.jitter));
  }
  return model;
}

MatrixXd sample_latent(const GaussianGenerativeModel& model, std::size_t cls, std::size_t n, Rng& rng) {
  if (cls >= model.num_classes()) throw ValueError("class " + std::to_string(cls) + " out of range");
  const auto& g = model.per_class[cls];
  const auto k = static_cast<Eigen::Index>(g.mean.size());
  MatrixXd eps(static_cast<Eigen::Index>(n), k);
  for (Eigen::Index i = 0; i < eps.rows(); ++i) {
    for (Eigen::Index j = 0; j < k; ++j) eps(i, j) = rng.normal();
  }
  MatrixXd z = eps * to_matrix(g.cov_factor).transpose();
  z.rowwise() += g.mean.vector().transpose();
  return z;
}

Tensor sample(const GaussianGenerativeModel& model, std::size_t cls, std::size_t n, Rng& rng) {
  if (model.image.size() != model.pca.dim()) throw ShapeError("generator image shape does not match its pca");
  const MatrixXd x = model.pca.reconstruct(sample_latent(model, cls, n, rng));
  Tensor out(model.image.batch(n));
  auto data = out.data();
  const auto d = model.pca.dim();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      data[i * d + j] = std::clamp(x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), 0.0, 1.0);
    }
  }
  return out;
}

LabeledDataset sample_balanced(const GaussianGenerativeModel& model, std::size_t per_class, Rng& rng) {
  LabeledDataset out;
  out.num_classes = model.num_classes();
  out.images = Tensor(model.image.batch(0));
  for (std::size_t c = 0; c < model.num_classes(); ++c) {
    out.images = concat_rows(out.images, sample(model, c, per_class, rng));
    out.labels.insert(out.labels.end(), per_class, static_cast<int>(c));
  }
  return out;
}

namespace {

std::string image_shape_string(const ImageShape& s) {
  return std::to_string(s.channels) + "," + std::to_string(s.height) + "," + std::to_string(s.width);
}

ImageShape parse_image_shape(const std::string& text) {
  ImageShape s;
  if (std::sscanf(text.c_str(), "%zu,%zu,%zu", &s.channels, &s.height, &s.width) != 3) {
    throw FormatError("bad image shape metadata '" + text + "'");
  }
  return s;
}

}  // namespace

void save_gaussian_model(const std::string& path, const GaussianGenerativeModel& model,
                         const std::string& config_hash) {
  TensorContainer c;
  c.set_meta("kind", "gaussian-model");
  c.set_meta("config_hash", config_hash);
  c.set_meta("image_shape", image_shape_string(model.image));
  c.add("pca/mean", model.pca.mean);
  c.add("pca/basis", model.pca.basis);
  c.add("pca/explained_variance", model.pca.explained_variance);
  for (std::size_t k = 0; k < model.num_classes(); ++k) {
    const auto prefix = "class/" + std::to_string(k) + "/";
    c.add(prefix + "mean", model.per_class[k].mean);
    c.add(prefix + "cov_factor", model.per_class[k].cov_factor);
    c.add(prefix + "jitter", Tensor::scalar(model.per_class[k].jitter));
  }
  save_container(path, c);
}

GaussianGenerativeModel load_gaussian_model(const std::string& path) {
  const auto c = load_container(path);
  if (c.require_meta("kind") != "gaussian-model") throw FormatError("'" + path + "' is not a gaussian model file");
  GaussianGenerativeModel model;
  model.image = parse_image_shape(c.require_meta("image_shape"));
  model.pca.mean = c.f64("pca/mean");
  model.pca.basis = c.f64("pca/basis");
  model.pca.explained_variance = c.f64("pca/explained_variance");
  for (std::size_t k = 0;; ++k) {
    const auto prefix = "class/" + std::to_string(k) + "/";
    if (!c.contains(prefix + "mean")) break;
    ClassGaussian g{c.f64(prefix + "mean"), c.f64(prefix + "cov_factor"), c.f64(prefix + "jitter").item()};
    model.per_class.push_back(std::move(g));
  }
  if (model.per_class.empty()) throw FormatError("gaussian model file has no classes");
  return model;
}

void ExternalSampleSet::validate() const {
  if (images.rank() != 4) throw ShapeError("sample images must be [N,C,H,W]");
  require_finite(images, "sample images");
  for (double v : images.data()) {
    if (v < 0.0 || v > 1.0) throw ValueError("sample pixel outside [0,1]");
  }
  if (labels && labels->size() != size()) throw ShapeError("sample label count does not match image count");
  if (labels) {
    for (int y : *labels) {
      if (y < 0) throw ValueError("negative sample label");
    }
  }
}

LabeledDataset ExternalSampleSet::as_labeled(std::size_t num_classes) const {
  validate();
  if (!labels) throw ValueError("sample set '" + provenance + "' carries no labels");
  for (int y : *labels) {
    if (static_cast<std::size_t>(y) >= num_classes) {
      throw ValueError("sample label " + std::to_string(y) + " is not below the class count " +
                       std::to_string(num_classes));
    }
  }
  LabeledDataset out{images, *labels, num_classes};
  return out;
}

void save_external_samples(const std::string& path, const ExternalSampleSet& set, const std::string& config_hash) {
  set.validate();
  TensorContainer c;
  c.set_meta("kind", "samples");
  c.set_meta("provenance", set.provenance);
  c.set_meta("config_hash", config_hash);
  c.add("images", set.images);
  if (set.labels) {
    std::vector<std::uint32_t> y(set.labels->begin(), set.labels->end());
    const std::size_t n = y.size();
    c.add("labels", IndexTensor(Shape{n}, std::move(y)));
  }
  save_container(path, c);
}

ExternalSampleSet load_external_samples(const std::string& path) {
  const auto c = load_container(path);
  ExternalSampleSet set;
  set.provenance = c.meta("provenance").value_or("");
  if (c.contains("images")) {
    const auto& stored = c.at("images");
    if (const auto* f = std::get_if<TensorF>(&stored)) {
      set.images = f->cast<double>();
    } else {
      set.images = c.f64("images");
    }
  } else {
    throw FormatError("'" + path + "' has no images entry");
  }
  if (c.contains("labels")) {
    const auto& y = c.u32("labels");
    set.labels.emplace(y.data().begin(), y.data().end());
  }
  set.validate();
  return set;
}

}  // namespace genrobust
