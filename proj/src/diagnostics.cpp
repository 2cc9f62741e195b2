#include "genrobust/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <Eigen/Eigenvalues>

#include "genrobust/csv.hpp"
#include "genrobust/parallel.hpp"

namespace genrobust {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

struct Nearest {
  double distance = std::numeric_limits<double>::infinity();
  std::size_t index = 0;
};

/// Strictly-smaller updates keep the lowest index on ties.
Nearest nearest_in(std::span<const double> q, const Tensor& refs, std::size_t skip = SIZE_MAX) {
  Nearest best;
  for (std::size_t r = 0; r < refs.rows(); ++r) {
    if (r == skip) continue;
    const double d = squared_distance(q, refs.row(r));
    if (d < best.distance) best = {d, r};
  }
  return best;
}

MatrixXd covariance(const MatrixXd& x) {
  const MatrixXd centered = x.rowwise() - x.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

MatrixXd to_matrix(const Tensor& t) {
  return Eigen::Map<const RowMatrix<double>>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                                             static_cast<Eigen::Index>(t.row_size()));
}

/// Symmetric PSD square root; eigenvalues in [-tol, 0) are clamped, lower ones rejected.
MatrixXd psd_sqrt(const MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig((m + m.transpose()) / 2.0);
  if (eig.info() != Eigen::Success) throw NumericError(std::string(what) + ": eigendecomposition failed");
  VectorXd values = eig.eigenvalues();
  const double tol = 1e-8 * std::max(1.0, values.cwiseAbs().maxCoeff());
  for (auto& v : values) {
    if (v < -tol) throw NumericError(std::string(what) + ": matrix is not positive semi-definite");
    v = std::sqrt(std::max(0.0, v));
  }
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

FeatureEmbedder make_embedder(const Classifier& backbone, const Tensor& fit_images, std::size_t k) {
  const Tensor f = features(backbone, fit_images, true);
  const std::size_t n = f.rows();
  if (n < 2) throw ValueError("embedder needs at least two fitting images");
  const std::size_t comps = std::min({k, f.row_size(), n - 1});
  return FeatureEmbedder{backbone, fit_pca(f, comps)};
}

Tensor embed(const FeatureEmbedder& embedder, const Tensor& images) {
  const MatrixXd z = embedder.pca.project(features(embedder.backbone, images, true));
  RowMatrix<double> r = z;
  return Tensor::from_eigen(Shape{static_cast<std::size_t>(z.rows()), static_cast<std::size_t>(z.cols())}, r);
}

std::vector<std::size_t> nearest_neighbors(const Tensor& queries, const Tensor& refs) {
  if (refs.rows() == 0) throw ValueError("nearest neighbour search over an empty set");
  if (queries.row_size() != refs.row_size()) throw ShapeError("query and reference widths differ");
  std::vector<std::size_t> out(queries.rows());
  parallel_for(queries.rows(), [&](std::size_t i) { out[i] = nearest_in(queries.row(i), refs).index; });
  return out;
}

Complementarity complementarity_coverage(const Tensor& train, const Tensor& test, const Tensor& gen) {
  const std::size_t n = gen.rows();
  if (train.rows() != n || test.rows() != n) throw ShapeError("complementarity needs equal-size sets");
  if (n < 2) throw ValueError("complementarity needs N >= 2");
  if (train.row_size() != gen.row_size() || test.row_size() != gen.row_size()) {
    throw ShapeError("complementarity sets have different widths");
  }
  std::vector<int> closest(n);
  std::vector<std::size_t> nn_train(n), nn_test(n);
  parallel_for(n, [&](std::size_t i) {
    const auto q = gen.row(i);
    const Nearest a = nearest_in(q, train);
    const Nearest b = nearest_in(q, test);
    const Nearest c = nearest_in(q, gen, i);
    int s = 0;
    double best = a.distance;
    if (b.distance < best) {
      s = 1;
      best = b.distance;
    }
    if (c.distance < best) s = 2;
    closest[i] = s;
    nn_train[i] = a.index;
    nn_test[i] = b.index;
  });
  std::size_t counts[3] = {0, 0, 0};
  for (int s : closest) ++counts[s];
  const std::set<std::size_t> unique_train(nn_train.begin(), nn_train.end());
  const std::set<std::size_t> unique_test(nn_test.begin(), nn_test.end());
  const double dn = static_cast<double>(n);
  return Complementarity{double(counts[0]) / dn, double(counts[1]) / dn, double(counts[2]) / dn,
                         double(unique_train.size()) / dn, double(unique_test.size()) / dn};
}

double fid(const Tensor& features_a, const Tensor& features_b) {
  if (features_a.row_size() != features_b.row_size()) throw ShapeError("fid feature widths differ");
  const std::size_t k = features_a.row_size();
  if (features_a.rows() <= k || features_b.rows() <= k) throw ValueError("fid needs more samples than features");
  require_finite(features_a, "fid features");
  require_finite(features_b, "fid features");
  const MatrixXd a = to_matrix(features_a);
  const MatrixXd b = to_matrix(features_b);
  const VectorXd diff = (a.colwise().mean() - b.colwise().mean()).transpose();
  const MatrixXd sa = covariance(a);
  const MatrixXd sb = covariance(b);
  if (!sa.allFinite() || !sb.allFinite()) throw NumericError("fid covariance is not finite");
  const MatrixXd root_a = psd_sqrt(sa, "fid");
  const MatrixXd cross = psd_sqrt(root_a * sb * root_a, "fid");
  const double value = diff.squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross.trace();
  return std::max(0.0, value);
}

ScoreSummary inception_score(const Tensor& probabilities, std::size_t splits) {
  const std::size_t n = probabilities.rows();
  if (splits == 0 || n < 2 * splits) throw ValueError("inception score needs at least two images per split");
  std::vector<double> scores;
  for (std::size_t s = 0; s < splits; ++s) {
    const std::size_t begin = s * n / splits;
    const std::size_t end = (s + 1) * n / splits;
    if (begin == end) throw ValueError("empty inception score split");
    const MatrixXd p = to_matrix(probabilities.slice_rows(begin, end));
    const Eigen::RowVectorXd marginal = p.colwise().mean();
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        const double pij = p(i, j);
        if (pij > 0.0) kl += pij * (std::log(pij) - std::log(marginal(j)));
      }
    }
    scores.push_back(std::exp(kl / double(p.rows())));
  }
  ScoreSummary out;
  out.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / double(scores.size());
  double var = 0.0;
  for (double v : scores) var += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(var / double(scores.size()));
  return out;
}

ScoreSummary is_score(const Classifier& classifier, const Tensor& images, std::size_t splits) {
  const Tensor z = logits(classifier, images, true);
  const RowMatrix<double> p = softmax_rows<double>(z.matrix());
  return inception_score(Tensor::from_eigen(z.shape(), p), splits);
}

double uniform_unique_nn_baseline(std::size_t n, Rng& rng) {
  if (n < 2) throw ValueError("uniform baseline needs N >= 2");
  std::vector<double> a(n), b(n);
  for (auto& v : a) v = rng.uniform();
  for (auto& v : b) v = rng.uniform();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return b[i] < b[j] || (b[i] == b[j] && i < j); });
  std::vector<double> sorted(n);
  for (std::size_t i = 0; i < n; ++i) sorted[i] = b[order[i]];
  std::vector<char> hit(n, 0);
  for (double q : a) {
    const auto pos = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), q) - sorted.begin());
    std::size_t best = pos < n ? pos : n - 1;
    if (pos > 0) {
      const double left = q - sorted[pos - 1];
      const double right = pos < n ? sorted[pos] - q : std::numeric_limits<double>::infinity();
      if (left < right || (left == right && order[pos - 1] < order[pos])) best = pos - 1;
    }
    hit[order[best]] = 1;
  }
  return double(std::count(hit.begin(), hit.end(), 1)) / double(n);
}

LandscapeGrid loss_landscape(const Classifier& model, const Tensor& x, int label, const PerturbationSet& set,
                             double half_extent, std::size_t resolution, Rng& rng, bool use_ema) {
  if (x.rank() != 4 || x.dim(0) != 1) throw ShapeError("loss_landscape expects a single example [1,C,H,W]");
  if (resolution < 2) throw ValueError("landscape resolution must be at least 2");
  const std::vector<int> labels{label};
  AttackConfig cfg;
  cfg.steps = 40;
  cfg.step_size = 2.5 * set.epsilon / 40.0;
  cfg.optimizer = InnerOptimizer::SignSgd;
  cfg.objective = AttackObjective::Margin;
  cfg.seed = rng.seed();
  AttackReference ref;
  ref.labels = labels;
  LandscapeGrid grid;
  grid.u = pgd(model, x, ref, set, cfg, use_ema).delta;
  grid.v = Tensor(x.shape());
  for (auto& e : grid.v.data()) e = rng.coin() ? 1.0 : -1.0;
  const double scale = set.norm == Norm::Linf ? set.epsilon : set.epsilon / std::sqrt(double(grid.v.size()));
  for (auto& e : grid.v.data()) e *= scale;

  grid.coords.resize(resolution);
  for (std::size_t i = 0; i < resolution; ++i) {
    grid.coords[i] = -half_extent + 2.0 * half_extent * double(i) / double(resolution - 1);
  }
  const std::size_t points = resolution * resolution;
  Tensor batch(Shape{points, x.dim(1), x.dim(2), x.dim(3)});
  for (std::size_t i = 0; i < resolution; ++i) {
    for (std::size_t j = 0; j < resolution; ++j) {
      auto row = batch.row(i * resolution + j);
      for (std::size_t e = 0; e < row.size(); ++e) {
        row[e] = std::clamp(x[e] + grid.coords[i] * grid.u[e] + grid.coords[j] * grid.v[e], 0.0, 1.0);
      }
    }
  }
  const std::vector<int> all_labels(points, label);
  const Tensor margins = margin_loss(logits(model, batch, use_ema), all_labels);
  grid.values.resize(static_cast<Eigen::Index>(resolution), static_cast<Eigen::Index>(resolution));
  for (std::size_t i = 0; i < resolution; ++i) {
    for (std::size_t j = 0; j < resolution; ++j) {
      grid.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = margins[i * resolution + j];
    }
  }
  return grid;
}

void write_landscape_csv(const std::string& path, const LandscapeGrid& grid) {
  std::vector<std::string> header{"a\\b"};
  for (double c : grid.coords) header.push_back(format_double(c));
  CsvWriter csv(header);
  for (std::size_t i = 0; i < grid.coords.size(); ++i) {
    std::vector<std::string> row{format_double(grid.coords[i])};
    for (std::size_t j = 0; j < grid.coords.size(); ++j) {
      row.push_back(format_double(grid.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    }
    csv.row(row);
  }
  csv.save(path);
}

DiagnosticsReport diagnose(const FeatureEmbedder& embedder, const Classifier& classifier, const Tensor& train,
                           const Tensor& test, const Tensor& gen, std::size_t n, Rng& rng, std::size_t is_splits) {
  auto pick = [&](const Tensor& images, std::uint64_t tag) {
    if (images.rows() < n) throw ValueError("diagnostics needs at least N images in every set");
    Rng r = rng.child({tag});
    auto order = r.permutation(images.rows());
    order.resize(n);
    return images.gather_rows(order);
  };
  const Tensor tr = pick(train, 1), te = pick(test, 2), ge = pick(gen, 3);
  const Tensor etr = embed(embedder, tr), ete = embed(embedder, te), ege = embed(embedder, ge);
  DiagnosticsReport report;
  report.complementarity = complementarity_coverage(etr, ete, ege);
  report.fid = fid(ege, etr);
  const auto is = is_score(classifier, ge, is_splits);
  report.is_mean = is.mean;
  report.is_std = is.std;
  return report;
}

void write_diagnostics_csv(const std::string& path, const DiagnosticsReport& r) {
  CsvWriter csv({"c_train", "c_test", "c_self", "v_train", "v_test", "fid", "is_mean", "is_std"});
  const auto& c = r.complementarity;
  csv.row({format_double(c.c_train), format_double(c.c_test), format_double(c.c_self), format_double(c.v_train),
           format_double(c.v_test), format_double(r.fid), format_double(r.is_mean), format_double(r.is_std)});
  csv.save(path);
}

}  // namespace genrobust
